#include "crowdflow/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace crowdflow {

using json = nlohmann::json;

ModelInput to_model_input(const Sample& sample, const DatasetManifest& manifest) {
    ModelInput in;
    for (const auto& e : sample.sequential) {
        in.seq_flows.push_back(normalize_flow(e.flow, manifest.flow_min, manifest.flow_max));
        in.seq_ext.push_back(encode_external(e.external));
    }
    for (const auto& e : sample.periodic) {
        in.per_flows.push_back(normalize_flow(e.flow, manifest.flow_min, manifest.flow_max));
        in.per_ext.push_back(encode_external(e.external));
    }
    in.ext_sum = sample.ext_sum;
    in.target = normalize_flow(sample.target, manifest.flow_min, manifest.flow_max);
    return in;
}

Var euclidean_loss(Var pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("euclidean_loss: prediction " + shape_to_string(pred.shape()) + " vs target " +
                                    shape_to_string(target.shape()));
    }
    return mean_squared_error(pred, pred.tape().constant(target));
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
    for (const Parameter* p : params) {
        if (p->grad.shape() != p->value.shape()) {
            throw InvalidState("adam_step: parameter '" + p->name + "' has no gradient");
        }
    }
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.emplace_back(p->value.shape());
            state.v.emplace_back(p->value.shape());
        }
    }
    if (state.m.size() != params.size()) {
        throw InvalidState("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                           std::to_string(params.size()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto value = params[k]->value.data();
        auto grad = params[k]->grad.data();
        auto m = state.m[k].data();
        auto v = state.v[k].data();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

SpnConfig make_spn_config(const DatasetManifest& manifest, const TrainConfig& config) {
    SpnConfig c;
    c.height = manifest.height;
    c.width = manifest.width;
    c.intervals_per_day = manifest.intervals_per_day;
    c.ext_len = manifest.ext_len();
    c.seq_len = config.seq_len;
    c.period_len = config.period_len;
    c.residual_units = config.residual_units;
    c.channels = config.channels;
    c.ext_hidden = config.ext_hidden;
    c.fusion_hidden = config.fusion_hidden;
    return c;
}

SampleWindow make_window(const DatasetManifest& manifest, const TrainConfig& config) {
    return SampleWindow{config.seq_len, config.period_len, manifest.intervals_per_day};
}

SampleSplit split_samples(const Dataset& dataset, const SampleWindow& window, double validation_fraction) {
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
        throw std::invalid_argument("validation_fraction must be in [0, 1)");
    }
    SampleSet set = build_samples(dataset.flows, dataset.externals, window);
    const auto& m = dataset.manifest;
    const std::size_t train_days = (m.split_index + m.intervals_per_day - 1) / m.intervals_per_day;
    const auto val_days = static_cast<std::size_t>(std::floor(static_cast<double>(train_days) * validation_fraction));
    const std::size_t first_val_day = train_days - val_days;
    SampleSplit out;
    out.skipped = set.skipped;
    for (auto& s : set.samples) {
        if (s.target_index >= m.split_index) {
            out.test.push_back(std::move(s));
        } else if (s.day >= first_val_day) {
            out.validation.push_back(std::move(s));
        } else {
            out.train.push_back(std::move(s));
        }
    }
    return out;
}

std::string config_to_json(const SpnConfig& c) {
    json j = {
        {"height", c.height},
        {"width", c.width},
        {"seq_len", c.seq_len},
        {"period_len", c.period_len},
        {"residual_units", c.residual_units},
        {"intervals_per_day", c.intervals_per_day},
        {"ext_len", c.ext_len},
        {"channels", c.channels},
        {"ext_hidden", c.ext_hidden},
        {"fusion_hidden", c.fusion_hidden},
    };
    return j.dump();
}

SpnConfig config_from_json(const std::string& text) {
    const json j = json::parse(text);
    SpnConfig c;
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.period_len = j.at("period_len").get<std::size_t>();
    c.residual_units = j.at("residual_units").get<std::size_t>();
    c.intervals_per_day = j.at("intervals_per_day").get<std::size_t>();
    c.ext_len = j.at("ext_len").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.ext_hidden = j.at("ext_hidden").get<std::size_t>();
    c.fusion_hidden = j.at("fusion_hidden").get<std::size_t>();
    return c;
}

std::string TrainReport::to_json(bool include_timing) const {
    json j = {
        {"seed", seed},
        {"variant", variant},
        {"config", json::parse(config_json)},
        {"train_samples", train_samples},
        {"validation_samples", validation_samples},
        {"test_samples", test_samples},
        {"initial_loss", initial_loss},
        {"epoch_loss", epoch_loss},
        {"epoch_validation_rmse", epoch_validation_rmse},
        {"best_epoch", best_epoch},
        {"best_validation_rmse", best_validation_rmse},
        {"final_train_rmse", final_train_rmse},
    };
    if (include_timing) {
        j["wall_seconds"] = wall_seconds;
    }
    return j.dump(2);
}

namespace {

constexpr std::size_t kEvalBatch = 64;

ModelInput gather(std::span<const ModelInput> inputs, std::span<const std::size_t> indices) {
    std::vector<ModelInput> picked;
    picked.reserve(indices.size());
    for (std::size_t i : indices) {
        picked.push_back(inputs[i]);
    }
    return stack_inputs(picked);
}

double mean_loss(Model& model, std::span<const ModelInput> inputs) {
    double acc = 0.0;
    for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
        const std::size_t count = std::min(kEvalBatch, inputs.size() - start);
        const ModelInput batch = stack_inputs(inputs.subspan(start, count));
        Tape tape;
        acc += euclidean_loss(forward(tape, batch, model).prediction, batch.target).value()[0] *
               static_cast<double>(count);
    }
    return acc / static_cast<double>(inputs.size());
}

} // namespace

double normalized_rmse(Model& model, std::span<const ModelInput> inputs) {
    if (inputs.empty()) {
        throw std::invalid_argument("normalized_rmse: no inputs");
    }
    return std::sqrt(mean_loss(model, inputs));
}

TrainResult train_on_samples(const std::vector<Sample>& train_samples, const std::vector<Sample>& validation_samples,
                             const DatasetManifest& manifest, const TrainConfig& config, Variant variant,
                             const EpochCallback& on_epoch) {
    if (train_samples.empty()) {
        throw std::invalid_argument("train: no training samples");
    }
    if (config.batch_size == 0) {
        throw std::invalid_argument("train: batch size must be positive");
    }
    const auto started = std::chrono::steady_clock::now();
    const SpnConfig spn = make_spn_config(manifest, config);

    TrainResult result{make_model(spn, variant, config.seed), {}, {}};
    Model& model = result.model;
    ParamList params = model.params.list();

    std::vector<ModelInput> inputs;
    inputs.reserve(train_samples.size());
    for (const auto& s : train_samples) {
        inputs.push_back(to_model_input(s, manifest));
    }

    TrainReport& report = result.report;
    report.seed = config.seed;
    report.variant = std::string(variant_name(variant));
    report.config_json = config_to_json(spn);
    report.train_samples = train_samples.size();
    report.validation_samples = validation_samples.size();
    report.initial_loss = mean_loss(model, inputs);

    AdamState adam;
    adam.lr = config.lr;
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.eps = config.eps;

    std::mt19937_64 shuffle_rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::optional<Model> best;
    double best_rmse = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            for (Parameter* p : params) {
                p->zero_grad();
            }
            const ModelInput batch = gather(inputs, std::span(order).subspan(start, stop - start));
            Tape tape;
            // Mean over the batch, so gradients are already averaged per sample.
            Var loss = euclidean_loss(forward(tape, batch, model).prediction, batch.target);
            epoch_loss += loss.value()[0] * static_cast<double>(stop - start);
            tape.backward(loss);
            adam_step(params, adam);
        }
        epoch_loss /= static_cast<double>(inputs.size());
        if (!std::isfinite(epoch_loss)) {
            throw std::runtime_error("train: loss became non-finite at epoch " + std::to_string(epoch));
        }
        report.epoch_loss.push_back(epoch_loss);

        std::optional<double> val_rmse;
        if (!validation_samples.empty()) {
            val_rmse = evaluate_rmse(model, validation_samples, manifest);
            report.epoch_validation_rmse.push_back(*val_rmse);
            if (*val_rmse < best_rmse) {
                best_rmse = *val_rmse;
                best = model;
                report.best_epoch = epoch;
            }
        }
        if (on_epoch) {
            on_epoch(epoch, epoch_loss, val_rmse);
        }
    }

    report.best_validation_rmse = best ? best_rmse : 0.0;
    report.final_train_rmse = normalized_rmse(model, inputs);
    result.best = best ? std::move(*best) : model;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (config.checkpoint_dir) {
        save_checkpoint(result.model, *config.checkpoint_dir / "final");
        save_checkpoint(result.best, *config.checkpoint_dir / "best");
    }
    return result;
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, Variant variant, const EpochCallback& on_epoch) {
    SampleSplit split = split_samples(dataset, make_window(dataset.manifest, config), config.validation_fraction);
    if (config.train_limit > 0 && split.train.size() > config.train_limit) {
        split.train.resize(config.train_limit);
    }
    TrainResult result = train_on_samples(split.train, split.validation, dataset.manifest, config, variant, on_epoch);
    result.report.test_samples = split.test.size();
    return result;
}

double evaluate_rmse(Model& model, const std::vector<Sample>& samples, const DatasetManifest& manifest,
                     const EvalOptions& options) {
    if (samples.empty()) {
        throw std::invalid_argument("evaluate_rmse: empty test set");
    }
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
        const std::size_t stop = std::min(samples.size(), start + kEvalBatch);
        std::vector<ModelInput> inputs;
        for (std::size_t k = start; k < stop; ++k) {
            inputs.push_back(to_model_input(samples[k], manifest));
        }
        const Tensor pred =
            denormalize_flow(predict(stack_inputs(inputs), model), manifest.flow_min, manifest.flow_max);
        std::size_t offset = 0;
        for (std::size_t k = start; k < stop; ++k) {
            const Tensor& truth = samples[k].target.values;
            for (std::size_t i = 0; i < truth.size(); ++i) {
                const double p = options.clamp_nonnegative ? std::max(0.0, pred[offset + i]) : pred[offset + i];
                const double d = p - truth[i];
                acc += d * d;
            }
            offset += truth.size();
            count += truth.size();
        }
    }
    return std::sqrt(acc / static_cast<double>(count));
}

} // namespace crowdflow
