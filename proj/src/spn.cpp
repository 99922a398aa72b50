#include "crowdflow/spn.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace crowdflow {

SpnConfig taxibj_config() {
    SpnConfig c;
    c.height = 32;
    c.width = 32;
    c.seq_len = 3;
    c.period_len = 2;
    c.residual_units = 12;
    c.ext_len = 16 + 2 + 41;
    return c;
}

SpnConfig bikenyc_config() {
    SpnConfig c;
    c.height = 16;
    c.width = 8;
    c.seq_len = 5;
    c.period_len = 7;
    c.residual_units = 4;
    c.ext_len = 16 + 2 + 20;
    return c;
}

std::string_view variant_name(Variant v) {
    switch (v) {
    case Variant::PCNN: return "PCNN";
    case Variant::SCNN: return "SCNN";
    case Variant::PRNN_NO_ATTN: return "PRNN-w/o-Attention";
    case Variant::PRNN: return "PRNN";
    case Variant::SRNN_NO_ATTN: return "SRNN-w/o-Attention";
    case Variant::SRNN: return "SRNN";
    case Variant::SPN_NO_FUSION: return "SPN-w/o-Fusion";
    case Variant::SPN: return "SPN";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    auto normalize = [](std::string_view s) {
        std::string out;
        for (char ch : s) {
            if (std::isalnum(static_cast<unsigned char>(ch))) {
                out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
            }
        }
        return out;
    };
    const std::string key = normalize(name);
    for (Variant v : kAllVariants) {
        if (key == normalize(variant_name(v))) {
            return v;
        }
    }
    if (key == "PRNNNOATTN") return Variant::PRNN_NO_ATTN;
    if (key == "SRNNNOATTN") return Variant::SRNN_NO_ATTN;
    if (key == "SPNNOFUSION") return Variant::SPN_NO_FUSION;
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

bool uses_sequential(Variant v) {
    return v == Variant::SCNN || v == Variant::SRNN_NO_ATTN || v == Variant::SRNN || v == Variant::SPN_NO_FUSION ||
           v == Variant::SPN;
}

bool uses_periodic(Variant v) {
    return v == Variant::PCNN || v == Variant::PRNN_NO_ATTN || v == Variant::PRNN || v == Variant::SPN_NO_FUSION ||
           v == Variant::SPN;
}

void validate(const SpnConfig& config, Variant variant) {
    if (config.height == 0 || config.width == 0) {
        throw std::invalid_argument("config: grid dimensions must be positive");
    }
    if (uses_sequential(variant) && config.seq_len == 0) {
        throw std::invalid_argument("config: sequential length must be >= 1 for " + std::string(variant_name(variant)));
    }
    if (uses_periodic(variant) && config.period_len == 0) {
        throw std::invalid_argument("config: periodic length must be >= 1 for " + std::string(variant_name(variant)));
    }
    if (config.intervals_per_day == 0 || config.ext_len == 0 || config.channels == 0 || config.ext_hidden == 0 ||
        config.fusion_hidden == 0) {
        throw std::invalid_argument("config: widths and intervals_per_day must be positive");
    }
}

ParamList SpnParams::list() {
    ParamList out;
    flow.collect(out);
    ext.collect(out);
    for (auto* acfm : {&seq_acfm, &per_acfm}) {
        if (*acfm) {
            (*acfm)->collect(out);
        }
    }
    for (auto* lstm : {&seq_lstm, &per_lstm}) {
        if (*lstm) {
            (*lstm)->collect(out);
        }
    }
    for (auto* conv : {&seq_post, &per_post, &seq_concat, &per_concat, &output}) {
        if (*conv) {
            (*conv)->collect(out);
        }
    }
    if (fusion) {
        fusion->collect(out);
    }
    return out;
}

SpnParams init_params(const SpnConfig& config, Variant variant, std::uint64_t seed) {
    validate(config, variant);
    std::mt19937_64 rng(seed);
    const std::size_t c = config.channels;
    const std::size_t feature = 2 * c;
    SpnParams p;
    p.flow = FlowExtractorParams::create("flow", c, config.residual_units, rng);
    p.ext = ExternalEncoderParams::create("ext", config.ext_len, config.ext_hidden, c, config.height, config.width, rng);

    auto make_branch = [&](const std::string& prefix, std::size_t steps, std::optional<AcfmParams>& acfm,
                           std::optional<ConvLstmParams>& lstm, std::optional<ConvParams>& post,
                           std::optional<ConvParams>& concat_conv, bool attention, bool recurrent) {
        if (!recurrent) {
            concat_conv = ConvParams::create(prefix + ".concat", 2, steps * feature, 3, rng);
            return;
        }
        if (attention) {
            acfm = AcfmParams::create(prefix + ".acfm", feature, c, rng);
        } else {
            lstm = ConvLstmParams::create(prefix + ".lstm", feature, c, rng);
        }
        post = ConvParams::create(prefix + ".post", c, c, 3, rng);
    };

    switch (variant) {
    case Variant::SCNN:
        make_branch("seq", config.seq_len, p.seq_acfm, p.seq_lstm, p.seq_post, p.seq_concat, false, false);
        break;
    case Variant::PCNN:
        make_branch("per", config.period_len, p.per_acfm, p.per_lstm, p.per_post, p.per_concat, false, false);
        break;
    case Variant::SRNN:
    case Variant::SRNN_NO_ATTN:
        make_branch("seq", config.seq_len, p.seq_acfm, p.seq_lstm, p.seq_post, p.seq_concat,
                    variant == Variant::SRNN, true);
        break;
    case Variant::PRNN:
    case Variant::PRNN_NO_ATTN:
        make_branch("per", config.period_len, p.per_acfm, p.per_lstm, p.per_post, p.per_concat,
                    variant == Variant::PRNN, true);
        break;
    case Variant::SPN:
    case Variant::SPN_NO_FUSION:
        make_branch("seq", config.seq_len, p.seq_acfm, p.seq_lstm, p.seq_post, p.seq_concat, true, true);
        make_branch("per", config.period_len, p.per_acfm, p.per_lstm, p.per_post, p.per_concat, true, true);
        break;
    }
    if (variant != Variant::SCNN && variant != Variant::PCNN) {
        p.output = ConvParams::create("output", 2, c, 3, rng);
    }
    // Created last so that SPN and SPN-w/o-Fusion share every other tensor for a given seed.
    if (variant == Variant::SPN) {
        FusionParams f;
        const std::size_t fusion_in = 2 * c * config.height * config.width + config.ext_len;
        f.fc1 = DenseParams::create("fusion.fc1", config.fusion_hidden, fusion_in, rng);
        f.fc2 = DenseParams::create("fusion.fc2", 1, config.fusion_hidden, rng);
        p.fusion = std::move(f);
    }
    return p;
}

Model make_model(const SpnConfig& config, Variant variant, std::uint64_t seed) {
    return Model{config, variant, init_params(config, variant, seed)};
}

Var embed_timestep(Tape& tape, const Tensor& flow, const Tensor& ext, SpnParams& params) {
    Var flow_feature = flow_feature_extractor(tape, tape.constant(flow), params.flow);
    Var ext_feature = external_factor_encoder(tape, tape.constant(ext), params.ext);
    return concat_channels(flow_feature, ext_feature);
}

namespace {

[[noreturn]] void missing(const char* what) {
    throw std::invalid_argument(std::string("parameters lack the ") + what + " group required by this variant");
}

Var recurrent_branch(Tape& tape, std::span<const Var> features, std::size_t expected, const char* label,
                     std::optional<AcfmParams>& acfm, std::optional<ConvLstmParams>& lstm,
                     std::optional<ConvParams>& post, std::optional<AcfmResult>* trace) {
    if (features.size() != expected) {
        throw std::invalid_argument(std::string(label) + " branch expects " + std::to_string(expected) +
                                    " features, got " + std::to_string(features.size()));
    }
    if (!post) {
        missing(label);
    }
    Var hidden;
    if (acfm) {
        AcfmResult r = acfm_run(tape, features, *acfm);
        hidden = r.hidden;
        if (trace != nullptr) {
            *trace = std::move(r);
        }
    } else if (lstm) {
        hidden = convlstm_run(tape, features, *lstm);
    } else {
        missing(label);
    }
    return apply_conv(tape, hidden, *post);
}

std::vector<Var> embed_all(Tape& tape, const std::vector<Tensor>& flows, const std::vector<Tensor>& exts,
                           std::size_t expected, const char* label, SpnParams& params) {
    if (flows.size() != expected || exts.size() != expected) {
        throw std::invalid_argument(std::string("input supplies ") + std::to_string(flows.size()) + " " + label +
                                    " maps and " + std::to_string(exts.size()) + " external vectors, variant needs " +
                                    std::to_string(expected));
    }
    std::vector<Var> out;
    out.reserve(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        out.push_back(embed_timestep(tape, flows[i], exts[i], params));
    }
    return out;
}

} // namespace

Var sequential_branch(Tape& tape, std::span<const Var> features, const SpnConfig& config, SpnParams& params,
                      std::optional<AcfmResult>* trace) {
    return recurrent_branch(tape, features, config.seq_len, "sequential", params.seq_acfm, params.seq_lstm,
                            params.seq_post, trace);
}

Var periodic_branch(Tape& tape, std::span<const Var> features, const SpnConfig& config, SpnParams& params,
                    std::optional<AcfmResult>* trace) {
    return recurrent_branch(tape, features, config.period_len, "periodic", params.per_acfm, params.per_lstm,
                            params.per_post, trace);
}

Var fusion_weight(Tape& tape, Var seq_feature, Var per_feature, Var ext_sum, FusionParams& params) {
    const bool batched = seq_feature.shape().size() == 4;
    if (batched != (ext_sum.shape().size() == 2)) {
        throw std::invalid_argument("fusion_weight: features " + shape_to_string(seq_feature.shape()) +
                                    " and external sum " + shape_to_string(ext_sum.shape()) + " disagree on batching");
    }
    Var joined;
    if (batched) {
        const Var parts[] = {flatten_batch(seq_feature), flatten_batch(per_feature), ext_sum};
        joined = concat(parts, 1);
    } else {
        const Var parts[] = {flatten(seq_feature), flatten(per_feature), flatten(ext_sum)};
        joined = concat(parts);
    }
    Var hidden = relu(apply_dense(tape, joined, params.fc1));
    return sigmoid(apply_dense(tape, hidden, params.fc2));
}

Var fuse_and_predict(Tape& tape, Var seq_feature, Var per_feature, Var r, ConvParams& output) {
    if (seq_feature.shape() != per_feature.shape()) {
        throw std::invalid_argument("fuse_and_predict: branch features differ in shape");
    }
    Var mixed = add(mul_scalar(seq_feature, r), mul_scalar(per_feature, affine(r, -1.0, 1.0)));
    return tanh(apply_conv(tape, mixed, output));
}

bool is_batched(const ModelInput& input) {
    for (const auto* flows : {&input.seq_flows, &input.per_flows}) {
        if (!flows->empty()) {
            return flows->front().rank() == 4;
        }
    }
    return input.ext_sum.rank() == 2;
}

namespace {

Tensor with_batch_axis(const Tensor& t) {
    Shape s{1};
    s.insert(s.end(), t.shape().begin(), t.shape().end());
    return t.reshaped(std::move(s));
}

std::vector<Tensor> with_batch_axis(const std::vector<Tensor>& ts) {
    std::vector<Tensor> out;
    out.reserve(ts.size());
    for (const Tensor& t : ts) {
        out.push_back(with_batch_axis(t));
    }
    return out;
}

Tensor stack(const std::vector<const Tensor*>& parts) {
    const Shape& shape = parts.front()->shape();
    Shape out_shape{parts.size()};
    out_shape.insert(out_shape.end(), shape.begin(), shape.end());
    Tensor out(out_shape);
    double* dst = out.raw();
    for (const Tensor* t : parts) {
        if (t->shape() != shape) {
            throw std::invalid_argument("stack_inputs: tensor shapes differ: " + shape_to_string(shape) + " vs " +
                                        shape_to_string(t->shape()));
        }
        dst = std::copy(t->data().begin(), t->data().end(), dst);
    }
    return out;
}

std::vector<Tensor> stack_sequence(std::span<const ModelInput> inputs, std::vector<Tensor> ModelInput::*field) {
    const std::size_t steps = (inputs.front().*field).size();
    std::vector<Tensor> out;
    for (std::size_t t = 0; t < steps; ++t) {
        std::vector<const Tensor*> parts;
        for (const ModelInput& in : inputs) {
            if ((in.*field).size() != steps) {
                throw std::invalid_argument("stack_inputs: inputs have different history lengths");
            }
            parts.push_back(&(in.*field)[t]);
        }
        out.push_back(stack(parts));
    }
    return out;
}

} // namespace

ModelInput stack_inputs(std::span<const ModelInput> inputs) {
    if (inputs.empty()) {
        throw std::invalid_argument("stack_inputs: no inputs");
    }
    for (const ModelInput& in : inputs) {
        if (is_batched(in)) {
            throw std::invalid_argument("stack_inputs: inputs must be single samples");
        }
    }
    ModelInput out;
    out.seq_flows = stack_sequence(inputs, &ModelInput::seq_flows);
    out.seq_ext = stack_sequence(inputs, &ModelInput::seq_ext);
    out.per_flows = stack_sequence(inputs, &ModelInput::per_flows);
    out.per_ext = stack_sequence(inputs, &ModelInput::per_ext);
    std::vector<const Tensor*> sums;
    std::vector<const Tensor*> targets;
    for (const ModelInput& in : inputs) {
        sums.push_back(&in.ext_sum);
        targets.push_back(&in.target);
    }
    if (!inputs.front().ext_sum.empty()) {
        out.ext_sum = stack(sums);
    }
    if (!inputs.front().target.empty()) {
        out.target = stack(targets);
    }
    return out;
}

ForwardResult forward(Tape& tape, const ModelInput& batch_input, Variant variant, const SpnConfig& config,
                      SpnParams& params) {
    const bool batched = is_batched(batch_input);
    ModelInput lifted;
    if (!batched) {
        lifted.seq_flows = with_batch_axis(batch_input.seq_flows);
        lifted.seq_ext = with_batch_axis(batch_input.seq_ext);
        lifted.per_flows = with_batch_axis(batch_input.per_flows);
        lifted.per_ext = with_batch_axis(batch_input.per_ext);
        lifted.ext_sum = with_batch_axis(batch_input.ext_sum);
    }
    const ModelInput& input = batched ? batch_input : lifted;
    ForwardResult result;
    std::vector<Var> seq_features;
    std::vector<Var> per_features;
    if (uses_sequential(variant)) {
        seq_features = embed_all(tape, input.seq_flows, input.seq_ext, config.seq_len, "sequential", params);
    }
    if (uses_periodic(variant)) {
        per_features = embed_all(tape, input.per_flows, input.per_ext, config.period_len, "periodic", params);
    }

    auto require_output = [&]() -> ConvParams& {
        if (!params.output) {
            missing("output");
        }
        return *params.output;
    };

    switch (variant) {
    case Variant::SCNN:
    case Variant::PCNN: {
        auto& conv = variant == Variant::SCNN ? params.seq_concat : params.per_concat;
        if (!conv) {
            missing("concat");
        }
        const auto& features = variant == Variant::SCNN ? seq_features : per_features;
        result.prediction = tanh(apply_conv(tape, concat(features, 1), *conv));
        break;
    }
    case Variant::SRNN:
    case Variant::SRNN_NO_ATTN:
        result.prediction =
            tanh(apply_conv(tape, sequential_branch(tape, seq_features, config, params, &result.seq), require_output()));
        break;
    case Variant::PRNN:
    case Variant::PRNN_NO_ATTN:
        result.prediction =
            tanh(apply_conv(tape, periodic_branch(tape, per_features, config, params, &result.per), require_output()));
        break;
    case Variant::SPN:
    case Variant::SPN_NO_FUSION: {
        Var s = sequential_branch(tape, seq_features, config, params, &result.seq);
        Var p = periodic_branch(tape, per_features, config, params, &result.per);
        Var r;
        if (variant == Variant::SPN) {
            if (!params.fusion) {
                missing("fusion");
            }
            r = fusion_weight(tape, s, p, tape.constant(input.ext_sum), *params.fusion);
        } else {
            r = tape.constant(Tensor({s.shape().front(), 1}, 0.5));
        }
        result.fusion_weight = r;
        result.prediction = fuse_and_predict(tape, s, p, r, require_output());
        break;
    }
    }
    if (!batched) {
        result.prediction = reshape(result.prediction, Shape{2, config.height, config.width});
        if (result.fusion_weight) {
            result.fusion_weight = reshape(*result.fusion_weight, Shape{1});
        }
    }
    return result;
}

Tensor predict(const ModelInput& input, Model& model) {
    Tape tape;
    return forward(tape, input, model).prediction.value();
}

} // namespace crowdflow
