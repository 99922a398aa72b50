#include "crowdflow/ablation.hpp"
#include "crowdflow/config.hpp"
#include "crowdflow/errors.hpp"
#include "crowdflow/export.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/train.hpp"

#include <CLI11.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace crowdflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

struct Options {
    std::string config;
    std::string dataset;
    std::string variant;
    std::string checkpoint;
    std::string out;
    std::string fault;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
    std::optional<double> lr;
    std::optional<std::size_t> residual_units;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> variants;
    std::size_t index = 0;
    bool residuals = false;
    bool quiet = false;
};

RunConfig resolve(const Options& o) {
    RunConfig c = o.config.empty() ? default_run_config() : load_run_config(o.config);
    if (o.seed) {
        c.train.seed = *o.seed;
        c.synth_seed = *o.seed;
    }
    if (o.epochs) {
        c.train.epochs = *o.epochs;
    }
    if (o.batch) {
        c.train.batch_size = *o.batch;
    }
    if (o.lr) {
        c.train.lr = *o.lr;
    }
    if (o.residual_units) {
        c.train.residual_units = *o.residual_units;
    }
    if (!o.seeds.empty()) {
        c.seeds = o.seeds;
    }
    if (!o.variants.empty()) {
        c.variants.clear();
        for (const auto& v : o.variants) {
            c.variants.push_back(parse_variant(v));
        }
    }
    return c;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw std::invalid_argument(std::string(flag) + " is required");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    out.close();
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
}

const Sample& pick_test_sample(const SampleSplit& split, std::size_t index) {
    if (index >= split.test.size()) {
        throw std::invalid_argument("--index " + std::to_string(index) + " out of range; test split has " +
                                    std::to_string(split.test.size()) + " samples");
    }
    return split.test[index];
}

SampleSplit split_for(const Dataset& ds, const Model& model, double validation_fraction) {
    return split_samples(ds, SampleWindow{model.config.seq_len, model.config.period_len, ds.manifest.intervals_per_day},
                         validation_fraction);
}

int cmd_synth(const Options& o) {
    require(o.out, "--out");
    const RunConfig c = resolve(o);
    const Dataset ds = synthesize(c.synth, c.synth_seed);
    save_dataset(ds, o.out);
    std::cout << "wrote " << ds.flows.size() << " intervals (" << ds.manifest.height << "x" << ds.manifest.width
              << ", split at " << ds.manifest.split_index << ") to " << o.out << "\n";
    return kExitOk;
}

int cmd_train(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.out, "--out");
    RunConfig c = resolve(o);
    const Variant variant = o.variant.empty() ? Variant::SPN : parse_variant(o.variant);
    const Dataset ds = load_dataset(o.dataset);
    c.train.checkpoint_dir = fs::path(o.out);
    auto log = [&](std::size_t epoch, double loss, std::optional<double> val) {
        if (o.quiet) {
            return;
        }
        std::cout << "epoch " << epoch << " loss " << std::setprecision(6) << loss;
        if (val) {
            std::cout << " val_rmse " << *val;
        }
        std::cout << std::endl;
    };
    const TrainResult r = train(ds, c.train, variant, log);
    write_text(fs::path(o.out) / "report.json", r.report.to_json(false) + "\n");
    std::cout << "trained " << variant_name(variant) << " on " << r.report.train_samples << " samples in "
              << std::setprecision(4) << r.report.wall_seconds << " s; best epoch " << r.report.best_epoch << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.checkpoint, "--checkpoint");
    const RunConfig c = resolve(o);
    const Dataset ds = load_dataset(o.dataset);
    Model model = load_checkpoint(o.checkpoint);
    const SampleSplit split = split_for(ds, model, c.train.validation_fraction);
    const double rmse = evaluate_rmse(model, split.test, ds.manifest);
    std::cout << std::setprecision(8) << "variant " << variant_name(model.variant) << "\n"
              << "test_samples " << split.test.size() << "\n"
              << "rmse " << rmse << "\n"
              << "persistence_rmse " << baseline_rmse(split.test, Baseline::Persistence) << "\n";
    if (model.config.period_len > 0) {
        std::cout << "periodic_rmse " << baseline_rmse(split.test, Baseline::Periodic) << "\n";
    }
    return kExitOk;
}

int cmd_predict(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.checkpoint, "--checkpoint");
    require(o.out, "--out");
    const RunConfig c = resolve(o);
    const Dataset ds = load_dataset(o.dataset);
    Model model = load_checkpoint(o.checkpoint);
    const SampleSplit split = split_for(ds, model, c.train.validation_fraction);
    const Sample& s = pick_test_sample(split, o.index);
    const Tensor pred =
        denormalize_flow(predict(to_model_input(s, ds.manifest), model), ds.manifest.flow_min, ds.manifest.flow_max);

    std::string blob;
    for (double v : pred.data()) {
        char bytes[8];
        const auto raw = std::bit_cast<std::uint64_t>(v);
        std::memcpy(bytes, &raw, 8);
        blob.append(bytes, 8);
    }
    const fs::path dir(o.out);
    write_text(dir / "forecast.bin", blob);
    std::ostringstream text;
    text << "# t_index " << s.target_index << " day " << s.day << " interval " << s.interval << "\n";
    const std::size_t h = pred.dim(1);
    const std::size_t w = pred.dim(2);
    for (std::size_t ch = 0; ch < 2; ++ch) {
        text << (ch == 0 ? "# inflow\n" : "# outflow\n");
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                text << (x ? "," : "") << std::setprecision(6) << pred.at(ch, y, x);
            }
            text << "\n";
        }
    }
    write_text(dir / "forecast.txt", text.str());
    std::cout << "forecast for t_index " << s.target_index << " written to " << dir << "\n";
    return kExitOk;
}

int cmd_gradcheck(const Options& o) {
    RunConfig c = resolve(o);
    std::vector<Variant> variants = c.variants;
    if (!o.variant.empty()) {
        variants = {parse_variant(o.variant)};
    }
    GradcheckOptions opts = c.gradcheck;
    if (!o.fault.empty()) {
        bool found = false;
        for (int k = 0; k <= static_cast<int>(OpKind::MeanSquaredError); ++k) {
            if (o.fault == op_name(static_cast<OpKind>(k))) {
                opts.fault_kind = static_cast<OpKind>(k);
                found = true;
            }
        }
        if (!found) {
            throw std::invalid_argument("unknown op for --fault: " + o.fault);
        }
    }
    bool ok = true;
    for (Variant v : variants) {
        const GradcheckReport r = gradcheck(c.gradcheck_model, v, o.seed.value_or(0), opts);
        if (!o.quiet) {
            r.print(std::cout);
        } else {
            std::cout << variant_name(v) << " max_rel_error " << std::scientific << r.max_rel_error
                      << std::defaultfloat << (r.passed() ? " PASS" : " FAIL") << "\n";
        }
        ok = ok && r.passed();
    }
    return ok ? kExitOk : kExitCheck;
}

int cmd_ablate(const Options& o) {
    require(o.dataset, "--dataset");
    const RunConfig c = resolve(o);
    const Dataset ds = load_dataset(o.dataset);
    auto log = [&](const AblationRun& r) {
        if (!o.quiet) {
            std::cerr << variant_name(r.variant) << " seed " << r.seed << " test_rmse " << r.test_rmse
                      << " best_epoch " << r.best_epoch << " (" << r.wall_seconds << " s)" << std::endl;
        }
    };
    const AblationResult result = run_ablation(ds, c.train, c.variants, c.seeds, log);
    std::ostringstream csv;
    result.write_csv(csv);
    std::cout << csv.str();
    if (!o.out.empty()) {
        write_text(fs::path(o.out) / "ablation.csv", csv.str());
    }
    return kExitOk;
}

int cmd_export_attention(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.checkpoint, "--checkpoint");
    require(o.out, "--out");
    const RunConfig c = resolve(o);
    const Dataset ds = load_dataset(o.dataset);
    Model model = load_checkpoint(o.checkpoint);
    const SampleSplit split = split_for(ds, model, c.train.validation_fraction);
    const Sample& s = pick_test_sample(split, o.index);
    const ModelInput in = to_model_input(s, ds.manifest);
    Tape tape;
    const ForwardResult res = forward(tape, in, model);
    std::size_t files = 0;
    auto dump = [&](const std::optional<AcfmResult>& branch, const std::vector<Tensor>& flows, const char* name) {
        if (!branch) {
            return;
        }
        const std::vector<Tensor> residuals = residual_maps(flows, in.target);
        files += export_attention(branch->trace(), fs::path(o.out) / name, o.residuals ? &residuals : nullptr).size();
    };
    dump(res.seq, in.seq_flows, "sequential");
    dump(res.per, in.per_flows, "periodic");
    if (files == 0) {
        throw std::invalid_argument(std::string(variant_name(model.variant)) + " has no attention maps");
    }
    std::cout << "wrote " << files << " files to " << o.out << "\n";
    return kExitOk;
}

int cmd_fusion_profile(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.checkpoint, "--checkpoint");
    const RunConfig c = resolve(o);
    const Dataset ds = load_dataset(o.dataset);
    Model model = load_checkpoint(o.checkpoint);
    const SampleSplit split = split_for(ds, model, c.train.validation_fraction);
    const auto bins = fusion_profile(model, split.test, ds.manifest);
    std::ostringstream csv;
    write_fusion_profile(bins, csv);
    std::cout << csv.str();
    if (!o.out.empty()) {
        write_text(fs::path(o.out) / "fusion_profile.csv", csv.str());
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Crowd flow forecasting with attentive ConvLSTMs"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON config file");
        sub->add_option("--dataset", o.dataset, "dataset directory");
        sub->add_option("--variant", o.variant, "model variant (SPN, SRNN, PCNN, ...)");
        sub->add_option("--seed", o.seed, "random seed");
        sub->add_option("--epochs", o.epochs, "training epochs");
        sub->add_option("--batch", o.batch, "minibatch size");
        sub->add_option("--lr", o.lr, "Adam learning rate");
        sub->add_option("--residual-units", o.residual_units, "residual units in the flow extractor");
        sub->add_option("--out", o.out, "output directory");
        sub->add_flag("--quiet", o.quiet, "less output");
    };
    auto with_checkpoint = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
        sub->add_option("--index", o.index, "test sample index");
    };

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    common(synth);
    auto* train_cmd = app.add_subcommand("train", "train a model");
    common(train_cmd);
    auto* eval = app.add_subcommand("eval", "test-split RMSE of a checkpoint");
    common(eval);
    with_checkpoint(eval);
    auto* pred = app.add_subcommand("predict", "forecast one test interval");
    common(pred);
    with_checkpoint(pred);
    auto* grad = app.add_subcommand("gradcheck", "compare backward against finite differences");
    common(grad);
    grad->add_option("--fault", o.fault, "scale one op's backward rule (mutation check)");
    grad->add_option("--variants", o.variants, "variants to check");
    auto* ablate = app.add_subcommand("ablate", "train and compare variants");
    common(ablate);
    ablate->add_option("--variants", o.variants, "variants to compare");
    ablate->add_option("--seeds", o.seeds, "seeds per variant");
    auto* attn = app.add_subcommand("export-attention", "write attention maps as graymaps");
    common(attn);
    with_checkpoint(attn);
    attn->add_flag("--residuals", o.residuals, "also write |input - truth| residual maps");
    auto* fusion = app.add_subcommand("fusion-profile", "mean fusion weight per interval");
    common(fusion);
    with_checkpoint(fusion);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(o);
        if (*train_cmd) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*pred) return cmd_predict(o);
        if (*grad) return cmd_gradcheck(o);
        if (*ablate) return cmd_ablate(o);
        if (*attn) return cmd_export_attention(o);
        if (*fusion) return cmd_fusion_profile(o);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
