// Runs the eight acceptance criteria and prints one PASS/FAIL line for each.

#include "crowdflow/ablation.hpp"
#include "crowdflow/export.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <sys/wait.h>

using namespace crowdflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const fs::path& root, const std::string& name) {
    const fs::path d = root / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// 1. Backward pass against central differences on a 4x4 grid.
Outcome gradient_integrity() {
    const auto start = std::chrono::steady_clock::now();
    SpnConfig c;
    c.height = 4;
    c.width = 4;
    c.seq_len = 2;
    c.period_len = 2;
    c.residual_units = 1;
    GradcheckOptions o;
    o.step = 1e-5;
    o.threshold = 1e-5;
    double worst = 0.0;
    std::string detail;
    for (Variant v : {Variant::SPN, Variant::SRNN, Variant::PRNN, Variant::SCNN, Variant::PCNN}) {
        const GradcheckReport r = gradcheck(c, v, 0, o);
        worst = std::max(worst, r.max_rel_error);
        detail += std::string(variant_name(v)) + " " + fmt(r.max_rel_error, 3) + ", ";
        std::cout << "  gradcheck " << variant_name(v) << ": max rel error " << r.max_rel_error << "\n" << std::flush;
    }
    const double secs = seconds_since(start);
    return {worst < 1e-5 && secs < 300.0, detail + "max " + fmt(worst, 3) + " (< 1e-5), " + fmt(secs) + " s (< 300 s)"};
}

// 2. SPN memorizes 32 samples.
Outcome overfit() {
    const auto start = std::chrono::steady_clock::now();
    SynthConfig sc;
    sc.days = 6;
    const Dataset ds = synthesize(sc, 0);
    TrainConfig t;
    t.seq_len = 3;
    t.period_len = 2;
    t.residual_units = 2;
    t.batch_size = 32;
    t.lr = 1e-3;
    t.validation_fraction = 0.0;
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.0);
    std::vector<Sample> train_set(split.train.begin(), split.train.begin() + 32);

    std::vector<ModelInput> inputs;
    for (const Sample& s : train_set) {
        inputs.push_back(to_model_input(s, ds.manifest));
    }
    Model model = make_model(make_spn_config(ds.manifest, t), Variant::SPN, 0);
    AdamState adam;
    adam.lr = t.lr;
    const ParamList params = model.params.list();
    const ModelInput batch = stack_inputs(inputs);
    double rmse = normalized_rmse(model, inputs);
    std::size_t epoch = 0;
    while (epoch < 500 && rmse >= 0.05) {
        ++epoch;
        for (Parameter* p : params) {
            p->zero_grad();
        }
        Tape tape;
        const ForwardResult f = forward(tape, batch, model);
        Var loss = euclidean_loss(f.prediction, batch.target);
        tape.backward(loss);
        adam_step(params, adam);
        rmse = normalized_rmse(model, inputs);
        if (epoch % 50 == 0) {
            std::cout << "  overfit epoch " << epoch << ": rmse " << rmse << "\n" << std::flush;
        }
    }
    const double secs = seconds_since(start);
    return {rmse < 0.05 && secs < 600.0, "normalized RMSE " + fmt(rmse) + " after " + std::to_string(epoch) +
                                             " epochs (< 0.05 within 500), " + fmt(secs) + " s (< 600 s)"};
}

// 3. Ablation ordering on synthetic data.
Outcome ablation_ordering(const fs::path& work) {
    SynthConfig sc;
    sc.days = 20;
    sc.intervals_per_day = 48;
    sc.height = 8;
    sc.width = 8;
    const Dataset ds = synthesize(sc, 7);
    TrainConfig t;
    t.seq_len = 3;
    t.period_len = 2;
    t.residual_units = 2;
    t.channels = 8;
    t.batch_size = 16;
    t.lr = 1e-3;
    t.epochs = 100;
    const std::vector<Variant> variants = {Variant::SPN, Variant::SRNN, Variant::SCNN, Variant::PRNN,
                                           Variant::SRNN_NO_ATTN};
    const std::vector<std::uint64_t> seeds = {0, 1, 2};
    const AblationResult r = run_ablation(ds, t, variants, seeds, [](const AblationRun& run) {
        std::cout << "  ablation " << variant_name(run.variant) << " seed " << run.seed << ": test rmse "
                  << run.test_rmse << " (" << fmt(run.wall_seconds) << " s)\n"
                  << std::flush;
    });
    std::ofstream csv(work / "ablation.csv");
    r.write_csv(csv);
    const double spn = r.of(Variant::SPN).median_rmse;
    const double srnn = r.of(Variant::SRNN).median_rmse;
    const double scnn = r.of(Variant::SCNN).median_rmse;
    const double prnn = r.of(Variant::PRNN).median_rmse;
    const double no_attn = r.of(Variant::SRNN_NO_ATTN).median_rmse;
    std::cout << "  attention check: SRNN " << srnn << " <= 1.02 * SRNN-w/o-Attention " << 1.02 * no_attn << ": "
              << (srnn <= 1.02 * no_attn ? "holds" : "violated") << "\n";
    const bool ok = spn <= srnn && srnn <= scnn && spn <= prnn;
    return {ok, "median RMSE SPN " + fmt(spn) + ", SRNN " + fmt(srnn) + ", SCNN " + fmt(scnn) + ", PRNN " +
                    fmt(prnn) + " (want SPN <= SRNN <= SCNN, SPN <= PRNN)"};
}

// 4. Zeroed fusion layer reproduces the fixed half-half blend bit for bit.
Outcome fusion_equivalence() {
    SpnConfig c;
    c.height = 6;
    c.width = 5;
    c.seq_len = 3;
    c.period_len = 2;
    c.residual_units = 2;
    std::size_t compared = 0;
    std::size_t mismatched = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Model spn = make_model(c, Variant::SPN, seed);
        Model fixed = make_model(c, Variant::SPN_NO_FUSION, seed + 100);
        ParamList fusion;
        spn.params.fusion->collect(fusion);
        for (Parameter* p : fusion) {
            p->value.fill(0.0);
        }
        std::map<std::string, Parameter*> by_name;
        for (Parameter* p : spn.params.list()) {
            by_name[p->name] = p;
        }
        for (Parameter* p : fixed.params.list()) {
            p->value = by_name.at(p->name)->value;
        }
        std::vector<ModelInput> inputs;
        for (std::uint64_t k = 0; k < 8; ++k) {
            inputs.push_back(random_model_input(c, seed * 100 + k));
        }
        for (const ModelInput& in : inputs) {
            mismatched += predict(in, spn) == predict(in, fixed) ? 0 : 1;
            ++compared;
        }
        const ModelInput batch = stack_inputs(inputs);
        mismatched += predict(batch, spn) == predict(batch, fixed) ? 0 : 1;
        ++compared;
    }
    return {mismatched == 0, std::to_string(compared - mismatched) + " of " + std::to_string(compared) +
                                 " predictions bitwise equal"};
}

// 5. Output, attention and fusion ranges over random inputs, including saturated weights.
Outcome range_invariants() {
    SpnConfig c;
    c.height = 4;
    c.width = 4;
    c.seq_len = 2;
    c.period_len = 2;
    c.residual_units = 1;
    constexpr std::size_t kInputs = 10000;
    constexpr std::size_t kBatch = 250;
    std::size_t violations = 0;
    std::size_t values = 0;
    auto check_open = [&](const Tensor& t, double lo, double hi) {
        for (double v : t.data()) {
            ++values;
            violations += (v > lo && v < hi) ? 0 : 1;
        }
    };
    for (Variant v : kAllVariants) {
        for (std::size_t b = 0; b < kInputs / kBatch; ++b) {
            Model m = make_model(c, v, b);
            if (b % 4 == 3) {
                for (Parameter* p : m.params.list()) {
                    for (double& x : p->value.data()) {
                        x *= 40.0;
                    }
                }
            }
            std::vector<ModelInput> inputs;
            for (std::size_t k = 0; k < kBatch; ++k) {
                inputs.push_back(random_model_input(c, b * kBatch + k));
            }
            Tape tape;
            const ForwardResult f = forward(tape, stack_inputs(inputs), m);
            check_open(f.prediction.value(), -1.0, 1.0);
            for (const auto* acfm : {&f.seq, &f.per}) {
                if (*acfm) {
                    for (const Var& a : (*acfm)->attention) {
                        check_open(a.value(), 0.0, 1.0);
                    }
                }
            }
            if (f.fusion_weight) {
                check_open(f.fusion_weight->value(), 0.0, 1.0);
            }
        }
    }
    return {violations == 0, std::to_string(violations) + " violations among " + std::to_string(values) +
                                 " values from " + std::to_string(kInputs) + " inputs x 8 variants"};
}

// 6. Metric, normalization and dataset storage oracles.
Outcome metric_oracles(const fs::path& work) {
    SynthConfig sc;
    sc.days = 5;
    sc.intervals_per_day = 12;
    sc.height = 5;
    sc.width = 4;
    const Dataset ds = synthesize(sc, 21);
    TrainConfig t;
    t.seq_len = 3;
    t.period_len = 2;
    t.residual_units = 1;
    t.channels = 4;
    t.ext_hidden = 8;
    t.fusion_hidden = 8;
    const SampleSplit split = split_samples(ds, make_window(ds.manifest, t), 0.0);

    double worst_rmse = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Model m = make_model(make_spn_config(ds.manifest, t), Variant::SPN, seed);
        std::vector<double> preds;
        std::vector<double> truth;
        for (const Sample& s : split.test) {
            Tape tape;
            const Tensor p = forward(tape, to_model_input(s, ds.manifest), m).prediction.value();
            const double span = ds.manifest.flow_max - ds.manifest.flow_min;
            for (std::size_t i = 0; i < p.size(); ++i) {
                preds.push_back((p[i] + 1.0) / 2.0 * span + ds.manifest.flow_min);
                truth.push_back(s.target.values[i]);
            }
        }
        long double sum = 0.0L;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const long double d = static_cast<long double>(preds[i]) - truth[i];
            sum += d * d;
        }
        const double oracle = static_cast<double>(std::sqrt(sum / preds.size()));
        worst_rmse = std::max(worst_rmse, std::abs(evaluate_rmse(m, split.test, ds.manifest) - oracle));
    }

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(0.0, 1000.0);
    double worst_round_trip = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        double lo = dist(rng);
        double hi = lo + 1.0 + dist(rng);
        Tensor raw({2, 8, 8});
        for (double& v : raw.data()) {
            v = lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        }
        const Tensor back = denormalize_flow(normalize_flow(raw, lo, hi), lo, hi);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            worst_round_trip = std::max(worst_round_trip, std::abs(back[i] - raw[i]) / std::max(1.0, std::abs(raw[i])));
        }
    }

    const fs::path dir = fresh_dir(work, "dataset_round_trip");
    save_dataset(ds, dir);
    const Dataset back = load_dataset(dir);
    bool bitwise = back.manifest == ds.manifest && back.flows.size() == ds.flows.size() &&
                   back.externals == ds.externals;
    for (std::size_t i = 0; bitwise && i < ds.flows.size(); ++i) {
        bitwise = back.flows[i].t_index == ds.flows[i].t_index &&
                  std::memcmp(back.flows[i].values.raw(), ds.flows[i].values.raw(),
                              ds.flows[i].values.size() * sizeof(double)) == 0;
    }
    const bool ok = worst_rmse <= 1e-10 && worst_round_trip <= 1e-12 && bitwise;
    return {ok, "RMSE vs naive " + fmt(worst_rmse, 3) + " (<= 1e-10), round trip " + fmt(worst_round_trip, 3) +
                    " (<= 1e-12), dataset " + (bitwise ? "bitwise equal" : "differs")};
}

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            files[fs::relative(e.path(), root).string()] = read_file(e.path());
        }
    }
    return files;
}

// 7. Two identical train invocations write identical checkpoints.
Outcome determinism(const fs::path& work, const std::string& cli) {
    if (cli.empty()) {
        return {false, "no --cli given"};
    }
    const fs::path dir = fresh_dir(work, "determinism");
    {
        std::ofstream cfg(dir / "run.json");
        cfg << R"({"synth": {"days": 8, "intervals_per_day": 12, "height": 6, "width": 6, "test_days": 1},
                   "train": {"channels": 4, "residual_units": 1, "ext_hidden": 16, "fusion_hidden": 16,
                             "epochs": 3, "batch_size": 8, "lr": 0.001}})";
    }
    const std::string cfg = "--config \"" + (dir / "run.json").string() + "\"";
    if (run_cli(cli, "synth " + cfg + " --seed 3 --out \"" + (dir / "data").string() + "\"", dir / "synth.log") != 0) {
        return {false, "synth failed: " + read_file(dir / "synth.log")};
    }
    for (const char* run : {"a", "b"}) {
        const std::string args = "train " + cfg + " --dataset \"" + (dir / "data").string() +
                                 "\" --variant SPN --seed 11 --out \"" + (dir / run).string() + "\"";
        if (run_cli(cli, args, dir / (std::string(run) + ".log")) != 0) {
            return {false, std::string("train run ") + run + " failed"};
        }
    }
    const auto a = snapshot(dir / "a");
    const auto b = snapshot(dir / "b");
    std::size_t checkpoint_files = 0;
    for (const auto& [name, _] : a) {
        checkpoint_files += name.find("params.bin") != std::string::npos ? 1 : 0;
    }
    const bool ok = a == b && checkpoint_files == 2;
    return {ok, std::to_string(a.size()) + " files per run (" + std::to_string(checkpoint_files) +
                    " parameter blobs), " + (a == b ? "bitwise identical" : "differ")};
}

// 8. Graymap rendering and file layout of the attention export.
Outcome export_correctness(const fs::path& work) {
    const std::size_t steps = 3;
    const std::size_t h = 5;
    const std::size_t w = 7;
    AcfmTrace uniform;
    for (std::size_t k = 0; k < steps; ++k) {
        uniform.attention.push_back(Tensor({1, h, w}, 0.5));
    }
    const fs::path dir = fresh_dir(work, "export_uniform");
    const auto files = export_attention(uniform, dir);
    std::size_t non_128 = 0;
    std::size_t pixels = 0;
    std::size_t graymaps = 0;
    for (const auto& f : files) {
        if (f.extension() != ".pgm") {
            continue;
        }
        ++graymaps;
        std::istringstream in(read_file(f));
        std::string magic;
        std::size_t fw = 0, fh = 0, maxval = 0;
        in >> magic >> fw >> fh >> maxval;
        non_128 += (magic == "P2" && fw == w && fh == h && maxval == 255) ? 0 : 1;
        int px = 0;
        while (in >> px) {
            ++pixels;
            non_128 += px == 128 ? 0 : 1;
        }
    }
    const bool uniform_ok = non_128 == 0 && pixels == steps * h * w && graymaps == steps;
    const bool count_ok = files.size() == steps * 2;

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    AcfmTrace random;
    for (std::size_t k = 0; k < steps; ++k) {
        Tensor a({1, h, w});
        for (double& v : a.data()) {
            v = dist(rng);
        }
        a[0] = 1.0;
        a[1] = 0.0;
        a[2] = 0.5 / 255.0;
        random.attention.push_back(a);
    }
    std::vector<Tensor> residuals(steps, Tensor({1, h, w}, 0.25));
    const fs::path rdir = fresh_dir(work, "export_random");
    const auto rfiles = export_attention(random, rdir, &residuals);
    std::size_t wrong = 0;
    for (std::size_t k = 0; k < steps; ++k) {
        std::istringstream in(read_file(rdir / ("attention_" + std::to_string(k) + ".pgm")));
        std::string magic;
        std::size_t fw = 0, fh = 0, maxval = 0;
        in >> magic >> fw >> fh >> maxval;
        for (std::size_t i = 0; i < h * w; ++i) {
            long px = -1;
            in >> px;
            wrong += px == std::lround(random.attention[k][i] * 255.0) ? 0 : 1;
        }
    }
    const bool pixel_ok = wrong == 0;
    const bool residual_count_ok = rfiles.size() == steps * 4;
    return {uniform_ok && count_ok && pixel_ok && residual_count_ok,
            "uniform 0.5 -> " + std::to_string(pixels - non_128) + "/" + std::to_string(pixels) +
                " pixels at 128, " + std::to_string(files.size()) + " files for " + std::to_string(steps) +
                " steps, " + std::to_string(wrong) + " pixel mismatches, " + std::to_string(rfiles.size()) +
                " files with residual maps"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = "acceptance_work";
    std::string cli;
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory");
    app.add_option("--cli", cli, "path to the crowdflow executable");
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient integrity", gradient_integrity},
        {"overfit oracle", overfit},
        {"ablation ordering", [&] { return ablation_ordering(work); }},
        {"fusion equivalence", fusion_equivalence},
        {"range invariants", range_invariants},
        {"metric and normalization oracles", [&] { return metric_oracles(work); }},
        {"determinism", [&] { return determinism(work, cli); }},
        {"attention export", [&] { return export_correctness(work); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    std::vector<std::string> lines;
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int number = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(number)) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const std::string line = std::string(o.passed ? "PASS" : "FAIL") + " criterion " + std::to_string(number) +
                                 " (" + criteria[i].first + "): " + o.detail + " [" + fmt(seconds_since(start)) +
                                 " s]";
        std::cout << line << "\n" << std::flush;
        lines.push_back(line);
        failed += o.passed ? 0 : 1;
    }
    std::cout << "\nsummary\n";
    for (const auto& l : lines) {
        std::cout << l << "\n";
    }
    return failed == 0 ? 0 : 1;
}
