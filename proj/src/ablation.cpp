#include "crowdflow/ablation.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace crowdflow {

double median(std::vector<double> values) {
    if (values.empty()) {
        throw std::invalid_argument("median of an empty list");
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const AblationSummary& AblationResult::of(Variant v) const {
    for (const auto& s : summary) {
        if (s.variant == v) {
            return s;
        }
    }
    throw std::invalid_argument("ablation has no runs for " + std::string(variant_name(v)));
}

void AblationResult::write_csv(std::ostream& out) const {
    auto num = [](double v) {
        char buf[64];
        auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 4);
        return std::string(buf, res.ptr);
    };
    out << "variant,median_rmse,min_rmse,max_rmse,runs\n";
    for (const auto& s : summary) {
        out << variant_name(s.variant) << ',' << num(s.median_rmse) << ',' << num(s.min_rmse) << ','
            << num(s.max_rmse) << ',' << s.runs << '\n';
    }
}

AblationResult run_ablation(const Dataset& dataset, const TrainConfig& config, std::span<const Variant> variants,
                            std::span<const std::uint64_t> seeds, const std::function<void(const AblationRun&)>& on_run) {
    if (variants.empty() || seeds.empty()) {
        throw std::invalid_argument("run_ablation needs at least one variant and one seed");
    }
    const SampleSplit split = split_samples(dataset, make_window(dataset.manifest, config), config.validation_fraction);
    if (split.test.empty()) {
        throw std::invalid_argument("run_ablation: dataset has no test samples");
    }
    AblationResult result;
    for (Variant v : variants) {
        std::vector<double> scores;
        for (std::uint64_t seed : seeds) {
            TrainConfig c = config;
            c.seed = seed;
            c.checkpoint_dir.reset();
            TrainResult trained = train_on_samples(split.train, split.validation, dataset.manifest, c, v);
            AblationRun run;
            run.variant = v;
            run.seed = seed;
            run.test_rmse = evaluate_rmse(trained.best, split.test, dataset.manifest);
            run.validation_rmse = trained.report.best_validation_rmse;
            run.best_epoch = trained.report.best_epoch;
            run.wall_seconds = trained.report.wall_seconds;
            scores.push_back(run.test_rmse);
            result.runs.push_back(run);
            if (on_run) {
                on_run(run);
            }
        }
        result.summary.push_back({v, median(scores), *std::min_element(scores.begin(), scores.end()),
                                  *std::max_element(scores.begin(), scores.end()), scores.size()});
    }
    return result;
}

} // namespace crowdflow
