#pragma once

#include "crowdflow/train.hpp"

#include <ostream>
#include <span>
#include <vector>

namespace crowdflow {

struct AblationRun {
    Variant variant = Variant::SPN;
    std::uint64_t seed = 0;
    double test_rmse = 0.0;
    double validation_rmse = 0.0;
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

struct AblationSummary {
    Variant variant = Variant::SPN;
    double median_rmse = 0.0;
    double min_rmse = 0.0;
    double max_rmse = 0.0;
    std::size_t runs = 0;
};

struct AblationResult {
    std::vector<AblationRun> runs;
    std::vector<AblationSummary> summary;  // same order as the requested variants

    const AblationSummary& of(Variant v) const;
    void write_csv(std::ostream& out) const;
};

double median(std::vector<double> values);

// Trains every variant for every seed (seed replaces config.seed) and scores
// the best-validation parameters on the test split.
AblationResult run_ablation(const Dataset& dataset, const TrainConfig& config, std::span<const Variant> variants,
                            std::span<const std::uint64_t> seeds,
                            const std::function<void(const AblationRun&)>& on_run = {});

} // namespace crowdflow
