#pragma once

#include "crowdflow/data.hpp"
#include "crowdflow/spn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crowdflow {

// Normalizes flows with the manifest's training range and encodes externals.
ModelInput to_model_input(const Sample& sample, const DatasetManifest& manifest);

// Mean of squared differences over all elements.
Var euclidean_loss(Var pred, const Tensor& target);

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

// One bias-corrected Adam update from Parameter::grad. Moment buffers are
// allocated on first use; a parameter whose gradient slot does not match
// its value shape raises InvalidState.
void adam_step(std::span<Parameter* const> params, AdamState& state);

struct TrainConfig {
    std::size_t seq_len = 3;
    std::size_t period_len = 2;
    std::size_t residual_units = 12;
    std::size_t channels = 16;
    std::size_t ext_hidden = 256;
    std::size_t fusion_hidden = 512;

    std::size_t epochs = 270;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double validation_fraction = 0.1;  // trailing share of training days held out for checkpoint selection
    std::size_t train_limit = 0;       // use only the first N training samples when > 0
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> checkpoint_dir;  // receives final/ and best/
};

SpnConfig make_spn_config(const DatasetManifest& manifest, const TrainConfig& config);
SampleWindow make_window(const DatasetManifest& manifest, const TrainConfig& config);

struct SampleSplit {
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::vector<Sample> test;
    std::size_t skipped = 0;
};

// Test: targets at or after the manifest split. Validation: targets in the
// trailing validation_fraction of training days.
SampleSplit split_samples(const Dataset& dataset, const SampleWindow& window, double validation_fraction);

struct TrainReport {
    std::uint64_t seed = 0;
    std::string variant;
    std::string config_json;
    std::size_t train_samples = 0;
    std::size_t validation_samples = 0;
    std::size_t test_samples = 0;
    double initial_loss = 0.0;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_validation_rmse;  // raw scale; empty without validation data
    std::size_t best_epoch = 0;                 // 1-based; 0 means the final parameters
    double best_validation_rmse = 0.0;
    double final_train_rmse = 0.0;              // normalized scale, final parameters
    double wall_seconds = 0.0;

    std::string to_json(bool include_timing = true) const;
};

struct TrainResult {
    Model model;  // final parameters
    Model best;   // lowest validation RMSE (equals model without validation data)
    TrainReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss, std::optional<double> validation_rmse)>;

TrainResult train(const Dataset& dataset, const TrainConfig& config, Variant variant,
                  const EpochCallback& on_epoch = {});

// Training on an already assembled sample list (no validation split).
TrainResult train_on_samples(const std::vector<Sample>& train_samples, const std::vector<Sample>& validation_samples,
                             const DatasetManifest& manifest, const TrainConfig& config, Variant variant,
                             const EpochCallback& on_epoch = {});

struct EvalOptions {
    bool clamp_nonnegative = false;
};

// sqrt(mean over all maps and elements of (denormalized prediction - raw truth)^2).
double evaluate_rmse(Model& model, const std::vector<Sample>& samples, const DatasetManifest& manifest,
                     const EvalOptions& options = {});

// RMSE in the normalized [-1, 1] scale.
double normalized_rmse(Model& model, std::span<const ModelInput> inputs);

std::string config_to_json(const SpnConfig& config);
SpnConfig config_from_json(const std::string& text);

// Directory holding checkpoint.json (variant, config, tensor names/shapes/offsets,
// CRC-32) and params.bin (raw little-endian doubles in declared parameter order).
void save_checkpoint(Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

} // namespace crowdflow
