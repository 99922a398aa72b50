#pragma once

#include "crowdflow/errors.hpp"
#include "crowdflow/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace crowdflow {

inline constexpr std::size_t kWeatherCategories = 16;

// Inflow (channel 0) and outflow (channel 1) counts for one interval.
struct FlowGrid {
    std::size_t t_index = 0;
    Tensor values;  // 2 x h x w, non-negative
};

struct ExternalRecord {
    std::vector<double> weather;  // one-hot, 16 categories
    double temperature = 0.0;     // [0, 1]
    double wind = 0.0;            // [0, 1]
    std::vector<double> holiday;  // one-hot, K categories

    static ExternalRecord make(std::size_t weather_category, double temperature, double wind,
                               std::size_t holiday_category, std::size_t k_holiday);
    std::size_t weather_category() const;
    std::size_t holiday_category() const;

    friend bool operator==(const ExternalRecord&, const ExternalRecord&) = default;
};

constexpr std::size_t external_length(std::size_t k_holiday) { return kWeatherCategories + 2 + k_holiday; }

// [weather one-hot | temperature | wind | holiday one-hot]
Tensor encode_external(const ExternalRecord& record);

struct DatasetManifest {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t intervals_per_day = 48;
    std::size_t k_holiday = 1;
    double flow_min = 0.0;
    double flow_max = 1.0;
    std::size_t split_index = 0;  // first t_index belonging to the test range
    std::size_t record_count = 0;

    std::size_t ext_len() const { return external_length(k_holiday); }
    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<FlowGrid> flows;            // ascending t_index
    std::vector<ExternalRecord> externals;  // externals[i] belongs to flows[i]
};

// Min-max range over flows whose t_index precedes split_index.
std::pair<double, double> training_flow_range(const std::vector<FlowGrid>& flows, std::size_t split_index);

// Fills flow_min/flow_max/record_count from the training range; checks invariants.
// A constant training range is widened to [min, min + 1].
void finalize_manifest(Dataset& dataset);

// x' = 2 (x - min) / (max - min) - 1
Tensor normalize_flow(const Tensor& raw, double min, double max);
Tensor normalize_flow(const FlowGrid& grid, double min, double max);
Tensor denormalize_flow(const Tensor& normalized, double min, double max);

struct HistoryEntry {
    FlowGrid flow;
    ExternalRecord external;
};

struct Sample {
    std::size_t target_index = 0;
    std::size_t day = 0;
    std::size_t interval = 0;
    std::vector<HistoryEntry> sequential;  // t-n .. t-1
    std::vector<HistoryEntry> periodic;    // (d-m, t) .. (d-1, t)
    Tensor ext_sum;                        // element-wise sum of the n + m encoded external vectors
    FlowGrid target;
};

struct SampleWindow {
    std::size_t seq_len = 3;
    std::size_t period_len = 2;
    std::size_t intervals_per_day = 48;
};

struct SampleSet {
    std::vector<Sample> samples;
    std::size_t skipped = 0;  // targets lacking complete history
};

// One sample per target whose n sequential and m periodic predecessors all
// exist. Sequential history follows the global interval index across midnight.
SampleSet build_samples(const std::vector<FlowGrid>& flows, const std::vector<ExternalRecord>& externals,
                        const SampleWindow& window);

struct SynthConfig {
    std::size_t days = 20;
    std::size_t intervals_per_day = 48;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t k_holiday = 4;
    std::size_t test_days = 2;
    double base = 40.0;
    double amplitude = 30.0;      // periodic term A
    double rho = 0.5;             // weight of the previous interval's 3x3 neighbourhood mean
    double noise_sigma = 4.0;
    double rain_probability = 0.05;  // chance a dry interval starts a rain spell
    double rain_persistence = 0.8;   // chance a rain spell continues
    double rain_effect = 15.0;
};

inline constexpr std::size_t kRainCategory = 1;

// Deterministic per seed. Flow per cell and channel:
// base + A sin(2π t / I + φ) + ρ · (3x3 neighbourhood mean of the previous interval)
//   - rain_effect · [raining] + σ ε, floored at 0.
Dataset synthesize(const SynthConfig& config, std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

enum class Baseline { Persistence, Periodic };

// Raw-scale RMSE of a naive forecast: last sequential map or same interval of the previous day.
double baseline_rmse(const std::vector<Sample>& samples, Baseline baseline);

} // namespace crowdflow
