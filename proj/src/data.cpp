#include "crowdflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace crowdflow {

namespace {

std::size_t hot_index(const std::vector<double>& one_hot, const char* group) {
    std::size_t hot = one_hot.size();
    for (std::size_t i = 0; i < one_hot.size(); ++i) {
        if (one_hot[i] == 1.0) {
            if (hot != one_hot.size()) {
                throw std::invalid_argument(std::string(group) + " one-hot vector has more than one hot bit");
            }
            hot = i;
        } else if (one_hot[i] != 0.0) {
            throw std::invalid_argument(std::string(group) + " one-hot vector contains a value other than 0 or 1");
        }
    }
    if (hot == one_hot.size()) {
        throw std::invalid_argument(std::string(group) + " one-hot vector has no hot bit");
    }
    return hot;
}

void check_unit_interval(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
    }
}

void check_range(double min, double max) {
    if (!(max > min)) {
        throw std::invalid_argument("normalization range requires max > min, got min=" + std::to_string(min) +
                                    " max=" + std::to_string(max));
    }
}

} // namespace

ExternalRecord ExternalRecord::make(std::size_t weather_category, double temperature, double wind,
                                    std::size_t holiday_category, std::size_t k_holiday) {
    if (weather_category >= kWeatherCategories) {
        throw std::invalid_argument("weather category " + std::to_string(weather_category) + " out of range");
    }
    if (holiday_category >= k_holiday) {
        throw std::invalid_argument("holiday category " + std::to_string(holiday_category) + " out of range for K=" +
                                    std::to_string(k_holiday));
    }
    check_unit_interval(temperature, "temperature");
    check_unit_interval(wind, "wind speed");
    ExternalRecord r;
    r.weather.assign(kWeatherCategories, 0.0);
    r.weather[weather_category] = 1.0;
    r.temperature = temperature;
    r.wind = wind;
    r.holiday.assign(k_holiday, 0.0);
    r.holiday[holiday_category] = 1.0;
    return r;
}

std::size_t ExternalRecord::weather_category() const { return hot_index(weather, "weather"); }
std::size_t ExternalRecord::holiday_category() const { return hot_index(holiday, "holiday"); }

Tensor encode_external(const ExternalRecord& record) {
    if (record.weather.size() != kWeatherCategories) {
        throw std::invalid_argument("weather one-hot must have 16 entries, got " + std::to_string(record.weather.size()));
    }
    if (record.holiday.empty()) {
        throw std::invalid_argument("holiday one-hot must have at least one entry");
    }
    hot_index(record.weather, "weather");
    hot_index(record.holiday, "holiday");
    check_unit_interval(record.temperature, "temperature");
    check_unit_interval(record.wind, "wind speed");

    std::vector<double> out;
    out.reserve(external_length(record.holiday.size()));
    out.insert(out.end(), record.weather.begin(), record.weather.end());
    out.push_back(record.temperature);
    out.push_back(record.wind);
    out.insert(out.end(), record.holiday.begin(), record.holiday.end());
    return Tensor::vector(std::move(out));
}

std::pair<double, double> training_flow_range(const std::vector<FlowGrid>& flows, std::size_t split_index) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& g : flows) {
        if (g.t_index >= split_index) {
            continue;
        }
        for (double v : g.values.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (lo > hi) {
        throw DataError("training split contains no flow maps");
    }
    return {lo, hi};
}

void finalize_manifest(Dataset& dataset) {
    auto& m = dataset.manifest;
    if (dataset.flows.size() != dataset.externals.size()) {
        throw DataError("dataset has " + std::to_string(dataset.flows.size()) + " flow maps but " +
                        std::to_string(dataset.externals.size()) + " external records");
    }
    if (dataset.flows.empty()) {
        throw DataError("dataset is empty");
    }
    const std::size_t first = dataset.flows.front().t_index;
    const std::size_t last = dataset.flows.back().t_index;
    if (m.split_index <= first || m.split_index > last) {
        throw DataError("split boundary " + std::to_string(m.split_index) + " lies outside the record range");
    }
    std::tie(m.flow_min, m.flow_max) = training_flow_range(dataset.flows, m.split_index);
    // Constant training flows: widen to a unit range so normalization stays defined.
    if (m.flow_max == m.flow_min) {
        m.flow_max = m.flow_min + 1.0;
    }
    m.record_count = dataset.flows.size();
}

Tensor normalize_flow(const Tensor& raw, double min, double max) {
    check_range(min, max);
    Tensor out(raw.shape());
    const double span = max - min;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 2.0 * (raw[i] - min) / span - 1.0;
    }
    return out;
}

Tensor normalize_flow(const FlowGrid& grid, double min, double max) { return normalize_flow(grid.values, min, max); }

Tensor denormalize_flow(const Tensor& normalized, double min, double max) {
    check_range(min, max);
    Tensor out(normalized.shape());
    const double span = max - min;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (normalized[i] + 1.0) * span / 2.0 + min;
    }
    return out;
}

SampleSet build_samples(const std::vector<FlowGrid>& flows, const std::vector<ExternalRecord>& externals,
                        const SampleWindow& window) {
    if (flows.size() != externals.size()) {
        throw DataError("every flow map needs an external record: " + std::to_string(flows.size()) + " maps, " +
                        std::to_string(externals.size()) + " records");
    }
    if (window.intervals_per_day == 0) {
        throw std::invalid_argument("intervals_per_day must be positive");
    }
    std::unordered_map<std::size_t, std::size_t> position;
    position.reserve(flows.size());
    for (std::size_t i = 0; i < flows.size(); ++i) {
        position.emplace(flows[i].t_index, i);
    }
    auto find = [&](std::size_t t) -> const std::size_t* {
        auto it = position.find(t);
        return it == position.end() ? nullptr : &it->second;
    };

    SampleSet out;
    const std::size_t ipd = window.intervals_per_day;
    for (std::size_t i = 0; i < flows.size(); ++i) {
        const std::size_t t = flows[i].t_index;
        const std::size_t day = t / ipd;
        if (t < window.seq_len || day < window.period_len) {
            ++out.skipped;
            continue;
        }
        std::vector<std::size_t> seq_pos;
        std::vector<std::size_t> per_pos;
        bool complete = true;
        for (std::size_t k = window.seq_len; k >= 1 && complete; --k) {
            const std::size_t* p = find(t - k);
            complete = p != nullptr;
            if (p) {
                seq_pos.push_back(*p);
            }
        }
        for (std::size_t k = window.period_len; k >= 1 && complete; --k) {
            const std::size_t* p = find(t - k * ipd);
            complete = p != nullptr;
            if (p) {
                per_pos.push_back(*p);
            }
        }
        if (!complete) {
            ++out.skipped;
            continue;
        }

        Sample s;
        s.target_index = t;
        s.day = day;
        s.interval = t % ipd;
        s.target = flows[i];
        for (std::size_t p : seq_pos) {
            s.sequential.push_back({flows[p], externals[p]});
        }
        for (std::size_t p : per_pos) {
            s.periodic.push_back({flows[p], externals[p]});
        }
        Tensor sum;
        for (const auto* group : {&s.sequential, &s.periodic}) {
            for (const auto& entry : *group) {
                Tensor e = encode_external(entry.external);
                if (sum.empty()) {
                    sum = std::move(e);
                } else {
                    if (e.size() != sum.size()) {
                        throw DataError("external vectors of differing lengths in one sample");
                    }
                    for (std::size_t j = 0; j < sum.size(); ++j) {
                        sum[j] += e[j];
                    }
                }
            }
        }
        s.ext_sum = std::move(sum);
        out.samples.push_back(std::move(s));
    }
    return out;
}

double baseline_rmse(const std::vector<Sample>& samples, Baseline baseline) {
    if (samples.empty()) {
        throw std::invalid_argument("baseline_rmse: no samples");
    }
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& s : samples) {
        const auto& history = baseline == Baseline::Persistence ? s.sequential : s.periodic;
        if (history.empty()) {
            throw std::invalid_argument("baseline_rmse: samples lack the history this baseline needs");
        }
        const Tensor& guess = history.back().flow.values;
        const Tensor& truth = s.target.values;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double d = guess[i] - truth[i];
            acc += d * d;
        }
        count += truth.size();
    }
    return std::sqrt(acc / static_cast<double>(count));
}

} // namespace crowdflow
