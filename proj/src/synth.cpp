#include "crowdflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace crowdflow {

namespace {

// Mean over the in-bounds part of the 3x3 window centred on (y, x).
double neighbourhood_mean(const Tensor& grid, std::size_t c, std::size_t y, std::size_t x) {
    const std::size_t h = grid.dim(1);
    const std::size_t w = grid.dim(2);
    double sum = 0.0;
    int count = 0;
    for (std::size_t yy = (y == 0 ? 0 : y - 1); yy <= std::min(h - 1, y + 1); ++yy) {
        for (std::size_t xx = (x == 0 ? 0 : x - 1); xx <= std::min(w - 1, x + 1); ++xx) {
            sum += grid.at(c, yy, xx);
            ++count;
        }
    }
    return sum / count;
}

} // namespace

Dataset synthesize(const SynthConfig& config, std::uint64_t seed) {
    if (config.days == 0 || config.intervals_per_day == 0 || config.height == 0 || config.width == 0) {
        throw std::invalid_argument("synthesize: days, intervals_per_day and grid size must be positive");
    }
    if (config.test_days == 0 || config.test_days >= config.days) {
        throw std::invalid_argument("synthesize: test_days must be in [1, days)");
    }
    if (config.k_holiday == 0) {
        throw std::invalid_argument("synthesize: k_holiday must be positive");
    }
    if (config.rho < 0.0 || config.rho >= 1.0) {
        throw std::invalid_argument("synthesize: rho must be in [0, 1)");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t h = config.height;
    const std::size_t w = config.width;
    const std::size_t ipd = config.intervals_per_day;

    Tensor phase({2, h, w});
    for (double& p : phase.data()) {
        p = 2.0 * std::numbers::pi * unit(rng);
    }

    Dataset ds;
    ds.manifest.height = h;
    ds.manifest.width = w;
    ds.manifest.intervals_per_day = ipd;
    ds.manifest.k_holiday = config.k_holiday;
    ds.manifest.split_index = (config.days - config.test_days) * ipd;

    static constexpr std::size_t kDryCategories[] = {0, 2, 3};
    Tensor previous = Tensor::full({2, h, w}, config.base);
    bool raining = false;
    for (std::size_t day = 0; day < config.days; ++day) {
        const std::size_t dry = kDryCategories[static_cast<std::size_t>(unit(rng) * 3.0) % 3];
        const double day_temperature = 0.3 + 0.4 * unit(rng);
        const std::size_t holiday = (config.k_holiday >= 2 && day % 7 >= 5) ? 1 : 0;
        for (std::size_t interval = 0; interval < ipd; ++interval) {
            raining = unit(rng) < (raining ? config.rain_persistence : config.rain_probability);
            const double temperature = std::clamp(day_temperature + 0.02 * gauss(rng), 0.0, 1.0);
            const double wind = unit(rng);
            ds.externals.push_back(
                ExternalRecord::make(raining ? kRainCategory : dry, temperature, wind, holiday, config.k_holiday));

            const double angle = 2.0 * std::numbers::pi * static_cast<double>(interval) / static_cast<double>(ipd);
            Tensor grid({2, h, w});
            for (std::size_t c = 0; c < 2; ++c) {
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        double v = config.base + config.amplitude * std::sin(angle + phase.at(c, y, x));
                        if (config.rho != 0.0) {
                            v += config.rho * neighbourhood_mean(previous, c, y, x);
                        }
                        if (raining) {
                            v -= config.rain_effect;
                        }
                        if (config.noise_sigma != 0.0) {
                            v += config.noise_sigma * gauss(rng);
                        }
                        grid.at(c, y, x) = std::max(0.0, v);
                    }
                }
            }
            previous = grid;
            ds.flows.push_back({day * ipd + interval, std::move(grid)});
        }
    }
    finalize_manifest(ds);
    return ds;
}

} // namespace crowdflow
