#pragma once

#include "crowdflow/autodiff.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace test {

inline crowdflow::Tensor random_tensor(const crowdflow::Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                       double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    crowdflow::Tensor t(shape);
    for (double& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

inline double max_abs_diff(const crowdflow::Tensor& a, const crowdflow::Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

// Largest |a - n| / max(|a|, |n|, floor) between backward and central differences.
inline double grad_rel_error(const std::function<crowdflow::Var(crowdflow::Tape&)>& loss_fn,
                             std::span<crowdflow::Parameter* const> params, double floor = 1e-4) {
    for (auto* p : params) {
        p->zero_grad();
    }
    {
        crowdflow::Tape tape;
        tape.backward(loss_fn(tape));
    }
    auto f = [&] {
        crowdflow::Tape tape;
        return loss_fn(tape).value()[0];
    };
    const auto numeric = crowdflow::finite_difference_gradient(f, params, 1e-5);
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < numeric[k].size(); ++i) {
            const double a = params[k]->grad[i];
            const double n = numeric[k][i];
            worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
        }
    }
    return worst;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("crowdflow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace test
