#include "crowdflow/gradcheck.hpp"

#include "crowdflow/data.hpp"
#include "crowdflow/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <stdexcept>

namespace crowdflow {

namespace {

Tensor uniform_tensor(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

Tensor random_external(std::size_t ext_len, std::mt19937_64& rng) {
    if (ext_len <= kWeatherCategories + 2) {
        throw std::invalid_argument("ext_len must exceed 18 to hold at least one holiday category");
    }
    const std::size_t k = ext_len - kWeatherCategories - 2;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto weather = std::uniform_int_distribution<std::size_t>(0, kWeatherCategories - 1)(rng);
    const double temperature = unit(rng);
    const double wind = unit(rng);
    const auto holiday = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    return encode_external(ExternalRecord::make(weather, temperature, wind, holiday, k));
}

std::vector<std::size_t> pick_coordinates(std::size_t size, std::size_t max_coords, std::mt19937_64& rng) {
    std::vector<std::size_t> all(size);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (max_coords == 0 || size <= std::max<std::size_t>(max_coords, 2)) {
        return all;
    }
    max_coords = std::max<std::size_t>(max_coords, 2);
    std::vector<std::size_t> out = {0, size - 1};
    std::vector<std::size_t> middle(all.begin() + 1, all.end() - 1);
    std::shuffle(middle.begin(), middle.end(), rng);
    out.insert(out.end(), middle.begin(), middle.begin() + static_cast<std::ptrdiff_t>(max_coords - 2));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

ModelInput random_model_input(const SpnConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Shape flow_shape = {2, config.height, config.width};
    ModelInput in;
    in.ext_sum = Tensor({config.ext_len});
    auto add_ext = [&](std::vector<Tensor>& list) {
        Tensor e = random_external(config.ext_len, rng);
        for (std::size_t i = 0; i < e.size(); ++i) {
            in.ext_sum[i] += e[i];
        }
        list.push_back(std::move(e));
    };
    for (std::size_t k = 0; k < config.seq_len; ++k) {
        in.seq_flows.push_back(uniform_tensor(flow_shape, -1.0, 1.0, rng));
        add_ext(in.seq_ext);
    }
    for (std::size_t k = 0; k < config.period_len; ++k) {
        in.per_flows.push_back(uniform_tensor(flow_shape, -1.0, 1.0, rng));
        add_ext(in.per_ext);
    }
    in.target = uniform_tensor(flow_shape, -0.9, 0.9, rng);
    return in;
}

GradcheckReport gradcheck(const SpnConfig& config, Variant variant, std::uint64_t seed,
                          const GradcheckOptions& options) {
    validate(config, variant);
    Model model = make_model(config, variant, seed);
    ParamList params = model.params.list();

    // Xavier leaves biases at zero; give them generic values so every path is exercised.
    std::mt19937_64 rng(seed ^ 0xC2B2AE3D27D4EB4FULL);
    std::uniform_real_distribution<double> small(-0.1, 0.1);
    for (Parameter* p : params) {
        if (p->value.rank() == 1) {
            for (double& v : p->value.data()) {
                v = small(rng);
            }
        }
    }
    const ModelInput input = random_model_input(config, seed + 1);

    for (Parameter* p : params) {
        p->zero_grad();
    }
    GradcheckReport report;
    report.variant = std::string(variant_name(variant));
    report.threshold = options.threshold;
    {
        Tape tape;
        if (options.fault_kind) {
            tape.inject_fault(*options.fault_kind, options.fault_factor);
        }
        Var loss = euclidean_loss(forward(tape, input, model).prediction, input.target);
        report.loss = loss.value()[0];
        tape.backward(loss);
    }

    std::vector<FiniteDifferenceRequest> requests;
    for (Parameter* p : params) {
        requests.push_back({p, pick_coordinates(p->value.size(), options.max_coords, rng)});
    }
    auto f = [&] {
        Tape tape;
        return euclidean_loss(forward(tape, input, model).prediction, input.target).value()[0];
    };
    const auto numeric = finite_difference_gradient(f, requests, options.step);

    for (std::size_t k = 0; k < requests.size(); ++k) {
        const Parameter& p = *requests[k].param;
        GradcheckEntry e{p.name, p.value.shape(), requests[k].coordinates.size(), 0.0, 0.0};
        for (std::size_t j = 0; j < requests[k].coordinates.size(); ++j) {
            const double a = p.grad[requests[k].coordinates[j]];
            const double n = numeric[k][j];
            const double abs_err = std::abs(a - n);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(n), options.floor});
            e.max_abs_error = std::max(e.max_abs_error, abs_err);
            e.max_rel_error = std::max(e.max_rel_error, rel_err);
        }
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.entries.push_back(std::move(e));
    }
    return report;
}

void GradcheckReport::print(std::ostream& out) const {
    out << "variant " << variant << "  loss " << std::setprecision(10) << loss << '\n';
    for (const auto& e : entries) {
        out << std::left << std::setw(36) << e.name << std::setw(18) << shape_to_string(e.shape) << std::right
            << std::setw(8) << e.checked << "  rel " << std::scientific << std::setprecision(3) << e.max_rel_error
            << "  abs " << e.max_abs_error << std::defaultfloat << '\n';
    }
    out << "max relative error " << std::scientific << std::setprecision(3) << max_rel_error << " (threshold "
        << threshold << ") " << (passed() ? "PASS" : "FAIL") << std::defaultfloat << '\n';
}

} // namespace crowdflow
