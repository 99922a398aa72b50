#pragma once

#include "crowdflow/spn.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace crowdflow {

struct GradcheckOptions {
    double step = 1e-5;
    double threshold = 1e-5;
    // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    // Central differences of an O(1) loss carry absolute noise near 1e-11, so
    // components far below the floor are effectively compared absolutely.
    double floor = 1e-4;
    // Coordinates checked per tensor; 0 checks every coordinate. The first and
    // last coordinates are always included.
    std::size_t max_coords = 128;
    std::optional<OpKind> fault_kind;  // corrupt one backward rule (mutation test)
    double fault_factor = 1.5;
};

struct GradcheckEntry {
    std::string name;
    Shape shape;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};

struct GradcheckReport {
    std::string variant;
    std::vector<GradcheckEntry> entries;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    double loss = 0.0;

    bool passed() const { return max_rel_error < threshold; }
    void print(std::ostream& out) const;
};

// One random normalized sample matching the config's shapes.
ModelInput random_model_input(const SpnConfig& config, std::uint64_t seed);

// Backward pass against central finite differences of the loss for one random sample.
GradcheckReport gradcheck(const SpnConfig& config, Variant variant, std::uint64_t seed,
                          const GradcheckOptions& options = {});

} // namespace crowdflow
