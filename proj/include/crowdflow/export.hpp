#pragma once

#include "crowdflow/acfm.hpp"
#include "crowdflow/data.hpp"
#include "crowdflow/spn.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace crowdflow {

// round(v * 255) with halves rounded up; v is clamped to [0, 1] first.
int gray_level(double v);

// ASCII "P2" graymap of a 1 x h x w (or h x w) map with values in [0, 1].
std::string render_pgm(const Tensor& map);
std::string render_csv(const Tensor& map);

// Per-step |input flow - ground truth|, averaged over the two channels and
// halved so normalized flows in [-1, 1] map into [0, 1].
std::vector<Tensor> residual_maps(const std::vector<Tensor>& inputs, const Tensor& target);

// Writes attention_<k>.pgm and attention_<k>.csv for every step and, when
// residuals are given, residual_<k>.pgm and residual_<k>.csv beside them.
// Returns the written paths in order.
std::vector<std::filesystem::path> export_attention(const AcfmTrace& trace, const std::filesystem::path& dir,
                                                    const std::vector<Tensor>* residuals = nullptr);

struct FusionBin {
    std::size_t interval = 0;
    double mean_r = 0.0;
    std::size_t count = 0;
};

// Mean fusion weight r grouped by time-of-day interval (ascending, only
// intervals that occur). Requires an SPN model.
std::vector<FusionBin> fusion_profile(Model& model, const std::vector<Sample>& samples,
                                      const DatasetManifest& manifest);
void write_fusion_profile(const std::vector<FusionBin>& bins, std::ostream& out);

} // namespace crowdflow
