#pragma once

#include "crowdflow/data.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace crowdflow {

// Settings shared by the command-line tools, read from a JSON file. Every
// section and key is optional; unknown keys are rejected.
//
// {
//   "synth":     { "days": 20, "intervals_per_day": 48, "height": 8, ... , "seed": 0 },
//   "train":     { "epochs": 270, "batch_size": 64, "lr": 1e-4, "residual_units": 12, ... },
//   "gradcheck": { "height": 4, "width": 4, "seq_len": 2, "max_coords": 0, ... },
//   "variants":  ["SPN", "SRNN"],
//   "seeds":     [0, 1, 2]
// }
struct RunConfig {
    SynthConfig synth;
    std::uint64_t synth_seed = 0;
    TrainConfig train;
    SpnConfig gradcheck_model;
    GradcheckOptions gradcheck;
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace crowdflow
