#pragma once

#include "crowdflow/acfm.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace crowdflow {

// Model hyperparameters. The last three widths default to the published
// architecture; tests shrink them to make exhaustive gradient checks cheap.
struct SpnConfig {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t seq_len = 3;         // n
    std::size_t period_len = 2;      // m
    std::size_t residual_units = 12; // N
    std::size_t intervals_per_day = 48;
    std::size_t ext_len = 59;
    std::size_t channels = 16;
    std::size_t ext_hidden = 256;
    std::size_t fusion_hidden = 512;
};

// TaxiBJ-style and BikeNYC-style presets.
SpnConfig taxibj_config();
SpnConfig bikenyc_config();

enum class Variant {
    PCNN,
    SCNN,
    PRNN_NO_ATTN,
    PRNN,
    SRNN_NO_ATTN,
    SRNN,
    SPN_NO_FUSION,
    SPN,
};

inline constexpr std::array<Variant, 8> kAllVariants = {
    Variant::PCNN, Variant::PRNN_NO_ATTN, Variant::PRNN,          Variant::SCNN,
    Variant::SRNN_NO_ATTN, Variant::SRNN, Variant::SPN_NO_FUSION, Variant::SPN,
};

std::string_view variant_name(Variant v);
// Accepts the canonical names ("SPN-w/o-Fusion", "SRNN-w/o-Attention", ...)
// as well as the enum spellings ("SPN_NO_FUSION"), case-insensitively.
Variant parse_variant(std::string_view name);
bool uses_sequential(Variant v);
bool uses_periodic(Variant v);

void validate(const SpnConfig& config, Variant variant);

// One model input: normalized flow maps (2 x h x w) and encoded external
// vectors for the sequential and periodic histories, in time order.
struct ModelInput {
    std::vector<Tensor> seq_flows;
    std::vector<Tensor> seq_ext;
    std::vector<Tensor> per_flows;
    std::vector<Tensor> per_ext;
    Tensor ext_sum;  // element-wise sum of all sequential and periodic external vectors
    Tensor target;   // normalized 2 x h x w
};

// A batch holds the same fields with a leading batch axis on every tensor.
bool is_batched(const ModelInput& input);
// Stacks single-sample inputs into one batch.
ModelInput stack_inputs(std::span<const ModelInput> inputs);

struct FusionParams {
    DenseParams fc1;
    DenseParams fc2;
    void collect(ParamList& out) { fc1.collect(out); fc2.collect(out); }
};

// Groups absent for a variant stay empty.
struct SpnParams {
    FlowExtractorParams flow;
    ExternalEncoderParams ext;
    std::optional<AcfmParams> seq_acfm;
    std::optional<AcfmParams> per_acfm;
    std::optional<ConvLstmParams> seq_lstm;
    std::optional<ConvLstmParams> per_lstm;
    std::optional<ConvParams> seq_post;
    std::optional<ConvParams> per_post;
    std::optional<ConvParams> seq_concat;
    std::optional<ConvParams> per_concat;
    std::optional<FusionParams> fusion;
    std::optional<ConvParams> output;

    // Flat, ordered list of every present tensor.
    ParamList list();
};

SpnParams init_params(const SpnConfig& config, Variant variant, std::uint64_t seed);

struct Model {
    SpnConfig config;
    Variant variant = Variant::SPN;
    SpnParams params;
};

Model make_model(const SpnConfig& config, Variant variant, std::uint64_t seed);

struct ForwardResult {
    Var prediction;                   // 2 x h x w in (-1, 1); batch x 2 x h x w for batched input
    std::optional<Var> fusion_weight; // SPN / SPN-w/o-Fusion; 1 element, or batch x 1
    std::optional<AcfmResult> seq;
    std::optional<AcfmResult> per;
};

// F = flow features ⊕ external features (2 * channels).
Var embed_timestep(Tape& tape, const Tensor& flow, const Tensor& ext, SpnParams& params);

Var sequential_branch(Tape& tape, std::span<const Var> features, const SpnConfig& config, SpnParams& params,
                      std::optional<AcfmResult>* trace = nullptr);
Var periodic_branch(Tape& tape, std::span<const Var> features, const SpnConfig& config, SpnParams& params,
                    std::optional<AcfmResult>* trace = nullptr);

// sigmoid(fc2(relu(fc1(flatten(S) ⊕ flatten(P) ⊕ E)))), a 1-element tensor.
Var fusion_weight(Tape& tape, Var seq_feature, Var per_feature, Var ext_sum, FusionParams& params);

// tanh(T(r * S + (1 - r) * P)).
Var fuse_and_predict(Tape& tape, Var seq_feature, Var per_feature, Var r, ConvParams& output);

ForwardResult forward(Tape& tape, const ModelInput& input, Variant variant, const SpnConfig& config,
                      SpnParams& params);
inline ForwardResult forward(Tape& tape, const ModelInput& input, Model& model) {
    return forward(tape, input, model.variant, model.config, model.params);
}

// Convenience evaluation without keeping the tape.
Tensor predict(const ModelInput& input, Model& model);

} // namespace crowdflow
