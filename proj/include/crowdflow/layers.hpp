#pragma once

#include "crowdflow/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace crowdflow {

// Glorot/Xavier uniform draws in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

// Appends pointers to every learnable tensor of a parameter group, in declaration order.
using ParamList = std::vector<Parameter*>;

struct ConvParams {
    Parameter kernel;
    Parameter bias;

    static ConvParams create(const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k,
                             std::mt19937_64& rng);
    void collect(ParamList& out) { out.push_back(&kernel); out.push_back(&bias); }
};

Var apply_conv(Tape& tape, Var x, ConvParams& p);

struct DenseParams {
    Parameter weight;
    Parameter bias;

    static DenseParams create(const std::string& name, std::size_t out, std::size_t in, std::mt19937_64& rng);
    void collect(ParamList& out) { out.push_back(&weight); out.push_back(&bias); }
};

Var apply_dense(Tape& tape, Var x, DenseParams& p);

// Gate blocks are stacked along the output-channel axis in the order
// input, forget, output, candidate.
struct ConvLstmParams {
    std::size_t input_channels = 0;
    std::size_t hidden_channels = 0;
    Parameter w_x;   // 4c x c_in x 3 x 3
    Parameter w_h;   // 4c x c x 3 x 3
    Parameter bias;  // 4c

    static ConvLstmParams create(const std::string& name, std::size_t c_in, std::size_t c_hidden,
                                 std::mt19937_64& rng);
    void collect(ParamList& out) { out.push_back(&w_x); out.push_back(&w_h); out.push_back(&bias); }
};

struct ConvLstmState {
    Var h;
    Var c;
};

ConvLstmState zero_state(Tape& tape, std::size_t channels, std::size_t height, std::size_t width);
// Zero state matching a (batched or unbatched) input shape, with `channels` channels.
ConvLstmState zero_state(Tape& tape, std::size_t channels, const Shape& like);

ConvLstmState convlstm_step(Tape& tape, const ConvLstmState& state, Var x, ConvLstmParams& params);

struct ResidualUnitParams {
    ConvParams conv1;
    ConvParams conv2;

    static ResidualUnitParams create(const std::string& name, std::size_t channels, std::mt19937_64& rng);
    void collect(ParamList& out) { conv1.collect(out); conv2.collect(out); }
};

// relu(x + conv2(relu(conv1(x))))
Var residual_unit(Tape& tape, Var x, ResidualUnitParams& params);

struct FlowExtractorParams {
    ConvParams input;  // 2 -> channels lift
    std::vector<ResidualUnitParams> units;

    static FlowExtractorParams create(const std::string& name, std::size_t channels, std::size_t residual_units,
                                      std::mt19937_64& rng);
    void collect(ParamList& out);
};

// Input projection followed by the residual stack; keeps h x w.
Var flow_feature_extractor(Tape& tape, Var flow, FlowExtractorParams& params);

struct ExternalEncoderParams {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    DenseParams fc1;  // L -> hidden
    DenseParams fc2;  // hidden -> channels*h*w

    static ExternalEncoderParams create(const std::string& name, std::size_t ext_len, std::size_t hidden,
                                        std::size_t channels, std::size_t height, std::size_t width,
                                        std::mt19937_64& rng);
    void collect(ParamList& out) { fc1.collect(out); fc2.collect(out); }
};

// fc -> relu -> fc -> reshape to channels x h x w (batch x channels x h x w for batch x L input).
Var external_factor_encoder(Tape& tape, Var ext, ExternalEncoderParams& params);

} // namespace crowdflow
