#include "crowdflow/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace crowdflow {

Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    if (fan_in == 0 || fan_out == 0) {
        throw std::invalid_argument("xavier_init: fan_in and fan_out must be positive");
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (double& v : t.data()) {
        v = dist(rng);
    }
    return t;
}

Tensor xavier_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return xavier_init(shape, fan_in, fan_out, rng);
}

ConvParams ConvParams::create(const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k,
                              std::mt19937_64& rng) {
    ConvParams p;
    p.kernel = Parameter(name + ".kernel", xavier_init({c_out, c_in, k, k}, c_in * k * k, c_out * k * k, rng));
    p.bias = Parameter(name + ".bias", Tensor({c_out}));
    return p;
}

Var apply_conv(Tape& tape, Var x, ConvParams& p) {
    return conv2d(x, tape.param(p.kernel), tape.param(p.bias));
}

DenseParams DenseParams::create(const std::string& name, std::size_t out, std::size_t in, std::mt19937_64& rng) {
    DenseParams p;
    p.weight = Parameter(name + ".weight", xavier_init({out, in}, in, out, rng));
    p.bias = Parameter(name + ".bias", Tensor({out}));
    return p;
}

Var apply_dense(Tape& tape, Var x, DenseParams& p) {
    return fully_connected(x, tape.param(p.weight), tape.param(p.bias));
}

ConvLstmParams ConvLstmParams::create(const std::string& name, std::size_t c_in, std::size_t c_hidden,
                                      std::mt19937_64& rng) {
    ConvLstmParams p;
    p.input_channels = c_in;
    p.hidden_channels = c_hidden;
    // Fans are taken per gate block.
    p.w_x = Parameter(name + ".w_x", xavier_init({4 * c_hidden, c_in, 3, 3}, c_in * 9, c_hidden * 9, rng));
    p.w_h = Parameter(name + ".w_h", xavier_init({4 * c_hidden, c_hidden, 3, 3}, c_hidden * 9, c_hidden * 9, rng));
    p.bias = Parameter(name + ".bias", Tensor({4 * c_hidden}));
    return p;
}

ConvLstmState zero_state(Tape& tape, std::size_t channels, std::size_t height, std::size_t width) {
    return {tape.constant(Tensor({channels, height, width})), tape.constant(Tensor({channels, height, width}))};
}

ConvLstmState zero_state(Tape& tape, std::size_t channels, const Shape& like) {
    if (like.size() != 3 && like.size() != 4) {
        throw std::invalid_argument("zero_state: expected a spatial shape, got " + shape_to_string(like));
    }
    Shape shape = like;
    shape[shape.size() - 3] = channels;
    return {tape.constant(Tensor(shape)), tape.constant(Tensor(shape))};
}

namespace {

// Shape with the channel axis replaced, for comparing spatial tensors.
Shape without_channels(const Shape& s) {
    Shape r = s;
    r[r.size() - 3] = 0;
    return r;
}

bool is_spatial(const Shape& s) { return s.size() == 3 || s.size() == 4; }

std::size_t channels_of(const Shape& s) { return s[s.size() - 3]; }

} // namespace

ConvLstmState convlstm_step(Tape& tape, const ConvLstmState& state, Var x, ConvLstmParams& params) {
    const std::size_t c = params.hidden_channels;
    const Shape& hs = state.h.shape();
    if (hs != state.c.shape()) {
        throw std::invalid_argument("convlstm_step: hidden and cell state shapes differ");
    }
    if (!is_spatial(hs) || channels_of(hs) != c) {
        throw std::invalid_argument("convlstm_step: state shape " + shape_to_string(hs) + " does not match " +
                                    std::to_string(c) + " hidden channels");
    }
    const Shape& xs = x.shape();
    if (xs.size() != hs.size() || channels_of(xs) != params.input_channels ||
        without_channels(xs) != without_channels(hs)) {
        throw std::invalid_argument("convlstm_step: input shape " + shape_to_string(xs) + " incompatible with state " +
                                    shape_to_string(hs));
    }
    Var gates = add(conv2d(x, tape.param(params.w_x), tape.param(params.bias)), conv2d(state.h, tape.param(params.w_h)));
    Var in_gate = sigmoid(slice_channels(gates, 0, c));
    Var forget_gate = sigmoid(slice_channels(gates, c, c));
    Var out_gate = sigmoid(slice_channels(gates, 2 * c, c));
    Var candidate = tanh(slice_channels(gates, 3 * c, c));
    Var cell = add(mul(forget_gate, state.c), mul(in_gate, candidate));
    Var hidden = mul(out_gate, tanh(cell));
    return {hidden, cell};
}

ResidualUnitParams ResidualUnitParams::create(const std::string& name, std::size_t channels, std::mt19937_64& rng) {
    return {ConvParams::create(name + ".conv1", channels, channels, 3, rng),
            ConvParams::create(name + ".conv2", channels, channels, 3, rng)};
}

Var residual_unit(Tape& tape, Var x, ResidualUnitParams& params) {
    const std::size_t channels = params.conv1.kernel.value.dim(1);
    if (!is_spatial(x.shape()) || channels_of(x.shape()) != channels) {
        throw std::invalid_argument("residual_unit: expected " + std::to_string(channels) + " channels, got " +
                                    shape_to_string(x.shape()));
    }
    Var inner = relu(apply_conv(tape, x, params.conv1));
    return relu(add(x, apply_conv(tape, inner, params.conv2)));
}

FlowExtractorParams FlowExtractorParams::create(const std::string& name, std::size_t channels,
                                                std::size_t residual_units, std::mt19937_64& rng) {
    FlowExtractorParams p;
    p.input = ConvParams::create(name + ".input", channels, 2, 3, rng);
    for (std::size_t i = 0; i < residual_units; ++i) {
        p.units.push_back(ResidualUnitParams::create(name + ".res" + std::to_string(i), channels, rng));
    }
    return p;
}

void FlowExtractorParams::collect(ParamList& out) {
    input.collect(out);
    for (auto& unit : units) {
        unit.collect(out);
    }
}

Var flow_feature_extractor(Tape& tape, Var flow, FlowExtractorParams& params) {
    Var x = apply_conv(tape, flow, params.input);
    for (auto& unit : params.units) {
        x = residual_unit(tape, x, unit);
    }
    return x;
}

ExternalEncoderParams ExternalEncoderParams::create(const std::string& name, std::size_t ext_len, std::size_t hidden,
                                                    std::size_t channels, std::size_t height, std::size_t width,
                                                    std::mt19937_64& rng) {
    ExternalEncoderParams p;
    p.channels = channels;
    p.height = height;
    p.width = width;
    p.fc1 = DenseParams::create(name + ".fc1", hidden, ext_len, rng);
    p.fc2 = DenseParams::create(name + ".fc2", channels * height * width, hidden, rng);
    return p;
}

Var external_factor_encoder(Tape& tape, Var ext, ExternalEncoderParams& params) {
    const std::size_t expected = params.fc1.weight.value.dim(1);
    const Shape& es = ext.shape();
    const bool batched = es.size() == 2;
    if ((es.size() != 1 && !batched) || es.back() != expected) {
        throw std::invalid_argument("external_factor_encoder: expected vector of length " + std::to_string(expected) +
                                    ", got " + shape_to_string(es));
    }
    Var hidden = relu(apply_dense(tape, ext, params.fc1));
    Shape out = batched ? Shape{es[0], params.channels, params.height, params.width}
                        : Shape{params.channels, params.height, params.width};
    return reshape(apply_dense(tape, hidden, params.fc2), std::move(out));
}

} // namespace crowdflow
