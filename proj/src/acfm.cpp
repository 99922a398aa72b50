#include "crowdflow/acfm.hpp"

#include <algorithm>
#include <stdexcept>

namespace crowdflow {

AcfmParams AcfmParams::create(const std::string& name, std::size_t c_in, std::size_t c_hidden, std::mt19937_64& rng) {
    AcfmParams p;
    p.lstm1 = ConvLstmParams::create(name + ".lstm1", c_in, c_hidden, rng);
    p.attn_kernel = Parameter(name + ".attn.kernel", xavier_init({1, c_hidden + c_in, 1, 1}, c_hidden + c_in, 1, rng));
    p.attn_bias = Parameter(name + ".attn.bias", Tensor({1}));
    p.lstm2 = ConvLstmParams::create(name + ".lstm2", c_in, c_hidden, rng);
    return p;
}

void AcfmParams::collect(ParamList& out) {
    lstm1.collect(out);
    out.push_back(&attn_kernel);
    out.push_back(&attn_bias);
    lstm2.collect(out);
}

namespace {

// Drops a leading batch axis of size 1.
Tensor squeezed(const Var& v) {
    Tensor t = v.value();
    if (t.rank() == 4 && t.dim(0) == 1) {
        t.reshape(Shape(t.shape().begin() + 1, t.shape().end()));
    }
    return t;
}

} // namespace

AcfmTrace AcfmResult::trace() const {
    AcfmTrace t;
    for (const Var& v : attention) {
        t.attention.push_back(squeezed(v));
    }
    for (const Var& v : hidden1) {
        t.hidden1.push_back(squeezed(v));
    }
    for (const Var& v : hidden2) {
        t.hidden2.push_back(squeezed(v));
    }
    return t;
}

Var attention_map(Var h1, Var x, Var kernel, Var bias) {
    const Shape& hs = h1.shape();
    const Shape& xs = x.shape();
    const bool ok = (hs.size() == 3 || hs.size() == 4) && hs.size() == xs.size() &&
                    std::equal(hs.end() - 2, hs.end(), xs.end() - 2) && (hs.size() == 3 || hs[0] == xs[0]);
    if (!ok) {
        throw std::invalid_argument("attention_map: spatial mismatch " + shape_to_string(hs) + " vs " +
                                    shape_to_string(xs));
    }
    const Shape& ks = kernel.shape();
    if (ks.size() != 4 || ks[0] != 1 || ks[2] != 1 || ks[3] != 1) {
        throw std::invalid_argument("attention_map: kernel must be 1 x c x 1 x 1, got " + shape_to_string(ks));
    }
    return sigmoid(conv2d(concat_channels(h1, x), kernel, bias));
}

AcfmStepResult acfm_step(Tape& tape, const ConvLstmState& s1, const ConvLstmState& s2, Var x, AcfmParams& params) {
    ConvLstmState first = convlstm_step(tape, s1, x, params.lstm1);
    Var weights = attention_map(first.h, x, tape.param(params.attn_kernel), tape.param(params.attn_bias));
    ConvLstmState second = convlstm_step(tape, s2, mul(x, weights), params.lstm2);
    return {first, second, weights};
}

AcfmResult acfm_run(Tape& tape, std::span<const Var> xs, AcfmParams& params) {
    if (xs.empty()) {
        throw std::invalid_argument("acfm_run: empty input sequence");
    }
    const Shape& shape = xs.front().shape();
    for (const Var& x : xs) {
        if (x.shape() != shape) {
            throw std::invalid_argument("acfm_run: non-uniform input shapes");
        }
    }
    ConvLstmState s1 = zero_state(tape, params.lstm1.hidden_channels, shape);
    ConvLstmState s2 = zero_state(tape, params.lstm2.hidden_channels, shape);
    AcfmResult result;
    for (const Var& x : xs) {
        AcfmStepResult step = acfm_step(tape, s1, s2, x, params);
        s1 = step.first;
        s2 = step.second;
        result.attention.push_back(step.attention);
        result.hidden1.push_back(s1.h);
        result.hidden2.push_back(s2.h);
    }
    result.hidden = s2.h;
    return result;
}

Var convlstm_run(Tape& tape, std::span<const Var> xs, ConvLstmParams& params) {
    if (xs.empty()) {
        throw std::invalid_argument("convlstm_run: empty input sequence");
    }
    const Shape& shape = xs.front().shape();
    ConvLstmState s = zero_state(tape, params.hidden_channels, shape);
    for (const Var& x : xs) {
        s = convlstm_step(tape, s, x, params);
    }
    return s.h;
}

} // namespace crowdflow
