#pragma once

#include "crowdflow/layers.hpp"

#include <span>
#include <vector>

namespace crowdflow {

// Attentive Crowd Flow Machine: a first ConvLSTM whose hidden state, joined
// with the current input, predicts a single-channel spatial attention map;
// a second ConvLSTM consumes the attention-reweighted input.
struct AcfmParams {
    ConvLstmParams lstm1;
    Parameter attn_kernel;  // 1 x (c_hidden + c_in) x 1 x 1
    Parameter attn_bias;    // 1
    ConvLstmParams lstm2;

    static AcfmParams create(const std::string& name, std::size_t c_in, std::size_t c_hidden, std::mt19937_64& rng);
    void collect(ParamList& out);
};

struct AcfmTrace {
    std::vector<Tensor> attention;  // 1 x h x w per step
    std::vector<Tensor> hidden1;
    std::vector<Tensor> hidden2;

    std::size_t steps() const { return attention.size(); }
};

struct AcfmStepResult {
    ConvLstmState first;
    ConvLstmState second;
    Var attention;
};

struct AcfmResult {
    Var hidden;  // last hidden state of the second LSTM
    std::vector<Var> attention;
    std::vector<Var> hidden1;
    std::vector<Var> hidden2;

    AcfmTrace trace() const;
};

// sigmoid(conv1x1(h1 ⊕ x)); h1 comes first in the concatenation.
Var attention_map(Var h1, Var x, Var kernel, Var bias);

AcfmStepResult acfm_step(Tape& tape, const ConvLstmState& s1, const ConvLstmState& s2, Var x, AcfmParams& params);

// Folds acfm_step over xs from zero states.
AcfmResult acfm_run(Tape& tape, std::span<const Var> xs, AcfmParams& params);

// Plain single ConvLSTM over the sequence; returns the last hidden state.
Var convlstm_run(Tape& tape, std::span<const Var> xs, ConvLstmParams& params);

} // namespace crowdflow
