#pragma once

#include "crowdflow/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace crowdflow {

// A learnable tensor with its gradient slot. Gradients accumulate across
// backward passes until zero_grad().
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

enum class OpKind {
    Constant,
    Param,
    Conv2d,
    FullyConnected,
    Concat,
    SliceChannels,
    Reshape,
    Sigmoid,
    Tanh,
    Relu,
    Add,
    Mul,
    MulBroadcast,
    Scale,
    Affine,
    MulScalar,
    MeanSquaredError,
};

const char* op_name(OpKind kind);

class Tape;

// Handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Backward rule: receives the node's own id and the gradient of its output,
// and pushes contributions into input gradients through the tape.
using BackwardFn = std::function<void(Tape& tape, std::size_t self, std::span<const double> grad_out)>;

// Records operations in execution order; backward() replays them in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    // Parameters are registered at most once per tape; repeated use shares the node.
    Var param(Parameter& p);

    Var record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const;
    OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient buffer of a node, allocated zero on first access.
    std::span<double> grad(std::size_t id);

    // Reverse pass from a scalar loss. Parameter gradients are added into Parameter::grad.
    void backward(Var loss);

    // Test fixture: scale the output gradient seen by every backward rule of `kind`.
    void inject_fault(OpKind kind, double factor);

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        Tensor value;
        const Tensor* external = nullptr;
        Parameter* param = nullptr;
        std::vector<double> grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    // deque keeps value references stable while the tape grows.
    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool has_fault_ = false;
    OpKind fault_kind_ = OpKind::Constant;
    double fault_factor_ = 1.0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// Central finite differences: (f(θ+h·e_i) − f(θ−h·e_i)) / 2h for each listed
// coordinate of each parameter. Parameters are restored after evaluation.
// An empty coordinate list for a parameter means "every coordinate".
struct FiniteDifferenceRequest {
    Parameter* param = nullptr;
    std::vector<std::size_t> coordinates;
};

std::vector<std::vector<double>> finite_difference_gradient(const std::function<double()>& f,
                                                            std::span<const FiniteDifferenceRequest> requests,
                                                            double step);

// Convenience form: every coordinate of every parameter.
std::vector<Tensor> finite_difference_gradient(const std::function<double()>& f, std::span<Parameter* const> params,
                                               double step);

} // namespace crowdflow
