#include "crowdflow/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace crowdflow {

const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::FullyConnected: return "fully_connected";
    case OpKind::Concat: return "concat";
    case OpKind::SliceChannels: return "slice_channels";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::MulBroadcast: return "mul_broadcast";
    case OpKind::Scale: return "scale";
    case OpKind::Affine: return "affine";
    case OpKind::MulScalar: return "mul_scalar";
    case OpKind::MeanSquaredError: return "mean_squared_error";
    }
    return "unknown";
}

Var Tape::constant(Tensor value) {
    Node node;
    node.kind = OpKind::Constant;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    Node node;
    node.kind = OpKind::Param;
    node.external = &p.value;
    node.param = &p;
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    const std::size_t id = nodes_.size() - 1;
    param_nodes_.emplace(&p, id);
    return Var(this, id);
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node node;
    node.kind = kind;
    node.value = std::move(value);
    node.requires_grad = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) {
        return nodes_.at(i).requires_grad;
    });
    node.inputs = std::move(inputs);
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
    const Node& node = nodes_.at(id);
    return node.external != nullptr ? *node.external : node.value;
}

std::span<double> Tape::grad(std::size_t id) {
    Node& node = nodes_.at(id);
    if (node.param != nullptr) {
        // Leaf parameters accumulate straight into their own gradient slot.
        Parameter& p = *node.param;
        if (p.grad.shape() != p.value.shape()) {
            p.grad = Tensor(p.value.shape());
        }
        return p.grad.data();
    }
    if (node.grad.empty()) {
        node.grad.assign(value(id).size(), 0.0);
    }
    return node.grad;
}

void Tape::backward(Var loss) {
    if (loss.valid() && &loss.tape() != this) {
        throw std::invalid_argument("backward: loss belongs to a different tape");
    }
    const Tensor& lv = value(loss.id());
    if (lv.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_to_string(lv.shape()));
    }
    for (auto& node : nodes_) {
        node.grad.clear();
    }
    grad(loss.id())[0] = 1.0;

    for (std::size_t k = loss.id() + 1; k-- > 0;) {
        Node& node = nodes_[k];
        if (!node.requires_grad || node.grad.empty() || !node.backward) {
            continue;
        }
        if (has_fault_ && node.kind == fault_kind_) {
            std::vector<double> scaled(node.grad);
            for (double& g : scaled) {
                g *= fault_factor_;
            }
            node.backward(*this, k, scaled);
        } else {
            node.backward(*this, k, node.grad);
        }
    }
}

void Tape::inject_fault(OpKind kind, double factor) {
    has_fault_ = true;
    fault_kind_ = kind;
    fault_factor_ = factor;
}

std::vector<std::vector<double>> finite_difference_gradient(const std::function<double()>& f,
                                                            std::span<const FiniteDifferenceRequest> requests,
                                                            double step) {
    if (!(step > 0.0)) {
        throw std::invalid_argument("finite_difference_gradient: step must be positive");
    }
    std::vector<std::vector<double>> out;
    out.reserve(requests.size());
    for (const auto& req : requests) {
        auto data = req.param->value.data();
        std::vector<std::size_t> coords = req.coordinates;
        if (coords.empty()) {
            coords.resize(data.size());
            for (std::size_t i = 0; i < coords.size(); ++i) {
                coords[i] = i;
            }
        }
        std::vector<double> numeric;
        numeric.reserve(coords.size());
        for (std::size_t i : coords) {
            const double saved = data[i];
            data[i] = saved + step;
            const double plus = f();
            data[i] = saved - step;
            const double minus = f();
            data[i] = saved;
            numeric.push_back((plus - minus) / (2.0 * step));
        }
        out.push_back(std::move(numeric));
    }
    return out;
}

std::vector<Tensor> finite_difference_gradient(const std::function<double()>& f, std::span<Parameter* const> params,
                                               double step) {
    std::vector<FiniteDifferenceRequest> requests;
    requests.reserve(params.size());
    for (Parameter* p : params) {
        requests.push_back({p, {}});
    }
    auto numeric = finite_difference_gradient(f, requests, step);
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t k = 0; k < params.size(); ++k) {
        out.emplace_back(params[k]->value.shape(), std::move(numeric[k]));
    }
    return out;
}

} // namespace crowdflow
