#pragma once

#include "crowdflow/autodiff.hpp"

#include <optional>
#include <span>

namespace crowdflow {

// Differentiable operations. Every op validates shapes, throws
// std::invalid_argument on mismatch, and records itself on the inputs' tape.
// Spatial tensors are (channels, rows, columns) or, with a leading batch
// axis, (batch, channels, rows, columns). Vectors are (p) or (batch, p).

// Same-size 2-D convolution with zero padding of (k-1)/2 on each side.
// kernel: c_out x c_in x kh x kw (kh, kw odd); bias: c_out.
Var conv2d(Var input, Var kernel, std::optional<Var> bias = std::nullopt);

// y = weight * x + bias; x is p or batch x p, weight q x p, bias q.
Var fully_connected(Var x, Var weight, std::optional<Var> bias = std::nullopt);

// Concatenation along `axis`. All other dimensions must agree.
Var concat(std::span<const Var> parts, std::size_t axis = 0);
// Concatenation along the channel axis of two spatial tensors.
Var concat_channels(Var a, Var b);
Var slice_channels(Var x, std::size_t begin, std::size_t count);
Var reshape(Var x, Shape shape);
Var flatten(Var x);
// batch x (everything else)
Var flatten_batch(Var x);

// Outputs are kept inside the open interval (0,1) (and (-1,1) for tanh)
// even where the double-precision result would round to an endpoint.
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);

Var add(Var a, Var b);
// Element-wise product. One operand may have a single channel and is then
// broadcast across the channels of the other.
Var mul(Var a, Var b);
Var scale(Var x, double factor);
// a * x + b element-wise.
Var affine(Var x, double a, double b);
// Multiplies x by the single element of s, or, when s holds one value per
// batch entry, each x[b] by s[b].
Var mul_scalar(Var x, Var s);

// mean((pred - target)^2) over every element, as a 1-element tensor.
Var mean_squared_error(Var pred, Var target);

double sigmoid_value(double x);
double tanh_value(double x);

} // namespace crowdflow
