#include "crowdflow/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace crowdflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

constexpr double kOneBelow = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
constexpr double kTinyPositive = std::numeric_limits<double>::min();

[[noreturn]] void fail(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

void same_tape(const Var& a, const Var& b, const char* op) {
    if (&a.tape() != &b.tape()) {
        fail(op, "operands live on different tapes");
    }
}

void accumulate(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

ArrMap arr(std::span<double> s) { return ArrMap(s.data(), idx(s.size())); }
ConstArrMap arr(std::span<const double> s) { return ConstArrMap(s.data(), idx(s.size())); }

void sigmoid_array(const double* x, double* y, std::size_t n) {
    ArrMap out(y, idx(n));
    out = (1.0 + (-ConstArrMap(x, idx(n))).exp()).inverse();
    out = out.max(kTinyPositive).min(kOneBelow);
}

// tanh(x) = sign(x) (1 - 2 / (exp(2|x|) + 1))
void tanh_array(const double* x, double* y, std::size_t n) {
    ConstArrMap in(x, idx(n));
    ArrMap out(y, idx(n));
    out = 1.0 - 2.0 / ((2.0 * in.abs()).exp() + 1.0);
    out = (in < 0.0).select(-out, out);
    out = out.max(-kOneBelow).min(kOneBelow);
}

// Spatial layout of a rank-3 or rank-4 tensor.
struct Spatial {
    std::size_t batch = 1;
    std::size_t channels = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    bool batched = false;

    std::size_t plane() const { return h * w; }
};

Spatial spatial(const Shape& s, const char* op, const char* what) {
    if (s.size() == 3) {
        return {1, s[0], s[1], s[2], false};
    }
    if (s.size() == 4) {
        return {s[0], s[1], s[2], s[3], true};
    }
    fail(op, std::string(what) + " must be c x h x w or batch x c x h x w, got " + shape_to_string(s));
}

struct ConvGeometry {
    std::size_t batch, c_in, h, w, c_out, kh, kw;
    std::size_t rows() const { return c_in * kh * kw; }
    std::size_t pixels() const { return h * w; }
    std::size_t columns() const { return batch * h * w; }
};

// rows x (batch * pixels); column b * pixels + p belongs to sample b.
RowMat im2col(const double* in, const ConvGeometry& g) {
    RowMat cols = RowMat::Zero(idx(g.rows()), idx(g.columns()));
    const auto ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    const auto pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
            const double* plane = in + (b * g.c_in + ci) * g.pixels();
            for (std::size_t dy = 0; dy < g.kh; ++dy) {
                for (std::size_t dx = 0; dx < g.kw; ++dx) {
                    double* row = cols.data() + ((ci * g.kh + dy) * g.kw + dx) * g.columns() + b * g.pixels();
                    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - ph;
                    const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pw;
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
                    for (std::ptrdiff_t y = 0; y < H; ++y) {
                        const std::ptrdiff_t sy = y + oy;
                        if (sy < 0 || sy >= H) {
                            continue;
                        }
                        for (std::ptrdiff_t x = x0; x < x1; ++x) {
                            row[y * W + x] = plane[sy * W + x + ox];
                        }
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_accumulate(const RowMat& cols, double* out, const ConvGeometry& g) {
    const auto ph = static_cast<std::ptrdiff_t>(g.kh / 2);
    const auto pw = static_cast<std::ptrdiff_t>(g.kw / 2);
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t ci = 0; ci < g.c_in; ++ci) {
            double* plane = out + (b * g.c_in + ci) * g.pixels();
            for (std::size_t dy = 0; dy < g.kh; ++dy) {
                for (std::size_t dx = 0; dx < g.kw; ++dx) {
                    const double* row =
                        cols.data() + ((ci * g.kh + dy) * g.kw + dx) * g.columns() + b * g.pixels();
                    const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - ph;
                    const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pw;
                    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -ox);
                    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - ox);
                    for (std::ptrdiff_t y = 0; y < H; ++y) {
                        const std::ptrdiff_t sy = y + oy;
                        if (sy < 0 || sy >= H) {
                            continue;
                        }
                        for (std::ptrdiff_t x = x0; x < x1; ++x) {
                            plane[sy * W + x + ox] += row[y * W + x];
                        }
                    }
                }
            }
        }
    }
}

template <typename F>
Var activation(Var x, OpKind kind, F forward, double (*derivative_from_output)(double)) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    forward(xv.raw(), out.raw(), out.size());
    const std::size_t xi = x.id();
    return x.tape().record(kind, std::move(out), {xi},
                           [xi, derivative_from_output](Tape& tape, std::size_t self, std::span<const double> g) {
                               const Tensor& y = tape.value(self);
                               auto dx = tape.grad(xi);
                               for (std::size_t i = 0; i < dx.size(); ++i) {
                                   dx[i] += g[i] * derivative_from_output(y[i]);
                               }
                           });
}

// True when `map` has one channel and otherwise matches `full`.
bool is_channel_broadcast(const Shape& full, const Shape& map) {
    if (full.size() != map.size() || (full.size() != 3 && full.size() != 4)) {
        return false;
    }
    const std::size_t ca = full.size() - 3;
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (i == ca ? map[i] != 1 : map[i] != full[i]) {
            return false;
        }
    }
    return true;
}

Var mul_broadcast(Var a, Var w) {
    const Tensor& av = a.value();
    const Tensor& wv = w.value();
    const Spatial s = spatial(av.shape(), "mul", "operand");
    const std::size_t channels = s.channels;
    const std::size_t plane = s.plane();
    const std::size_t batch = s.batch;
    Tensor out(av.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        const double* wp = wv.raw() + b * plane;
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                out[base + p] = av[base + p] * wp[p];
            }
        }
    }
    const std::size_t ai = a.id();
    const std::size_t wi = w.id();
    return a.tape().record(
        OpKind::MulBroadcast, std::move(out), {ai, wi},
        [ai, wi, batch, channels, plane](Tape& tape, std::size_t, std::span<const double> g) {
            const Tensor& av = tape.value(ai);
            const Tensor& wv = tape.value(wi);
            if (tape.requires_grad(ai)) {
                auto da = tape.grad(ai);
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* wp = wv.raw() + b * plane;
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t base = (b * channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            da[base + p] += g[base + p] * wp[p];
                        }
                    }
                }
            }
            if (tape.requires_grad(wi)) {
                auto dw = tape.grad(wi);
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        const std::size_t base = (b * channels + c) * plane;
                        for (std::size_t p = 0; p < plane; ++p) {
                            dw[b * plane + p] += g[base + p] * av[base + p];
                        }
                    }
                }
            }
        });
}

} // namespace

double sigmoid_value(double x) {
    double y;
    sigmoid_array(&x, &y, 1);
    return y;
}

double tanh_value(double x) {
    double y;
    tanh_array(&x, &y, 1);
    return y;
}

Var conv2d(Var input, Var kernel, std::optional<Var> bias) {
    same_tape(input, kernel, "conv2d");
    const Tensor& in = input.value();
    const Tensor& k = kernel.value();
    const Spatial s = spatial(in.shape(), "conv2d", "input");
    if (k.rank() != 4) {
        fail("conv2d", "kernel must be c_out x c_in x kh x kw, got " + shape_to_string(k.shape()));
    }
    if (k.dim(1) != s.channels) {
        fail("conv2d", "kernel expects " + std::to_string(k.dim(1)) + " input channels, input has " +
                           std::to_string(s.channels));
    }
    if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0) {
        fail("conv2d", "kernel spatial size must be odd, got " + shape_to_string(k.shape()));
    }
    const ConvGeometry g{s.batch, s.channels, s.h, s.w, k.dim(0), k.dim(2), k.dim(3)};
    if (bias) {
        same_tape(input, *bias, "conv2d");
        if (bias->value().size() != g.c_out) {
            fail("conv2d", "bias length " + std::to_string(bias->value().size()) + " != output channels " +
                               std::to_string(g.c_out));
        }
    }

    RowMat cols = im2col(in.raw(), g);
    Tensor out(s.batched ? Shape{g.batch, g.c_out, g.h, g.w} : Shape{g.c_out, g.h, g.w});
    {
        ConstMatMap K(k.raw(), idx(g.c_out), idx(g.rows()));
        RowMat prod = K * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
            MatMap O(out.raw() + b * g.c_out * g.pixels(), idx(g.c_out), idx(g.pixels()));
            O = prod.middleCols(idx(b * g.pixels()), idx(g.pixels()));
            if (bias) {
                const Tensor& bv = bias->value();
                for (std::size_t o = 0; o < g.c_out; ++o) {
                    O.row(idx(o)).array() += bv[o];
                }
            }
        }
    }

    std::vector<std::size_t> inputs{input.id(), kernel.id()};
    if (bias) {
        inputs.push_back(bias->id());
    }
    const std::size_t ii = input.id();
    const std::size_t ki = kernel.id();
    const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
    return input.tape().record(
        OpKind::Conv2d, std::move(out), std::move(inputs),
        [ii, ki, bi, g, cols = std::move(cols)](Tape& tape, std::size_t, std::span<const double> grad_out) {
            const auto c_out = idx(g.c_out);
            const auto pixels = idx(g.pixels());
            // Gather the output gradient into c_out x (batch * pixels).
            RowMat G(c_out, idx(g.columns()));
            for (std::size_t b = 0; b < g.batch; ++b) {
                G.middleCols(idx(b * g.pixels()), pixels) =
                    ConstMatMap(grad_out.data() + b * g.c_out * g.pixels(), c_out, pixels);
            }
            if (tape.requires_grad(ki)) {
                MatMap dK(tape.grad(ki).data(), c_out, idx(g.rows()));
                dK.noalias() += G * cols.transpose();
            }
            if (bi && tape.requires_grad(*bi)) {
                VecMap db(tape.grad(*bi).data(), c_out);
                db += G.rowwise().sum();
            }
            if (tape.requires_grad(ii)) {
                ConstMatMap K(tape.value(ki).raw(), c_out, idx(g.rows()));
                RowMat dcols = K.transpose() * G;
                col2im_accumulate(dcols, tape.grad(ii).data(), g);
            }
        });
}

Var fully_connected(Var x, Var weight, std::optional<Var> bias) {
    same_tape(x, weight, "fully_connected");
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (wv.rank() != 2) {
        fail("fully_connected", "weight must be q x p, got " + shape_to_string(wv.shape()));
    }
    const std::size_t q = wv.dim(0);
    const std::size_t p = wv.dim(1);
    if (xv.rank() != 1 && xv.rank() != 2) {
        fail("fully_connected", "input must be p or batch x p, got " + shape_to_string(xv.shape()));
    }
    const bool batched = xv.rank() == 2;
    const std::size_t batch = batched ? xv.dim(0) : 1;
    if (xv.size() != batch * p) {
        fail("fully_connected", "input " + shape_to_string(xv.shape()) + " does not match weight columns " +
                                    std::to_string(p));
    }
    if (bias) {
        same_tape(x, *bias, "fully_connected");
        if (bias->value().size() != q) {
            fail("fully_connected", "bias length " + std::to_string(bias->value().size()) + " != weight rows " +
                                        std::to_string(q));
        }
    }
    Tensor out(batched ? Shape{batch, q} : Shape{q});
    {
        ConstMatMap W(wv.raw(), idx(q), idx(p));
        ConstMatMap X(xv.raw(), idx(batch), idx(p));
        MatMap Y(out.raw(), idx(batch), idx(q));
        if (batch == 1) {
            Y.row(0).transpose().noalias() = W * X.row(0).transpose();
        } else {
            Y.noalias() = X * W.transpose();
        }
        if (bias) {
            Y.rowwise() += ConstVecMap(bias->value().raw(), idx(q)).transpose();
        }
    }
    std::vector<std::size_t> inputs{x.id(), weight.id()};
    if (bias) {
        inputs.push_back(bias->id());
    }
    const std::size_t xi = x.id();
    const std::size_t wi = weight.id();
    const std::optional<std::size_t> bi = bias ? std::optional<std::size_t>(bias->id()) : std::nullopt;
    return x.tape().record(
        OpKind::FullyConnected, std::move(out), std::move(inputs),
        [xi, wi, bi, p, q, batch](Tape& tape, std::size_t, std::span<const double> grad_out) {
            ConstMatMap G(grad_out.data(), idx(batch), idx(q));
            if (tape.requires_grad(wi)) {
                MatMap dW(tape.grad(wi).data(), idx(q), idx(p));
                ConstMatMap X(tape.value(xi).raw(), idx(batch), idx(p));
                dW.noalias() += G.transpose() * X;
            }
            if (bi && tape.requires_grad(*bi)) {
                VecMap db(tape.grad(*bi).data(), idx(q));
                db += G.colwise().sum().transpose();
            }
            if (tape.requires_grad(xi)) {
                ConstMatMap W(tape.value(wi).raw(), idx(q), idx(p));
                MatMap dX(tape.grad(xi).data(), idx(batch), idx(p));
                if (batch == 1) {
                    dX.row(0).transpose().noalias() += W.transpose() * G.row(0).transpose();
                } else {
                    dX.noalias() += G * W;
                }
            }
        });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        fail("concat", "no operands");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_to_string(first));
    }
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) {
        outer *= first[i];
    }
    std::vector<std::size_t> inputs;
    std::vector<std::size_t> blocks;  // contiguous elements per outer index
    for (const Var& v : parts) {
        same_tape(parts.front(), v, "concat");
        const Shape& s = v.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = i == axis || s[i] == first[i];
        }
        if (!ok) {
            fail("concat", "shapes " + shape_to_string(first) + " and " + shape_to_string(s) + " differ off axis " +
                               std::to_string(axis));
        }
        out_shape[axis] += s[axis];
        inputs.push_back(v.id());
        blocks.push_back(v.value().size() / outer);
    }
    Tensor out(out_shape);
    const std::size_t stride = out.size() / outer;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* src = parts[k].value().raw();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src + o * blocks[k], blocks[k], out.raw() + o * stride + offset);
        }
        offset += blocks[k];
    }
    auto ids = inputs;
    return parts.front().tape().record(
        OpKind::Concat, std::move(out), std::move(inputs),
        [ids, blocks, outer, stride](Tape& tape, std::size_t, std::span<const double> g) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (tape.requires_grad(ids[k])) {
                    auto dst = tape.grad(ids[k]);
                    for (std::size_t o = 0; o < outer; ++o) {
                        accumulate(dst.subspan(o * blocks[k], blocks[k]), g.subspan(o * stride + offset, blocks[k]));
                    }
                }
                offset += blocks[k];
            }
        });
}

Var concat_channels(Var a, Var b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const Spatial pa = spatial(sa, "concat_channels", "operand");
    const Spatial pb = spatial(sb, "concat_channels", "operand");
    if (sa.size() != sb.size() || pa.batch != pb.batch || pa.h != pb.h || pa.w != pb.w) {
        fail("concat_channels", "shape mismatch " + shape_to_string(sa) + " vs " + shape_to_string(sb));
    }
    const Var parts[] = {a, b};
    return concat(parts, sa.size() - 3);
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
    const Tensor& xv = x.value();
    const Spatial s = spatial(xv.shape(), "slice_channels", "input");
    if (begin + count > s.channels) {
        fail("slice_channels", "range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                   ") outside " + shape_to_string(xv.shape()));
    }
    const std::size_t plane = s.plane();
    const std::size_t batch = s.batch;
    const std::size_t in_stride = s.channels * plane;
    const std::size_t block = count * plane;
    Tensor out(s.batched ? Shape{batch, count, s.h, s.w} : Shape{count, s.h, s.w});
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(xv.raw() + b * in_stride + begin * plane, block, out.raw() + b * block);
    }
    const std::size_t xi = x.id();
    const std::size_t offset = begin * plane;
    return x.tape().record(OpKind::SliceChannels, std::move(out), {xi},
                           [xi, offset, batch, in_stride, block](Tape& tape, std::size_t, std::span<const double> g) {
                               auto dx = tape.grad(xi);
                               for (std::size_t b = 0; b < batch; ++b) {
                                   accumulate(dx.subspan(b * in_stride + offset, block), g.subspan(b * block, block));
                               }
                           });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return x.tape().record(OpKind::Reshape, std::move(out), {xi},
                           [xi](Tape& tape, std::size_t, std::span<const double> g) { accumulate(tape.grad(xi), g); });
}

Var flatten(Var x) { return reshape(x, Shape{x.value().size()}); }

Var flatten_batch(Var x) {
    const Shape& s = x.shape();
    if (s.empty() || s[0] == 0) {
        fail("flatten_batch", "need a leading batch axis, got " + shape_to_string(s));
    }
    return reshape(x, Shape{s[0], x.value().size() / s[0]});
}

Var sigmoid(Var x) {
    return activation(x, OpKind::Sigmoid, sigmoid_array, [](double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
    return activation(x, OpKind::Tanh, tanh_array, [](double y) { return 1.0 - y * y; });
}

Var relu(Var x) {
    return activation(
        x, OpKind::Relu,
        [](const double* in, double* out, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = in[i] > 0.0 ? in[i] : 0.0;
            }
        },
        [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Var add(Var a, Var b) {
    same_tape(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) {
        fail("add", "shape mismatch " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
    }
    Tensor out(av.shape());
    arr(out.data()) = arr(av.data()) + arr(bv.data());
    const std::size_t ai = a.id();
    const std::size_t bi = b.id();
    return a.tape().record(OpKind::Add, std::move(out), {ai, bi},
                           [ai, bi](Tape& tape, std::size_t, std::span<const double> g) {
                               if (tape.requires_grad(ai)) {
                                   accumulate(tape.grad(ai), g);
                               }
                               if (tape.requires_grad(bi)) {
                                   accumulate(tape.grad(bi), g);
                               }
                           });
}

Var mul(Var a, Var b) {
    same_tape(a, b, "mul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa != sb) {
        if (is_channel_broadcast(sa, sb)) {
            return mul_broadcast(a, b);
        }
        if (is_channel_broadcast(sb, sa)) {
            return mul_broadcast(b, a);
        }
        fail("mul", "incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
    }
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(sa);
    arr(out.data()) = arr(av.data()) * arr(bv.data());
    const std::size_t ai = a.id();
    const std::size_t bi = b.id();
    return a.tape().record(OpKind::Mul, std::move(out), {ai, bi},
                           [ai, bi](Tape& tape, std::size_t, std::span<const double> g) {
                               if (tape.requires_grad(ai)) {
                                   arr(tape.grad(ai)) += arr(g) * arr(tape.value(bi).data());
                               }
                               if (tape.requires_grad(bi)) {
                                   arr(tape.grad(bi)) += arr(g) * arr(tape.value(ai).data());
                               }
                           });
}

Var scale(Var x, double factor) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    arr(out.data()) = arr(xv.data()) * factor;
    const std::size_t xi = x.id();
    return x.tape().record(OpKind::Scale, std::move(out), {xi},
                           [xi, factor](Tape& tape, std::size_t, std::span<const double> g) {
                               arr(tape.grad(xi)) += arr(g) * factor;
                           });
}

Var affine(Var x, double a, double b) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    arr(out.data()) = a * arr(xv.data()) + b;
    const std::size_t xi = x.id();
    return x.tape().record(OpKind::Affine, std::move(out), {xi},
                           [xi, a](Tape& tape, std::size_t, std::span<const double> g) {
                               arr(tape.grad(xi)) += arr(g) * a;
                           });
}

Var mul_scalar(Var x, Var s) {
    same_tape(x, s, "mul_scalar");
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    std::size_t groups = 1;
    if (sv.size() != 1) {
        if (xv.rank() < 2 || sv.size() != xv.dim(0)) {
            fail("mul_scalar", "scalar operand " + shape_to_string(sv.shape()) + " does not match " +
                                   shape_to_string(xv.shape()));
        }
        groups = sv.size();
    }
    const std::size_t block = xv.size() / groups;
    Tensor out(xv.shape());
    for (std::size_t k = 0; k < groups; ++k) {
        for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
            out[i] = sv[k] * xv[i];
        }
    }
    const std::size_t xi = x.id();
    const std::size_t si = s.id();
    return x.tape().record(OpKind::MulScalar, std::move(out), {xi, si},
                           [xi, si, groups, block](Tape& tape, std::size_t, std::span<const double> g) {
                               const Tensor& xv = tape.value(xi);
                               const Tensor& sv = tape.value(si);
                               if (tape.requires_grad(xi)) {
                                   auto dx = tape.grad(xi);
                                   for (std::size_t k = 0; k < groups; ++k) {
                                       for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
                                           dx[i] += g[i] * sv[k];
                                       }
                                   }
                               }
                               if (tape.requires_grad(si)) {
                                   auto ds = tape.grad(si);
                                   for (std::size_t k = 0; k < groups; ++k) {
                                       double acc = 0.0;
                                       for (std::size_t i = k * block; i < (k + 1) * block; ++i) {
                                           acc += g[i] * xv[i];
                                       }
                                       ds[k] += acc;
                                   }
                               }
                           });
}

Var mean_squared_error(Var pred, Var target) {
    same_tape(pred, target, "mean_squared_error");
    const Tensor& pv = pred.value();
    const Tensor& tv = target.value();
    if (pv.shape() != tv.shape()) {
        fail("mean_squared_error", "shape mismatch " + shape_to_string(pv.shape()) + " vs " + shape_to_string(tv.shape()));
    }
    if (pv.empty()) {
        fail("mean_squared_error", "empty operands");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = pv[i] - tv[i];
        acc += d * d;
    }
    const double n = static_cast<double>(pv.size());
    const std::size_t pi = pred.id();
    const std::size_t ti = target.id();
    return pred.tape().record(OpKind::MeanSquaredError, Tensor({1}, {acc / n}), {pi, ti},
                              [pi, ti, n](Tape& tape, std::size_t, std::span<const double> g) {
                                  const Tensor& pv = tape.value(pi);
                                  const Tensor& tv = tape.value(ti);
                                  const double k = 2.0 * g[0] / n;
                                  if (tape.requires_grad(pi)) {
                                      auto dp = tape.grad(pi);
                                      for (std::size_t i = 0; i < dp.size(); ++i) {
                                          dp[i] += k * (pv[i] - tv[i]);
                                      }
                                  }
                                  if (tape.requires_grad(ti)) {
                                      auto dt = tape.grad(ti);
                                      for (std::size_t i = 0; i < dt.size(); ++i) {
                                          dt[i] -= k * (pv[i] - tv[i]);
                                      }
                                  }
                              });
}

} // namespace crowdflow
