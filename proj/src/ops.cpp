#include "melrefine/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "melrefine/rope.hpp"

namespace melrefine::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Tape& tape_of(const Var& v) {
    if (!v.tape()) throw std::logic_error("autograd: unbound variable");
    return *v.tape();
}

void accumulate(Tape& tape, const Var& v, const Tensor& delta) {
    if (!tape.requires_grad(v)) return;
    Tensor& g = tape.grad_accumulator(v);
    VecMap(g.data(), static_cast<Eigen::Index>(g.size())) +=
        ConstVecMap(delta.data(), static_cast<Eigen::Index>(delta.size()));
}

std::size_t last_dim(const Tensor& t, const char* op) {
    if (t.rank() == 0) throw std::invalid_argument(std::string(op) + ": scalar input");
    return t.shape().back();
}

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

template <typename F>
Var unary(const Var& x, F&& f_and_df) {
    Tape& tape = tape_of(x);
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f_and_df(in[i]).first;
    return tape.record(std::move(out), {x}, [x, f_and_df](Tape& t, const Tensor& g) {
        const Tensor& in = t.value(x);
        Tensor dx(in.shape());
        for (std::size_t i = 0; i < in.size(); ++i) dx[i] = g[i] * f_and_df(in[i]).second;
        accumulate(t, x, dx);
    });
}

// Same-padded im2col for one image: rows are (cin, ky, kx), columns are (y, x).
void im2col(const double* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, double* cols) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                double* row = cols + ((c * kernel + ky) * kernel + kx) * plane;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    double* dst = row + y * width;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + width, 0.0);
                        continue;
                    }
                    const double* src = image + (c * height + static_cast<std::size_t>(sy)) * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width))
                                     ? 0.0
                                     : src[static_cast<std::size_t>(sx)];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, double* image) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
    const std::size_t plane = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
            for (std::size_t kx = 0; kx < kernel; ++kx) {
                const double* row = cols + ((c * kernel + ky) * kernel + kx) * plane;
                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
                    double* dst = image + (c * height + static_cast<std::size_t>(sy)) * width;
                    const double* src = row + y * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(width)) {
                            dst[static_cast<std::size_t>(sx)] += src[x];
                        }
                    }
                }
            }
        }
    }
}

void check_frame_mask(const Tensor& mask, std::size_t batch, std::size_t frames, const char* op) {
    if (mask.rank() != 2 || mask.dim(0) != batch || mask.dim(1) != frames) {
        throw std::invalid_argument(std::string(op) + ": frame mask shape " +
                                    shape_string(mask.shape()) + " does not match (" +
                                    std::to_string(batch) + ", " + std::to_string(frames) + ")");
    }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    VecMap(out.data(), static_cast<Eigen::Index>(out.size())) +=
        ConstVecMap(b.value().data(), static_cast<Eigen::Index>(out.size()));
    return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        accumulate(t, a, g);
        accumulate(t, b, g);
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= factor;
    return tape_of(a).record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (double& v : d.values()) v *= factor;
        accumulate(t, a, d);
    });
}

Var mul_const(const Var& a, const Tensor& factor) {
    require_same_shape(a.value(), factor, "mul_const");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
    return tape_of(a).record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        Tensor d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= factor[i];
        accumulate(t, a, d);
    });
}

Var reshape(const Var& a, Shape shape) {
    const Shape original = a.shape();
    Tensor out = a.value().reshaped(std::move(shape));
    return tape_of(a).record(std::move(out), {a}, [a, original](Tape& t, const Tensor& g) {
        accumulate(t, a, g.reshaped(original));
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& in = x.value();
    const Tensor& w = weight.value();
    const Tensor& b = bias.value();
    const std::size_t k = last_dim(in, "linear");
    if (w.rank() != 2 || w.dim(0) != k || b.rank() != 1 || b.dim(0) != w.dim(1)) {
        throw std::invalid_argument("linear: weight " + shape_string(w.shape()) + " / bias " +
                                    shape_string(b.shape()) + " incompatible with input " +
                                    shape_string(in.shape()));
    }
    const auto rows = static_cast<Eigen::Index>(in.size() / k);
    const auto ki = static_cast<Eigen::Index>(k);
    const auto n = static_cast<Eigen::Index>(w.dim(1));

    Shape out_shape = in.shape();
    out_shape.back() = w.dim(1);
    Tensor out(out_shape);
    MatMap y(out.data(), rows, n);
    y.noalias() = ConstMatMap(in.data(), rows, ki) * ConstMatMap(w.data(), ki, n);
    y.rowwise() += ConstVecMap(b.data(), n).transpose();

    return tape_of(x).record(std::move(out), {x, weight, bias},
                             [x, weight, bias, rows, ki, n](Tape& t, const Tensor& g) {
        ConstMatMap dy(g.data(), rows, n);
        if (t.requires_grad(x)) {
            Tensor& dx = t.grad_accumulator(x);
            MatMap(dx.data(), rows, ki).noalias() +=
                dy * ConstMatMap(t.value(weight).data(), ki, n).transpose();
        }
        if (t.requires_grad(weight)) {
            Tensor& dw = t.grad_accumulator(weight);
            MatMap(dw.data(), ki, n).noalias() +=
                ConstMatMap(t.value(x).data(), rows, ki).transpose() * dy;
        }
        if (t.requires_grad(bias)) {
            Tensor& db = t.grad_accumulator(bias);
            VecMap(db.data(), n) += dy.colwise().sum().transpose();
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double eps) {
    const Tensor& in = x.value();
    const std::size_t c = last_dim(in, "layer_norm");
    if (gain.value().shape() != Shape{c} || shift.value().shape() != Shape{c}) {
        throw std::invalid_argument("layer_norm: gain/shift must have shape (" + std::to_string(c) + ")");
    }
    const std::size_t rows = in.size() / c;
    const double* g = gain.value().data();
    const double* s = shift.value().data();

    Tensor out(in.shape());
    Tensor normalized(in.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(c);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double xh = (row[j] - mean) * inv_std[r];
            normalized[r * c + j] = xh;
            out[r * c + j] = xh * g[j] + s[j];
        }
    }

    return tape_of(x).record(
        std::move(out), {x, gain, shift},
        [x, gain, shift, normalized = std::move(normalized), inv_std = std::move(inv_std), rows,
         c](Tape& t, const Tensor& dy) {
            const double* g = t.value(gain).data();
            if (t.requires_grad(gain) || t.requires_grad(shift)) {
                Tensor dg(Shape{c});
                Tensor ds(Shape{c});
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        dg[j] += dy[r * c + j] * normalized[r * c + j];
                        ds[j] += dy[r * c + j];
                    }
                }
                accumulate(t, gain, dg);
                accumulate(t, shift, ds);
            }
            if (!t.requires_grad(x)) return;
            Tensor& dx = t.grad_accumulator(x);
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_d = 0.0;
                double mean_dx = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = dy[r * c + j] * g[j];
                    mean_d += d;
                    mean_dx += d * normalized[r * c + j];
                }
                mean_d *= inv_c;
                mean_dx *= inv_c;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = dy[r * c + j] * g[j];
                    dx[r * c + j] += inv_std[r] * (d - mean_d - normalized[r * c + j] * mean_dx);
                }
            }
        });
}

Var silu(const Var& x) {
    return unary(x, [](double v) {
        const double s = sigmoid(v);
        return std::pair{v * s, s * (1.0 + v * (1.0 - s))};
    });
}

Var leaky_relu(const Var& x, double slope) {
    return unary(x, [slope](double v) {
        return v >= 0.0 ? std::pair{v, 1.0} : std::pair{slope * v, slope};
    });
}

Var glu(const Var& x) {
    const Tensor& in = x.value();
    const std::size_t width = last_dim(in, "glu");
    if (width % 2 != 0) throw std::invalid_argument("glu: last axis must be even");
    const std::size_t half = width / 2;
    const std::size_t rows = in.size() / width;
    Shape shape = in.shape();
    shape.back() = half;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < half; ++j) {
            out[r * half + j] = in[r * width + j] * sigmoid(in[r * width + half + j]);
        }
    }
    return tape_of(x).record(std::move(out), {x}, [x, rows, half, width](Tape& t, const Tensor& g) {
        const Tensor& in = t.value(x);
        Tensor& dx = t.grad_accumulator(x);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < half; ++j) {
                const double a = in[r * width + j];
                const double s = sigmoid(in[r * width + half + j]);
                const double d = g[r * half + j];
                dx[r * width + j] += d * s;
                dx[r * width + half + j] += d * a * s * (1.0 - s);
            }
        }
    });
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    const Shape& first = parts.front().shape();
    const std::size_t rows = first.empty() ? 1 : parts.front().value().size() / first.back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
            throw std::invalid_argument("concat_last: leading dimensions differ: " +
                                        shape_string(s) + " vs " + shape_string(first));
        }
        widths.push_back(s.back());
        total += s.back();
    }
    Shape out_shape = first;
    out_shape.back() = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor& v = parts[i].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data() + r * widths[i], widths[i], out.data() + r * total + offset);
        }
        offset += widths[i];
    }
    return tape_of(parts.front()).record(std::move(out), parts,
                                         [parts, widths, rows, total](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (t.requires_grad(parts[i])) {
                Tensor& d = t.grad_accumulator(parts[i]);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < widths[i]; ++j) {
                        d[r * widths[i] + j] += g[r * total + offset + j];
                    }
                }
            }
            offset += widths[i];
        }
    });
}

Var stack_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_channels: no inputs");
    const Shape& first = parts.front().shape();
    if (first.size() != 3) throw std::invalid_argument("stack_channels: inputs must be (N, H, W)");
    for (const Var& p : parts) require_same_shape(p.value(), parts.front().value(), "stack_channels");
    const std::size_t n = first[0];
    const std::size_t plane = first[1] * first[2];
    const std::size_t count = parts.size();
    Tensor out(Shape{n, count, first[1], first[2]});
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor& v = parts[i].value();
        for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(v.data() + b * plane, plane, out.data() + (b * count + i) * plane);
        }
    }
    return tape_of(parts.front()).record(std::move(out), parts,
                                         [parts, n, plane, count](Tape& t, const Tensor& g) {
        for (std::size_t i = 0; i < count; ++i) {
            if (!t.requires_grad(parts[i])) continue;
            Tensor& d = t.grad_accumulator(parts[i]);
            for (std::size_t b = 0; b < n; ++b) {
                const double* src = g.data() + (b * count + i) * plane;
                double* dst = d.data() + b * plane;
                for (std::size_t j = 0; j < plane; ++j) dst[j] += src[j];
            }
        }
    });
}

Var take_channel(const Var& x, std::size_t index) {
    const Shape& s = x.shape();
    if (s.size() != 4 || index >= s[1]) throw std::invalid_argument("take_channel: bad image or index");
    const std::size_t n = s[0];
    const std::size_t channels = s[1];
    const std::size_t plane = s[2] * s[3];
    Tensor out(Shape{n, s[2], s[3]});
    for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(x.value().data() + (b * channels + index) * plane, plane, out.data() + b * plane);
    }
    return tape_of(x).record(std::move(out), {x}, [x, n, channels, plane, index](Tape& t, const Tensor& g) {
        Tensor& d = t.grad_accumulator(x);
        for (std::size_t b = 0; b < n; ++b) {
            double* dst = d.data() + (b * channels + index) * plane;
            for (std::size_t j = 0; j < plane; ++j) dst[j] += g[b * plane + j];
        }
    });
}

Var rope(const Var& x, std::size_t n_heads, double base) {
    const Tensor& in = x.value();
    if (in.rank() != 3) throw std::invalid_argument("rope: input must be (N, T, D)");
    const std::size_t n = in.dim(0);
    const std::size_t frames = in.dim(1);
    const std::size_t width = in.dim(2);
    if (n_heads == 0 || width % n_heads != 0) throw std::invalid_argument("rope: width not divisible by heads");
    const std::size_t head_dim = width / n_heads;
    if (head_dim % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");

    auto rotate_all = [=](Tensor& data, bool inverse) {
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t f = 0; f < frames; ++f) {
                double* row = data.data() + (b * frames + f) * width;
                for (std::size_t h = 0; h < n_heads; ++h) {
                    rope_rotate(std::span<double>(row + h * head_dim, head_dim),
                                static_cast<double>(f), base, inverse);
                }
            }
        }
    };
    Tensor out = in;
    rotate_all(out, false);
    return tape_of(x).record(std::move(out), {x}, [x, rotate_all](Tape& t, const Tensor& g) {
        Tensor d = g;
        rotate_all(d, true);
        accumulate(t, x, d);
    });
}

Var attention(const Var& q, const Var& k, const Var& v, const Tensor& frame_mask,
              std::size_t n_heads) {
    const Tensor& qv = q.value();
    require_same_shape(qv, k.value(), "attention");
    require_same_shape(qv, v.value(), "attention");
    if (qv.rank() != 3) throw std::invalid_argument("attention: inputs must be (N, T, D)");
    const std::size_t n = qv.dim(0);
    const std::size_t frames = qv.dim(1);
    const std::size_t width = qv.dim(2);
    if (n_heads == 0 || width % n_heads != 0) {
        throw std::invalid_argument("attention: width not divisible by heads");
    }
    check_frame_mask(frame_mask, n, frames, "attention");
    const std::size_t head_dim = width / n_heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const auto T = static_cast<Eigen::Index>(frames);
    const auto Dh = static_cast<Eigen::Index>(head_dim);
    const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(width));
    using StridedConst = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
    using Strided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

    // Softmax probabilities per (item, head), kept for the backward pass.
    std::vector<RowMatrix> probs(n * n_heads);
    Tensor out(qv.shape());
    for (std::size_t b = 0; b < n; ++b) {
        const double* mask = frame_mask.data() + b * frames;
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t offset = b * frames * width + h * head_dim;
            StridedConst Q(qv.data() + offset, T, Dh, stride);
            StridedConst K(k.value().data() + offset, T, Dh, stride);
            StridedConst V(v.value().data() + offset, T, Dh, stride);
            RowMatrix& P = probs[b * n_heads + h];
            P.noalias() = (Q * K.transpose()) * scale_factor;
            for (Eigen::Index i = 0; i < T; ++i) {
                if (mask[i] == 0.0) {
                    P.row(i).setZero();
                    continue;
                }
                double peak = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < T; ++j) {
                    if (mask[j] == 0.0) P(i, j) = -std::numeric_limits<double>::infinity();
                    peak = std::max(peak, P(i, j));
                }
                double sum = 0.0;
                for (Eigen::Index j = 0; j < T; ++j) {
                    P(i, j) = std::exp(P(i, j) - peak);
                    sum += P(i, j);
                }
                P.row(i) /= sum;
            }
            Strided O(out.data() + offset, T, Dh, stride);
            O.noalias() = P * V;
        }
    }

    return tape_of(q).record(
        std::move(out), {q, k, v},
        [q, k, v, probs = std::move(probs), n, n_heads, frames, width, head_dim, scale_factor](
            Tape& t, const Tensor& g) {
            const auto T = static_cast<Eigen::Index>(frames);
            const auto Dh = static_cast<Eigen::Index>(head_dim);
            const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(width));
            using StridedConst = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;
            using Strided = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
            Tensor dq(t.value(q).shape());
            Tensor dk(dq.shape());
            Tensor dv(dq.shape());
            RowMatrix dP;
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t offset = b * frames * width + h * head_dim;
                    StridedConst Q(t.value(q).data() + offset, T, Dh, stride);
                    StridedConst K(t.value(k).data() + offset, T, Dh, stride);
                    StridedConst V(t.value(v).data() + offset, T, Dh, stride);
                    StridedConst dO(g.data() + offset, T, Dh, stride);
                    const RowMatrix& P = probs[b * n_heads + h];
                    Strided(dv.data() + offset, T, Dh, stride).noalias() = P.transpose() * dO;
                    dP.noalias() = dO * V.transpose();
                    // Softmax Jacobian: dS = P .* (dP - rowsum(dP .* P)).
                    const Eigen::VectorXd inner = (dP.array() * P.array()).rowwise().sum();
                    dP = (P.array() * (dP.array().colwise() - inner.array())).matrix();
                    Strided(dq.data() + offset, T, Dh, stride).noalias() = (dP * K) * scale_factor;
                    Strided(dk.data() + offset, T, Dh, stride).noalias() =
                        (dP.transpose() * Q) * scale_factor;
                }
            }
            accumulate(t, q, dq);
            accumulate(t, k, dk);
            accumulate(t, v, dv);
        });
}

Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& in = x.value();
    const Tensor& w = weight.value();
    if (in.rank() != 3) throw std::invalid_argument("depthwise_conv1d: input must be (N, T, C)");
    const std::size_t n = in.dim(0);
    const std::size_t frames = in.dim(1);
    const std::size_t channels = in.dim(2);
    if (w.rank() != 2 || w.dim(1) != channels || w.dim(0) % 2 == 0 ||
        bias.value().shape() != Shape{channels}) {
        throw std::invalid_argument("depthwise_conv1d: weight must be (odd kernel, C), bias (C)");
    }
    const std::size_t kernel = w.dim(0);
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto F = static_cast<std::ptrdiff_t>(frames);

    Tensor out(in.shape());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::ptrdiff_t f = 0; f < F; ++f) {
            double* dst = out.data() + (b * frames + static_cast<std::size_t>(f)) * channels;
            std::copy_n(bias.value().data(), channels, dst);
            for (std::size_t j = 0; j < kernel; ++j) {
                const std::ptrdiff_t src_f = f + static_cast<std::ptrdiff_t>(j) - pad;
                if (src_f < 0 || src_f >= F) continue;
                const double* src = in.data() + (b * frames + static_cast<std::size_t>(src_f)) * channels;
                const double* wj = w.data() + j * channels;
                for (std::size_t c = 0; c < channels; ++c) dst[c] += wj[c] * src[c];
            }
        }
    }

    return tape_of(x).record(std::move(out), {x, weight, bias},
                             [x, weight, bias, n, frames, channels, kernel, pad](Tape& t, const Tensor& g) {
        const Tensor& in = t.value(x);
        const Tensor& w = t.value(weight);
        Tensor dx(in.shape());
        Tensor dw(w.shape());
        Tensor db(Shape{channels});
        const auto F = static_cast<std::ptrdiff_t>(frames);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::ptrdiff_t f = 0; f < F; ++f) {
                const double* go = g.data() + (b * frames + static_cast<std::size_t>(f)) * channels;
                for (std::size_t c = 0; c < channels; ++c) db[c] += go[c];
                for (std::size_t j = 0; j < kernel; ++j) {
                    const std::ptrdiff_t src_f = f + static_cast<std::ptrdiff_t>(j) - pad;
                    if (src_f < 0 || src_f >= F) continue;
                    const std::size_t src_off = (b * frames + static_cast<std::size_t>(src_f)) * channels;
                    const double* wj = w.data() + j * channels;
                    for (std::size_t c = 0; c < channels; ++c) {
                        dx[src_off + c] += wj[c] * go[c];
                        dw[j * channels + c] += in[src_off + c] * go[c];
                    }
                }
            }
        }
        accumulate(t, x, dx);
        accumulate(t, weight, dw);
        accumulate(t, bias, db);
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& in = x.value();
    const Tensor& w = weight.value();
    if (in.rank() != 4) throw std::invalid_argument("conv2d: input must be (N, C, H, W)");
    const std::size_t n = in.dim(0);
    const std::size_t cin = in.dim(1);
    const std::size_t height = in.dim(2);
    const std::size_t width = in.dim(3);
    if (w.rank() != 4 || w.dim(1) != cin || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0 ||
        bias.value().shape() != Shape{w.dim(0)}) {
        throw std::invalid_argument("conv2d: weight " + shape_string(w.shape()) +
                                    " incompatible with input " + shape_string(in.shape()));
    }
    const std::size_t cout = w.dim(0);
    const std::size_t kernel = w.dim(2);
    const std::size_t plane = height * width;
    const auto patch = static_cast<Eigen::Index>(cin * kernel * kernel);
    const auto P = static_cast<Eigen::Index>(plane);
    const auto Co = static_cast<Eigen::Index>(cout);

    Tensor out(Shape{n, cout, height, width});
    RowMatrix cols(patch, P);
    ConstMatMap W(w.data(), Co, patch);
    for (std::size_t b = 0; b < n; ++b) {
        im2col(in.data() + b * cin * plane, cin, height, width, kernel, cols.data());
        MatMap y(out.data() + b * cout * plane, Co, P);
        y.noalias() = W * cols;
        y.colwise() += ConstVecMap(bias.value().data(), Co);
    }

    return tape_of(x).record(std::move(out), {x, weight, bias},
                             [x, weight, bias, n, cin, cout, height, width, kernel, plane, patch, P,
                              Co](Tape& t, const Tensor& g) {
        const Tensor& in = t.value(x);
        ConstMatMap W(t.value(weight).data(), Co, patch);
        const bool want_x = t.requires_grad(x);
        const bool want_w = t.requires_grad(weight);
        RowMatrix cols(patch, P);
        RowMatrix dcols;
        Tensor dw(t.value(weight).shape());
        Tensor db(Shape{cout});
        Tensor dx;
        if (want_x) dx = Tensor(in.shape());
        for (std::size_t b = 0; b < n; ++b) {
            ConstMatMap dy(g.data() + b * cout * plane, Co, P);
            VecMap(db.data(), Co) += dy.rowwise().sum();
            if (want_w) {
                im2col(in.data() + b * cin * plane, cin, height, width, kernel, cols.data());
                MatMap(dw.data(), Co, patch).noalias() += dy * cols.transpose();
            }
            if (want_x) {
                dcols.noalias() = W.transpose() * dy;
                col2im(dcols.data(), cin, height, width, kernel, dx.data() + b * cin * plane);
            }
        }
        if (want_x) accumulate(t, x, dx);
        accumulate(t, weight, dw);
        accumulate(t, bias, db);
    });
}

Var masked_mse(const Var& pred, const Tensor& target, const Tensor& frame_mask) {
    const Tensor& p = pred.value();
    require_same_shape(p, target, "masked_mse");
    if (p.rank() != 3) throw std::invalid_argument("masked_mse: prediction must be (N, T, W)");
    const std::size_t n = p.dim(0);
    const std::size_t frames = p.dim(1);
    const std::size_t width = p.dim(2);
    check_frame_mask(frame_mask, n, frames, "masked_mse");
    double valid = 0.0;
    for (double m : frame_mask.values()) valid += (m != 0.0) ? 1.0 : 0.0;
    if (valid == 0.0) throw std::invalid_argument("masked_mse: mask selects no frames");
    const double denom = valid * static_cast<double>(width);

    double sum = 0.0;
    for (std::size_t r = 0; r < n * frames; ++r) {
        if (frame_mask[r] == 0.0) continue;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = p[r * width + j] - target[r * width + j];
            sum += d * d;
        }
    }
    Tensor out(Shape{}, std::vector<double>{sum / denom});
    return tape_of(pred).record(std::move(out), {pred},
                                [pred, target, frame_mask, denom, n, frames, width](Tape& t, const Tensor& g) {
        const Tensor& p = t.value(pred);
        Tensor d(p.shape());
        const double factor = 2.0 * g[0] / denom;
        for (std::size_t r = 0; r < n * frames; ++r) {
            if (frame_mask[r] == 0.0) continue;
            for (std::size_t j = 0; j < width; ++j) {
                d[r * width + j] = factor * (p[r * width + j] - target[r * width + j]);
            }
        }
        accumulate(t, pred, d);
    });
}

Tensor expand_frame_mask(const Tensor& frame_mask, std::size_t channels) {
    if (frame_mask.rank() != 2) throw std::invalid_argument("expand_frame_mask: mask must be (N, T)");
    Tensor out(Shape{frame_mask.dim(0), frame_mask.dim(1), channels});
    for (std::size_t r = 0; r < frame_mask.size(); ++r) {
        std::fill_n(out.data() + r * channels, channels, frame_mask[r]);
    }
    return out;
}

Tensor expand_frame_mask_image(const Tensor& frame_mask, std::size_t channels, std::size_t width) {
    if (frame_mask.rank() != 2) throw std::invalid_argument("expand_frame_mask_image: mask must be (N, T)");
    const std::size_t n = frame_mask.dim(0);
    const std::size_t frames = frame_mask.dim(1);
    Tensor out(Shape{n, channels, frames, width});
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t f = 0; f < frames; ++f) {
                std::fill_n(out.data() + ((b * channels + c) * frames + f) * width, width,
                            frame_mask[b * frames + f]);
            }
        }
    }
    return out;
}

}  // namespace melrefine::ad
