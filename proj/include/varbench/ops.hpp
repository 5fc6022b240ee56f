#pragma once

#include <algorithm>
#include <cmath>

#include "varbench/tensor.hpp"

// Differentiable primitives. Each op validates shapes, computes the forward
// value, and records a pull closure on the tape. Shapes follow NCHW for
// images and OIHW for conv kernels. NaNs propagate.

namespace varbench::ops {

namespace detail_ops {

[[noreturn]] inline void shape_error(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

inline void expect(bool cond, const std::string& op, const std::string& msg) {
    if (!cond) shape_error(op, msg);
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail_ops

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    using namespace detail_ops;
    expect(a.rank() == 2 && b.rank() == 2, "matmul",
           "expects rank-2 operands, got " + varbench::detail::shape_str(a.shape()) + " and " +
               varbench::detail::shape_str(b.shape()));
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    expect(b.dim(0) == k, "matmul",
           "inner dimensions differ: " + varbench::detail::shape_str(a.shape()) + " x " +
               varbench::detail::shape_str(b.shape()));
    Tensor out = Tensor::zeros({n, m});
    {
        auto av = a.values(); auto bv = b.values(); auto ov = out.values();
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < k; ++p) {
                const double aip = av[i * k + p];
                if (aip == 0.0) continue;
                for (int j = 0; j < m; ++j) ov[i * m + j] += aip * bv[p * m + j];
            }
    }
    tape.record(out, {a, b}, [a, b, out, n, k, m] {
        auto g = out.impl()->grad;
        if (a.impl()->requires_grad || a.impl()->origin.lock()) {
            auto ga = varbench::detail::pull_grad(a.impl());
            auto bv = b.values();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
                    ga[i * k + p] += acc;
                }
        }
        if (b.impl()->requires_grad || b.impl()->origin.lock()) {
            auto gb = varbench::detail::pull_grad(b.impl());
            auto av = a.values();
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < n; ++i) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    for (int j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
                }
        }
    });
    return out;
}

/// 2-D convolution, NCHW input, OIHW kernel, zero padding, stride >= 1.
inline Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel, int stride = 1, int pad = 0) {
    using namespace detail_ops;
    expect(x.rank() == 4, "conv2d", "input must be NCHW, got " + varbench::detail::shape_str(x.shape()));
    expect(kernel.rank() == 4, "conv2d",
           "kernel must be OIHW, got " + varbench::detail::shape_str(kernel.shape()));
    expect(stride >= 1, "conv2d", "stride must be >= 1");
    expect(pad >= 0, "conv2d", "padding must be >= 0");
    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    expect(kernel.dim(1) == ci, "conv2d",
           "kernel input channels " + std::to_string(kernel.dim(1)) + " != image channels " + std::to_string(ci));
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (w + 2 * pad - kw) / stride + 1;
    expect(ho >= 1 && wo >= 1, "conv2d", "kernel larger than padded input");
    Tensor out = Tensor::zeros({n, co, ho, wo});
    {
        auto xv = x.values(); auto kv = kernel.values(); auto ov = out.values();
        for (int b = 0; b < n; ++b)
            for (int o = 0; o < co; ++o)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        double acc = 0.0;
                        for (int c = 0; c < ci; ++c)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                const double* xrow = &xv[((b * ci + c) * h + iy) * w];
                                const double* krow = &kv[((o * ci + c) * kh + ky) * kw];
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= w) continue;
                                    acc += xrow[ix] * krow[kx];
                                }
                            }
                        ov[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
    }
    tape.record(out, {x, kernel}, [x, kernel, out, n, ci, h, w, co, kh, kw, ho, wo, stride, pad] {
        auto g = out.impl()->grad;
        const bool need_x = x.impl()->requires_grad || x.impl()->origin.lock() != nullptr;
        const bool need_k = kernel.impl()->requires_grad || kernel.impl()->origin.lock() != nullptr;
        auto xv = x.values(); auto kv = kernel.values();
        std::span<double> gx, gk;
        if (need_x) gx = varbench::detail::pull_grad(x.impl());
        if (need_k) gk = varbench::detail::pull_grad(kernel.impl());
        for (int b = 0; b < n; ++b)
            for (int o = 0; o < co; ++o)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        const double go = g[((b * co + o) * ho + oy) * wo + ox];
                        if (go == 0.0) continue;
                        for (int c = 0; c < ci; ++c)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= w) continue;
                                    const auto xi = ((b * ci + c) * h + iy) * w + ix;
                                    const auto ki = ((o * ci + c) * kh + ky) * kw + kx;
                                    if (need_x) gx[xi] += go * kv[ki];
                                    if (need_k) gk[ki] += go * xv[xi];
                                }
                            }
                    }
    });
    return out;
}

inline Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values(); auto ov = out.values();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double v = xv[i];
        // derivative at 0 is 0; NaN passes through
        ov[i] = v > 0.0 ? v : (std::isnan(v) ? v : 0.0);
    }
    tape.record(out, {x}, [x, out] {
        auto g = out.impl()->grad;
        auto gx = varbench::detail::pull_grad(x.impl());
        auto xv = x.values();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
    return out;
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    auto xv = x.values(); auto ov = out.values();
    for (std::int64_t i = 0; i < x.numel(); ++i) ov[i] = detail_ops::stable_sigmoid(xv[i]);
    tape.record(out, {x}, [x, out] {
        auto g = out.impl()->grad;
        auto gx = varbench::detail::pull_grad(x.impl());
        auto ov = out.values();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * ov[i] * (1.0 - ov[i]);
    });
    return out;
}

/// NCHW -> NC mean over the spatial axes.
inline Tensor global_avg_pool(Tape& tape, const Tensor& x) {
    using namespace detail_ops;
    expect(x.rank() == 4, "global_avg_pool",
           "input must be NCHW, got " + varbench::detail::shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c});
    auto xv = x.values(); auto ov = out.values();
    for (int i = 0; i < n * c; ++i) {
        double acc = 0.0;
        for (int p = 0; p < hw; ++p) acc += xv[i * hw + p];
        ov[i] = acc / hw;
    }
    tape.record(out, {x}, [x, out, n, c, hw] {
        auto g = out.impl()->grad;
        auto gx = varbench::detail::pull_grad(x.impl());
        for (int i = 0; i < n * c; ++i) {
            const double gi = g[i] / hw;
            for (int p = 0; p < hw; ++p) gx[i * hw + p] += gi;
        }
    });
    return out;
}

/// Elementwise a + b. b may also be rank-1: length matching the last axis of
/// a rank-2 a (row bias) or the channel axis of a rank-4 a (conv bias).
inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    using namespace detail_ops;
    const bool same = a.shape() == b.shape();
    enum class Mode { elementwise, row_bias, channel_bias } mode = Mode::elementwise;
    if (!same) {
        if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) mode = Mode::row_bias;
        else if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) mode = Mode::channel_bias;
        else
            shape_error("add", "incompatible shapes " + varbench::detail::shape_str(a.shape()) + " and " +
                                   varbench::detail::shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.values(); auto bv = b.values(); auto ov = out.values();
    if (mode == Mode::elementwise) {
        for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
    } else if (mode == Mode::row_bias) {
        const int n = a.dim(0), m = a.dim(1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) ov[i * m + j] = av[i * m + j] + bv[j];
    } else {
        const int n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p) {
                    const auto idx = (i * c + ch) * hw + p;
                    ov[idx] = av[idx] + bv[ch];
                }
    }
    tape.record(out, {a, b}, [a, b, out, mode] {
        auto g = out.impl()->grad;
        if (a.impl()->requires_grad || a.impl()->origin.lock()) {
            auto ga = varbench::detail::pull_grad(a.impl());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (b.impl()->requires_grad || b.impl()->origin.lock()) {
            auto gb = varbench::detail::pull_grad(b.impl());
            if (mode == Mode::elementwise) {
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
            } else if (mode == Mode::row_bias) {
                const int n = a.dim(0), m = a.dim(1);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < m; ++j) gb[j] += g[i * m + j];
            } else {
                const int n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch)
                        for (int p = 0; p < hw; ++p) gb[ch] += g[(i * c + ch) * hw + p];
            }
        }
    });
    return out;
}

inline Tensor scale(Tape& tape, const Tensor& a, double factor) {
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.values(); auto ov = out.values();
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] * factor;
    tape.record(out, {a}, [a, out, factor] {
        auto g = out.impl()->grad;
        auto ga = varbench::detail::pull_grad(a.impl());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
    });
    return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return add(tape, a, scale(tape, b, -1.0));
}

/// Mean softmax cross-entropy over the batch. `labels` is a constant one-hot
/// N x m tensor.
inline Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& labels) {
    using namespace detail_ops;
    expect(logits.rank() == 2, "softmax_cross_entropy",
           "logits must be rank-2, got " + varbench::detail::shape_str(logits.shape()));
    expect(logits.shape() == labels.shape(), "softmax_cross_entropy",
           "logits " + varbench::detail::shape_str(logits.shape()) + " vs labels " +
               varbench::detail::shape_str(labels.shape()));
    const int n = logits.dim(0), m = logits.dim(1);
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * m);
    double total = 0.0;
    {
        auto zv = logits.values(); auto yv = labels.values();
        for (int i = 0; i < n; ++i) {
            const double* z = &zv[i * m];
            double zmax = z[0];
            for (int j = 1; j < m; ++j) zmax = std::max(zmax, z[j]);
            double sum = 0.0;
            for (int j = 0; j < m; ++j) sum += std::exp(z[j] - zmax);
            const double lse = zmax + std::log(sum);
            for (int j = 0; j < m; ++j) {
                (*probs)[i * m + j] = std::exp(z[j] - lse);
                total += yv[i * m + j] * (lse - z[j]);
            }
        }
    }
    Tensor out = Tensor::scalar_tensor(total / n);
    tape.record(out, {logits, labels}, [logits, labels, out, probs, n, m] {
        const double g = out.impl()->grad[0] / n;
        auto gz = varbench::detail::pull_grad(logits.impl());
        auto yv = labels.values();
        for (int i = 0; i < n * m; ++i) gz[i] += g * ((*probs)[i] - yv[i]);
    });
    return out;
}

/// Mean squared difference over all elements.
inline Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
    using namespace detail_ops;
    expect(a.shape() == b.shape(), "mse",
           "shapes differ: " + varbench::detail::shape_str(a.shape()) + " vs " +
               varbench::detail::shape_str(b.shape()));
    const std::int64_t n = a.numel();
    double acc = 0.0;
    {
        auto av = a.values(); auto bv = b.values();
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = av[i] - bv[i];
            acc += d * d;
        }
    }
    Tensor out = Tensor::scalar_tensor(acc / static_cast<double>(n));
    tape.record(out, {a, b}, [a, b, out, n] {
        const double g = out.impl()->grad[0] * 2.0 / static_cast<double>(n);
        auto av = a.values(); auto bv = b.values();
        const bool need_a = a.impl()->requires_grad || a.impl()->origin.lock() != nullptr;
        const bool need_b = b.impl()->requires_grad || b.impl()->origin.lock() != nullptr;
        std::span<double> ga, gb;
        if (need_a) ga = varbench::detail::pull_grad(a.impl());
        if (need_b) gb = varbench::detail::pull_grad(b.impl());
        for (std::int64_t i = 0; i < n; ++i) {
            const double d = g * (av[i] - bv[i]);
            if (need_a) ga[i] += d;
            if (need_b) gb[i] -= d;
        }
    });
    return out;
}

/// Euclidean norm of all elements; subgradient 0 at the origin.
inline Tensor l2_norm(Tape& tape, const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v * v;
    Tensor out = Tensor::scalar_tensor(std::sqrt(acc));
    tape.record(out, {a}, [a, out] {
        const double norm = out.values()[0];
        if (norm == 0.0) return;
        const double g = out.impl()->grad[0] / norm;
        auto ga = varbench::detail::pull_grad(a.impl());
        auto av = a.values();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * av[i];
    });
    return out;
}

/// max(max_{j != t} z_j - z_t, -kappa) on a 1 x m logit row; the attack
/// objective of the L2 optimization attack. Ties in the runner-up argmax go to
/// the smallest index.
inline Tensor targeted_margin(Tape& tape, const Tensor& logits, int target, double kappa) {
    using namespace detail_ops;
    expect(logits.rank() == 2 && logits.dim(0) == 1, "targeted_margin",
           "expects a 1 x m logit row, got " + varbench::detail::shape_str(logits.shape()));
    const int m = logits.dim(1);
    expect(target >= 0 && target < m, "targeted_margin", "target class out of range");
    auto zv = logits.values();
    int best = -1;
    for (int j = 0; j < m; ++j) {
        if (j == target) continue;
        if (best < 0 || zv[j] > zv[best]) best = j;
    }
    const double margin = zv[best] - zv[target];
    const bool clipped = margin < -kappa;
    Tensor out = Tensor::scalar_tensor(clipped ? -kappa : margin);
    tape.record(out, {logits}, [logits, out, best, target, clipped] {
        if (clipped) return;
        const double g = out.impl()->grad[0];
        auto gz = varbench::detail::pull_grad(logits.impl());
        gz[best] += g;
        gz[target] -= g;
    });
    return out;
}

inline Tensor one_hot(int num_classes, int label) {
    if (label < 0 || label >= num_classes) throw std::invalid_argument("one_hot: label out of range");
    Tensor t = Tensor::zeros({1, num_classes});
    t[label] = 1.0;
    return t;
}

inline Tensor one_hot_rows(int num_classes, std::span<const int> labels) {
    Tensor t = Tensor::zeros({static_cast<int>(labels.size()), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::invalid_argument("one_hot_rows: label out of range");
        t[static_cast<std::int64_t>(i) * num_classes + labels[i]] = 1.0;
    }
    return t;
}

}  // namespace varbench::ops
