#pragma once

// Convolution, pooling, normalization, dense and dropout layers.

#include <cmath>
#include <random>
#include <utility>

#include "ops.hpp"

namespace sdistill {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

struct Window2 {
    std::size_t h = 1, w = 1;
    bool operator==(const Window2&) const = default;
};

// ---------------------------------------------------------------------------
// Fused operations

namespace detail {

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, sh, sw, ph, pw, ho, wo;
    std::size_t ckk() const { return c * kh * kw; }
    std::size_t hw_out() const { return ho * wo; }
};

template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
    std::size_t hw = g.hw_out();
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
                        bool inside = ii >= 0 && jj >= 0 && ii < static_cast<std::ptrdiff_t>(g.h) &&
                                      jj < static_cast<std::ptrdiff_t>(g.w);
                        row[oi * g.wo + oj] =
                            inside ? x[(ci * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] : T(0);
                    }
                }
            }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* cols, T* dx) {
    std::size_t hw = g.hw_out();
    for (std::size_t ci = 0; ci < g.c; ++ci)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * hw;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dx[(ci * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] += row[oi * g.wo + oj];
                    }
                }
            }
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* what) {
    if (s == 0) throw ShapeError(std::string("zero stride along ") + what);
    if (k == 0 || k > in + 2 * p) {
        throw ShapeError(std::string("kernel extent ") + std::to_string(k) + " exceeds padded input " + what +
                         " " + std::to_string(in + 2 * p));
    }
    return (in + 2 * p - k) / s + 1;
}

}  // namespace detail

/// 2-D cross-correlation. x: (N, C, H, W), weight: (O, C, KH, KW), bias: (O).
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      Window2 stride = {}, Window2 padding = {0, 0}) {
    if (x.rank() != 4 || weight.rank() != 4) {
        throw ShapeError("conv2d expects 4-D input and kernel, got " + shape_str(x.shape()) + " and " +
                         shape_str(weight.shape()));
    }
    if (x.dim(1) != weight.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", kernel " +
                         shape_str(weight.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv2d bias " + shape_str(bias.shape()) + " does not match kernel " +
                         shape_str(weight.shape()));
    }
    detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                       stride.h, stride.w, padding.h, padding.w, 0, 0};
    g.ho = detail::conv_out(g.h, g.kh, g.sh, g.ph, "height");
    g.wo = detail::conv_out(g.w, g.kw, g.sw, g.pw, "width");

    const std::size_t hw = g.hw_out(), ckk = g.ckk();
    std::vector<T> out(g.n * g.o * hw);
    std::vector<T> cols(ckk * hw);
    auto xv = x.data();
    auto wv = weight.data();
    auto bv = bias.data();
    for (std::size_t n = 0; n < g.n; ++n) {
        T* yo = out.data() + n * g.o * hw;
        for (std::size_t o = 0; o < g.o; ++o) std::fill(yo + o * hw, yo + (o + 1) * hw, bv[o]);
        detail::im2col(g, xv.data() + n * g.c * g.h * g.w, cols.data());
        gemm::nn(g.o, hw, ckk, wv.data(), cols.data(), yo);
    }
    BasicTensor<T> result(Shape{g.n, g.o, g.ho, g.wo}, std::move(out));
    return record<T>(result, {x, weight, bias}, [g, x, weight](std::span<const T> gout, std::span<std::span<T>> gin) {
        const std::size_t hw = g.hw_out(), ckk = g.ckk();
        std::vector<T> cols(ckk * hw);
        std::vector<T> dcols;
        auto xv = x.data();
        auto wv = weight.data();
        for (std::size_t n = 0; n < g.n; ++n) {
            const T* go = gout.data() + n * g.o * hw;
            if (!gin[1].empty()) {
                detail::im2col(g, xv.data() + n * g.c * g.h * g.w, cols.data());
                gemm::nt(g.o, ckk, hw, go, cols.data(), gin[1].data());
            }
            if (!gin[2].empty()) {
                for (std::size_t o = 0; o < g.o; ++o) {
                    T acc = T(0);
                    for (std::size_t k = 0; k < hw; ++k) acc += go[o * hw + k];
                    gin[2][o] += acc;
                }
            }
            if (!gin[0].empty()) {
                dcols.assign(ckk * hw, T(0));
                gemm::tn(ckk, hw, g.o, wv.data(), go, dcols.data());
                detail::col2im_add(g, dcols.data(), gin[0].data() + n * g.c * g.h * g.w);
            }
        }
    });
}

/// Max pooling without padding; gradient goes to the first maximal element
/// of each window.
template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, Window2 kernel, Window2 stride) {
    if (x.rank() != 4) throw ShapeError("maxpool2d expects (N, C, H, W), got " + shape_str(x.shape()));
    std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (kernel.h > h || kernel.w > w) {
        throw ShapeError("pooling window " + std::to_string(kernel.h) + "x" + std::to_string(kernel.w) +
                         " larger than input " + shape_str(x.shape()));
    }
    std::size_t ho = detail::conv_out(h, kernel.h, stride.h, 0, "height");
    std::size_t wo = detail::conv_out(w, kernel.w, stride.w, 0, "width");
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::size_t> arg(out.size());
    auto v = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const T* plane = v.data() + p * h * w;
        for (std::size_t oi = 0; oi < ho; ++oi)
            for (std::size_t oj = 0; oj < wo; ++oj) {
                std::size_t best = (oi * stride.h) * w + oj * stride.w;
                for (std::size_t ki = 0; ki < kernel.h; ++ki)
                    for (std::size_t kj = 0; kj < kernel.w; ++kj) {
                        std::size_t j = (oi * stride.h + ki) * w + oj * stride.w + kj;
                        if (plane[j] > plane[best]) best = j;
                    }
                std::size_t o = (p * ho + oi) * wo + oj;
                out[o] = plane[best];
                arg[o] = p * h * w + best;
            }
    }
    BasicTensor<T> result(Shape{n, c, ho, wo}, std::move(out));
    return record<T>(result, {x}, [arg = std::move(arg)](std::span<const T> g, std::span<std::span<T>> gin) {
        for (std::size_t k = 0; k < arg.size(); ++k) gin[0][arg[k]] += g[k];
    });
}

/// Per-channel statistics of one training-mode batch-norm call.
template <class T>
struct BatchStats {
    std::vector<T> mean;
    std::vector<T> var_unbiased;
};

/// Training-mode batch normalization over (N, H, W) for each channel.
template <class T>
BasicTensor<T> batch_norm_train(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                                T eps, BatchStats<T>* stats = nullptr) {
    if (x.rank() != 4) throw ShapeError("batch_norm expects (N, C, H, W), got " + shape_str(x.shape()));
    std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("batch_norm affine parameters do not match " + std::to_string(c) + " channels");
    }
    std::size_t m = n * hw;
    if (m < 2) {
        throw DataError("degenerate variance: training-mode batch norm needs at least 2 values per channel, got " +
                        std::to_string(m));
    }
    auto v = x.data();
    std::vector<T> xhat(v.size()), out(v.size()), inv_std(c);
    if (stats) {
        stats->mean.assign(c, T(0));
        stats->var_unbiased.assign(c, T(0));
    }
    auto gv = gamma.data();
    auto bv = beta.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < hw; ++k) s += v[(i * c + ch) * hw + k];
        double mu = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < hw; ++k) {
                double d = v[(i * c + ch) * hw + k] - mu;
                ss += d * d;
            }
        double var = ss / static_cast<double>(m);
        double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
        inv_std[ch] = static_cast<T>(is);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < hw; ++k) {
                std::size_t j = (i * c + ch) * hw + k;
                xhat[j] = static_cast<T>((v[j] - mu) * is);
                out[j] = gv[ch] * xhat[j] + bv[ch];
            }
        if (stats) {
            stats->mean[ch] = static_cast<T>(mu);
            stats->var_unbiased[ch] = static_cast<T>(ss / static_cast<double>(m - 1));
        }
    }
    BasicTensor<T> result(x.shape(), std::move(out));
    return record<T>(result, {x, gamma, beta},
                     [n, c, hw, m, gamma, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         std::span<const T> g, std::span<std::span<T>> gin) {
                         auto gv = gamma.data();
                         for (std::size_t ch = 0; ch < c; ++ch) {
                             T sg = T(0), sgx = T(0);
                             for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t k = 0; k < hw; ++k) {
                                     std::size_t j = (i * c + ch) * hw + k;
                                     sg += g[j];
                                     sgx += g[j] * xhat[j];
                                 }
                             if (!gin[1].empty()) gin[1][ch] += sgx;
                             if (!gin[2].empty()) gin[2][ch] += sg;
                             if (!gin[0].empty()) {
                                 T scale = gv[ch] * inv_std[ch] / static_cast<T>(m);
                                 for (std::size_t i = 0; i < n; ++i)
                                     for (std::size_t k = 0; k < hw; ++k) {
                                         std::size_t j = (i * c + ch) * hw + k;
                                         gin[0][j] += scale * (static_cast<T>(m) * g[j] - sg - xhat[j] * sgx);
                                     }
                             }
                         }
                     });
}

/// Inference-mode batch normalization with stored statistics.
template <class T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, T eps) {
    if (x.rank() != 4) throw ShapeError("batch_norm expects (N, C, H, W), got " + shape_str(x.shape()));
    std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
        throw ShapeError("batch_norm parameters do not match " + std::to_string(c) + " channels");
    }
    auto v = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto rm = running_mean.data();
    auto rv = running_var.data();
    std::vector<T> inv_std(c), xhat(v.size()), out(v.size());
    for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(rv[ch] + eps);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < hw; ++k) {
                std::size_t j = (i * c + ch) * hw + k;
                xhat[j] = (v[j] - rm[ch]) * inv_std[ch];
                out[j] = gv[ch] * xhat[j] + bv[ch];
            }
    BasicTensor<T> result(x.shape(), std::move(out));
    return record<T>(result, {x, gamma, beta},
                     [n, c, hw, gamma, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         std::span<const T> g, std::span<std::span<T>> gin) {
                         auto gv = gamma.data();
                         for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t ch = 0; ch < c; ++ch)
                                 for (std::size_t k = 0; k < hw; ++k) {
                                     std::size_t j = (i * c + ch) * hw + k;
                                     if (!gin[0].empty()) gin[0][j] += g[j] * gv[ch] * inv_std[ch];
                                     if (!gin[1].empty()) gin[1][ch] += g[j] * xhat[j];
                                     if (!gin[2].empty()) gin[2][ch] += g[j];
                                 }
                     });
}

// ---------------------------------------------------------------------------
// Layers

/// Kaiming-uniform bound for ReLU networks: sqrt(6 / fan_in).
template <class T>
void kaiming_uniform(BasicTensor<T>& w, std::size_t fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.mutable_data()) v = static_cast<T>(dist(rng));
}

template <class T>
class Conv2D {
public:
    Conv2D(std::size_t in_channels, std::size_t out_channels, Window2 kernel, Window2 stride = {},
           Window2 padding = {0, 0})
        : weight(BasicTensor<T>(Shape{out_channels, in_channels, kernel.h, kernel.w},
                                std::vector<T>(out_channels * in_channels * kernel.h * kernel.w), true)),
          bias(BasicTensor<T>(Shape{out_channels}, std::vector<T>(out_channels), true)),
          stride(stride),
          padding(padding) {}

    void init(Rng& rng) {
        kaiming_uniform(weight, weight.dim(1) * weight.dim(2) * weight.dim(3), rng);
        std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), T(0));
    }

    BasicTensor<T> forward(const BasicTensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }

    BasicTensor<T> weight, bias;
    Window2 stride, padding;
};

template <class T>
class BatchNorm2D {
public:
    explicit BatchNorm2D(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5))
        : gamma(BasicTensor<T>(Shape{channels}, std::vector<T>(channels, T(1)), true)),
          beta(BasicTensor<T>(Shape{channels}, std::vector<T>(channels, T(0)), true)),
          running_mean(BasicTensor<T>::zeros(Shape{channels})),
          running_var(BasicTensor<T>::ones(Shape{channels})),
          momentum(momentum),
          eps(eps) {
        if (!(momentum > T(0) && momentum <= T(1))) throw ConfigError("batch-norm momentum must lie in (0, 1]");
        if (!(eps > T(0))) throw ConfigError("batch-norm epsilon must be positive");
    }

    /// Train mode normalizes with batch statistics and folds them into the
    /// running estimates; eval mode reads the running estimates only.
    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) {
        if (mode == Mode::eval) return batch_norm_eval(x, gamma, beta, running_mean, running_var, eps);
        BatchStats<T> st;
        auto y = batch_norm_train(x, gamma, beta, eps, &st);
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        for (std::size_t c = 0; c < rm.size(); ++c) {
            rm[c] = (T(1) - momentum) * rm[c] + momentum * st.mean[c];
            rv[c] = (T(1) - momentum) * rv[c] + momentum * st.var_unbiased[c];
        }
        return y;
    }

    BasicTensor<T> gamma, beta, running_mean, running_var;
    T momentum, eps;
};

/// Dense layer y = x W + b with W stored as (in, out).
template <class T>
class Linear {
public:
    Linear(std::size_t in, std::size_t out)
        : weight(BasicTensor<T>(Shape{in, out}, std::vector<T>(in * out), true)),
          bias(BasicTensor<T>(Shape{out}, std::vector<T>(out), true)) {}

    void init(Rng& rng) {
        kaiming_uniform(weight, weight.dim(0), rng);
        std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), T(0));
    }

    BasicTensor<T> forward(const BasicTensor<T>& x) const { return add(matmul(x, weight), bias); }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    BasicTensor<T> weight, bias;
};

/// Inverted dropout: kept entries are scaled by 1/(1-p) at train time.
template <class T>
class Dropout {
public:
    explicit Dropout(double p = 0.5) : p_(p) {
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
    }

    double p() const { return p_; }

    BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) const {
        if (mode == Mode::eval || p_ == 0.0) return x;
        if (!rng) throw ContractError("train-mode dropout needs an explicit random generator");
        std::bernoulli_distribution keep(1.0 - p_);
        const T kept = static_cast<T>(1.0 / (1.0 - p_));
        std::vector<T> mask(x.numel());
        for (auto& m : mask) m = keep(*rng) ? kept : T(0);
        return mul(x, BasicTensor<T>(x.shape(), std::move(mask)));
    }

private:
    double p_;
};

}  // namespace sdistill
