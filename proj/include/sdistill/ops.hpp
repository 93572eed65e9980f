#pragma once

// Differentiable tensor operations. All functions are pure: they return new
// tensors and record a backward node when a tape is active.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gemm.hpp"
#include "tensor.hpp"

namespace sdistill {

namespace detail {

/// Index mapping for a trailing-aligned broadcast of two operands.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 on expanded axes
    bool same = false;

    static std::vector<std::size_t> strides_for(const Shape& s, std::size_t rank) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t off = rank - s.size();
        std::size_t acc = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            st[off + i] = s[i] == 1 ? 0 : acc;
            acc *= s[i];
        }
        return st;
    }

    Broadcast(const Shape& a, const Shape& b) {
        if (a == b) {
            out = a;
            same = true;
            return;
        }
        std::size_t rank = std::max(a.size(), b.size());
        out.assign(rank, 1);
        for (std::size_t i = 0; i < rank; ++i) {
            std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
            std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
            if (da != db && da != 1 && db != 1) {
                throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
            }
            out[i] = std::max(da, db);
            if (da == 0 || db == 0) out[i] = 0;
        }
        stride_a = strides_for(a, rank);
        stride_b = strides_for(b, rank);
    }

    /// Calls f(i, ia, ib) for every output flat index in row-major order.
    template <class F>
    void for_each(F&& f) const {
        std::size_t n = numel_of(out);
        if (same) {
            for (std::size_t i = 0; i < n; ++i) f(i, i, i);
            return;
        }
        if (n == 0) return;
        std::size_t rank = out.size();
        std::vector<std::size_t> idx(rank, 0);
        std::size_t ia = 0, ib = 0;
        for (std::size_t i = 0; i < n; ++i) {
            f(i, ia, ib);
            for (std::size_t d = rank; d-- > 0;) {
                if (++idx[d] < out[d]) {
                    ia += stride_a[d];
                    ib += stride_b[d];
                    break;
                }
                ia -= stride_a[d] * (out[d] - 1);
                ib -= stride_b[d] * (out[d] - 1);
                idx[d] = 0;
            }
        }
    }
};

template <class T, class Fwd, class DA, class DB>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd, DA da, DB db) {
    Broadcast bc(a.shape(), b.shape());
    std::vector<T> out(numel_of(bc.out));
    auto av = a.data();
    auto bv = b.data();
    bc.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
    BasicTensor<T> result(bc.out, std::move(out));
    return record<T>(result, {a, b}, [bc, a, b, da, db](std::span<const T> g, std::span<std::span<T>> gin) {
        auto av = a.data();
        auto bv = b.data();
        if (!gin[0].empty()) {
            auto ga = gin[0];
            bc.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
                ga[ia] += g[i] * da(av[ia], bv[ib]);
            });
        }
        if (!gin[1].empty()) {
            auto gb = gin[1];
            bc.for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
                gb[ib] += g[i] * db(av[ia], bv[ib]);
            });
        }
    });
}

template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, Fwd fwd, Deriv deriv) {
    std::vector<T> out(x.numel());
    auto xv = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    BasicTensor<T> result(x.shape(), std::move(out));
    return record<T>(result, {x}, [x, result, deriv](std::span<const T> g, std::span<std::span<T>> gin) {
        auto xv = x.data();
        auto yv = result.data();
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return detail::binary(
        a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& x, T s) {
    return detail::unary(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s) {
    return detail::unary(
        x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> neg(const BasicTensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Same values with a new shape; gradients flow through unchanged.
template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    BasicTensor<T> out = x.view(std::move(shape));
    return record<T>(out, {x}, [](std::span<const T> g, std::span<std::span<T>> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    });
}

/// Collapses all axes after the first: (N, ...) -> (N, F).
template <class T>
BasicTensor<T> flatten(const BasicTensor<T>& x) {
    std::size_t n = x.dim(0);
    return reshape(x, Shape{n, n == 0 ? 0 : x.numel() / n});
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    gemm::nn(m, n, k, a.data().data(), b.data().data(), out.data());
    BasicTensor<T> result(Shape{m, n}, std::move(out));
    return record<T>(result, {a, b}, [a, b, m, n, k](std::span<const T> g, std::span<std::span<T>> gin) {
        if (!gin[0].empty()) gemm::nt(m, k, n, g.data(), b.data().data(), gin[0].data());
        if (!gin[1].empty()) gemm::tn(k, n, m, a.data().data(), g.data(), gin[1].data());
    });
}

// ---------------------------------------------------------------------------
// Reductions. Summation order is sequential over the flat index.

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    return record<T>(BasicTensor<T>::scalar(acc), {x}, [](std::span<const T> g, std::span<std::span<T>> gin) {
        for (auto& v : gin[0]) v += g[0];
    });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Maximum over all elements; backward routes to the first maximal element.
template <class T>
BasicTensor<T> max(const BasicTensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("max of an empty tensor");
    auto v = x.data();
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[arg]) arg = i;
    return record<T>(BasicTensor<T>::scalar(v[arg]), {x}, [arg](std::span<const T> g, std::span<std::span<T>> gin) {
        gin[0][arg] += g[0];
    });
}

namespace detail {

struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

inline Shape drop_axis(Shape s, std::size_t axis) {
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
    return s;
}

}  // namespace detail

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::size_t axis) {
    auto sp = detail::split_axis(x.shape(), axis);
    std::vector<T> out(sp.outer * sp.inner, T(0));
    auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out[o * sp.inner + i] += v[(o * sp.extent + e) * sp.inner + i];
    BasicTensor<T> result(detail::drop_axis(x.shape(), axis), std::move(out));
    return record<T>(result, {x}, [sp](std::span<const T> g, std::span<std::span<T>> gin) {
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    gin[0][(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i];
    });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::size_t axis) {
    auto extent = detail::split_axis(x.shape(), axis).extent;
    if (extent == 0) throw ShapeError("mean over an empty axis");
    return scale(sum(x, axis), T(1) / static_cast<T>(extent));
}

template <class T>
BasicTensor<T> max(const BasicTensor<T>& x, std::size_t axis) {
    auto sp = detail::split_axis(x.shape(), axis);
    if (sp.extent == 0) throw ShapeError("max over an empty axis");
    std::vector<T> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(out.size());
    auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = (o * sp.extent) * sp.inner + i;
            for (std::size_t e = 1; e < sp.extent; ++e) {
                std::size_t j = (o * sp.extent + e) * sp.inner + i;
                if (v[j] > v[best]) best = j;
            }
            out[o * sp.inner + i] = v[best];
            arg[o * sp.inner + i] = best;
        }
    BasicTensor<T> result(detail::drop_axis(x.shape(), axis), std::move(out));
    return record<T>(result, {x}, [arg = std::move(arg)](std::span<const T> g, std::span<std::span<T>> gin) {
        for (std::size_t k = 0; k < arg.size(); ++k) gin[0][arg[k]] += g[k];
    });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family over the last axis of an (N, C) tensor.

template <class T>
BasicTensor<T> log_softmax(const BasicTensor<T>& z) {
    if (z.rank() != 2) throw ShapeError("log_softmax expects (N, C), got " + shape_str(z.shape()));
    std::size_t n = z.dim(0), c = z.dim(1);
    std::vector<T> out(n * c);
    auto v = z.data();
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = v.data() + r * c;
        T m = *std::max_element(row, row + c);
        T s = T(0);
        for (std::size_t k = 0; k < c; ++k) s += std::exp(row[k] - m);
        T lse = m + std::log(s);
        for (std::size_t k = 0; k < c; ++k) out[r * c + k] = row[k] - lse;
    }
    BasicTensor<T> result(z.shape(), std::move(out));
    return record<T>(result, {z}, [result, n, c](std::span<const T> g, std::span<std::span<T>> gin) {
        auto y = result.data();
        for (std::size_t r = 0; r < n; ++r) {
            T gs = T(0);
            for (std::size_t k = 0; k < c; ++k) gs += g[r * c + k];
            for (std::size_t k = 0; k < c; ++k)
                gin[0][r * c + k] += g[r * c + k] - std::exp(y[r * c + k]) * gs;
        }
    });
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& z) {
    return exp(log_softmax(z));
}

/// Mean negative log-likelihood of integer labels under row log-probabilities.
template <class T>
BasicTensor<T> nll_loss(const BasicTensor<T>& logp, std::span<const int> labels) {
    if (logp.rank() != 2 || logp.dim(0) != labels.size()) {
        throw ShapeError("nll_loss: log-probabilities " + shape_str(logp.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t n = logp.dim(0), c = logp.dim(1);
    if (n == 0) throw DataError("nll_loss on an empty batch");
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
            throw DataError("label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                            " outside [0, " + std::to_string(c) + ")");
        }
    }
    auto v = logp.data();
    T acc = T(0);
    for (std::size_t r = 0; r < n; ++r) acc -= v[r * c + static_cast<std::size_t>(labels[r])];
    acc /= static_cast<T>(n);
    std::vector<int> y(labels.begin(), labels.end());
    return record<T>(BasicTensor<T>::scalar(acc), {logp},
                     [y = std::move(y), n, c](std::span<const T> g, std::span<std::span<T>> gin) {
                         T w = g[0] / static_cast<T>(n);
                         for (std::size_t r = 0; r < n; ++r) gin[0][r * c + static_cast<std::size_t>(y[r])] -= w;
                     });
}

template <class T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
    return nll_loss(log_softmax(logits), labels);
}

/// Row-wise argmax (first maximal column).
template <class T>
std::vector<int> argmax_rows(const BasicTensor<T>& z) {
    if (z.rank() != 2) throw ShapeError("argmax_rows expects (N, C), got " + shape_str(z.shape()));
    std::size_t n = z.dim(0), c = z.dim(1);
    std::vector<int> out(n);
    auto v = z.data();
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = v.data() + r * c;
        out[r] = static_cast<int>(std::max_element(row, row + c) - row);
    }
    return out;
}

template <class T>
bool all_finite(const BasicTensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace sdistill
