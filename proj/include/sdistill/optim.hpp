#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace sdistill {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Where an optimizer step happens; reported on non-finite gradients.
struct StepTag {
    std::size_t epoch = 0;
    std::size_t batch = 0;
};

/// Adam with bias correction over a fixed list of parameters.
template <class T>
class Adam {
public:
    Adam(std::vector<NamedTensor<T>> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), T(0));
            v_.emplace_back(p.tensor.numel(), T(0));
        }
    }

    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

    /// True if `t` shares identity with a parameter this optimizer updates.
    bool tracks(const BasicTensor<T>& t) const {
        for (auto& p : params_)
            if (p.tensor.id() == t.id()) return true;
        return false;
    }
    std::size_t num_tracked() const { return params_.size(); }

    std::span<const T> first_moment(std::size_t i) const { return m_[i]; }
    std::span<const T> second_moment(std::size_t i) const { return v_[i]; }

    /// One update. Parameters without a recorded gradient are treated as
    /// having a zero gradient. Throws NonFiniteGradient before touching any
    /// parameter if a gradient contains NaN or Inf.
    void step(const GradMap<T>& grads, StepTag tag = {}) {
        std::vector<const BasicTensor<T>*> g(params_.size(), nullptr);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            g[i] = grads.find(params_[i].tensor);
            if (!g[i]) continue;
            if (g[i]->shape() != params_[i].tensor.shape()) {
                throw ContractError("gradient shape " + shape_str(g[i]->shape()) + " does not match parameter '" +
                                    params_[i].name + "' " + shape_str(params_[i].tensor.shape()));
            }
            for (T v : g[i]->data())
                if (!std::isfinite(v)) throw NonFiniteGradient(tag.epoch, tag.batch, params_[i].name);
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T nb1 = static_cast<T>(1.0 - cfg_.beta1), nb2 = static_cast<T>(1.0 - cfg_.beta2);
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T eps = static_cast<T>(cfg_.eps);
        const T c1 = static_cast<T>(1.0 / bc1), c2 = static_cast<T>(1.0 / bc2);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto w = params_[i].tensor.mutable_data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < w.size(); ++k) {
                const T gk = g[i] ? g[i]->data()[k] : T(0);
                m[k] = b1 * m[k] + nb1 * gk;
                v[k] = b2 * v[k] + nb2 * gk * gk;
                const T mhat = m[k] * c1;
                const T vhat = v[k] * c2;
                w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

private:
    std::vector<NamedTensor<T>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace sdistill
