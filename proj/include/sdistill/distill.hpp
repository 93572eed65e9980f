#pragma once

// Multitask and distillation losses, and the exponential-moving-average
// teacher used by Smooth-Distill.

#include <cmath>
#include <memory>
#include <span>
#include <string>

#include "model.hpp"

namespace sdistill {

struct DistillConfig {
    double alpha = 0.5;   ///< task weight between task 1 and task 2
    double lambda = 0.5;  ///< distillation weight
    double tau = 3.0;     ///< softmax temperature
    double beta = 0.999;  ///< teacher smoothing coefficient

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1], got " + std::to_string(alpha));
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
        if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
        if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("beta must lie in [0, 1), got " + std::to_string(beta));
    }
};

namespace detail {
inline void check_unit(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
}
}  // namespace detail

/// Row-wise softmax of z / tau.
template <class T>
BasicTensor<T> softened_probs(const BasicTensor<T>& z, double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
    return softmax(scale(z, static_cast<T>(1.0 / tau)));
}

/// tau^2 * mean over rows of KL(p_teacher || p_student) at temperature tau.
/// Teacher logits are treated as constants.
template <class T>
BasicTensor<T> kd_loss(const BasicTensor<T>& teacher_logits, const BasicTensor<T>& student_logits, double tau) {
    if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
    if (teacher_logits.shape() != student_logits.shape() || student_logits.rank() != 2) {
        throw ShapeError("kd_loss: teacher logits " + shape_str(teacher_logits.shape()) + " vs student logits " +
                         shape_str(student_logits.shape()));
    }
    const T inv_tau = static_cast<T>(1.0 / tau);
    BasicTensor<T> log_pt;
    {
        NoGrad<T> off;
        log_pt = log_softmax(scale(teacher_logits.detach(), inv_tau));
    }
    BasicTensor<T> p_t = exp(log_pt);
    auto log_ps = log_softmax(scale(student_logits, inv_tau));
    auto kl = sum(mul(p_t, sub(log_pt, log_ps)));
    const double n = static_cast<double>(student_logits.dim(0));
    return scale(kl, static_cast<T>(tau * tau / n));
}

/// alpha * first + (1 - alpha) * second.
template <class T>
BasicTensor<T> weight_tasks(const BasicTensor<T>& first, const BasicTensor<T>& second, double alpha) {
    detail::check_unit(alpha, "alpha");
    return add(scale(first, static_cast<T>(alpha)), scale(second, static_cast<T>(1.0 - alpha)));
}

/// alpha * CE(z1, y1) + (1 - alpha) * CE(z2, y2).
template <class T>
BasicTensor<T> multitask_ce_loss(const BasicTensor<T>& z1, std::span<const int> y1, const BasicTensor<T>& z2,
                                 std::span<const int> y2, double alpha) {
    return weight_tasks(cross_entropy(z1, y1), cross_entropy(z2, y2), alpha);
}

/// (1 - lambda) * ce + lambda * distill.
template <class T>
BasicTensor<T> born_again_total(const BasicTensor<T>& ce, const BasicTensor<T>& distill, double lambda) {
    detail::check_unit(lambda, "lambda");
    return add(scale(ce, static_cast<T>(1.0 - lambda)), scale(distill, static_cast<T>(lambda)));
}

/// alpha * (ce1 + lambda * kd1) + (1 - alpha) * (ce2 + lambda * kd2).
/// With lambda == 0 the distillation terms are left out of the graph, so the
/// result is the plain multitask loss.
template <class T>
BasicTensor<T> smooth_total(const BasicTensor<T>& ce1, const BasicTensor<T>& kd1, const BasicTensor<T>& ce2,
                            const BasicTensor<T>& kd2, double alpha, double lambda) {
    detail::check_unit(lambda, "lambda");
    if (lambda == 0.0) return weight_tasks(ce1, ce2, alpha);
    const T l = static_cast<T>(lambda);
    return weight_tasks(add(ce1, scale(kd1, l)), add(ce2, scale(kd2, l)), alpha);
}

/// Smoothed copy of a student network. Its parameters never require
/// gradients, so no optimizer state can be attached to them.
template <class T>
class TeacherState {
public:
    explicit TeacherState(const Model<T>& student) : model_(student.clone()) { set_trainable(*model_, false); }

    Model<T>& model() { return *model_; }
    const Model<T>& model() const { return *model_; }

    /// Eval-mode logits, never recorded on a tape.
    std::vector<BasicTensor<T>> forward(const BasicTensor<T>& x) {
        NoGrad<T> off;
        return model_->forward(x, Mode::eval, nullptr);
    }

private:
    std::unique_ptr<Model<T>> model_;
};

/// teacher <- beta * teacher + (1 - beta) * student, for every parameter and
/// batch-norm statistic. Arithmetic is carried out in double precision.
template <class T>
void ema_update(Model<T>& teacher, const Model<T>& student, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1], got " + std::to_string(beta));
    auto t = teacher.state();
    auto s = student.state();
    if (t.size() != s.size()) throw ContractError("teacher and student state layouts differ");
    const double keep = beta, take = 1.0 - beta;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].tensor.shape() != s[i].tensor.shape()) {
            throw ContractError("teacher/student shape mismatch for '" + t[i].name + "'");
        }
        auto tv = t[i].tensor.mutable_data();
        auto sv = s[i].tensor.data();
        for (std::size_t k = 0; k < tv.size(); ++k)
            tv[k] = static_cast<T>(keep * static_cast<double>(tv[k]) + take * static_cast<double>(sv[k]));
    }
}

template <class T>
void ema_update(TeacherState<T>& teacher, const Model<T>& student, double beta) {
    ema_update(teacher.model(), student, beta);
}

}  // namespace sdistill
