#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <sdistill/sdistill.hpp>

namespace sdistill::testing {

using DTensor = BasicTensor<double>;

inline DTensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = u(rng);
    return DTensor(std::move(shape), std::move(v), grad);
}

/// Largest per-leaf relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// between tape gradients and central differences with step h.
inline double grad_check(const std::vector<DTensor>& leaves, const std::function<DTensor()>& f, double h = 1e-3) {
    GradMap<double> g;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        auto loss = f();
        g = tape.backward(loss);
    }
    double worst = 0.0;
    for (auto leaf : leaves) {
        auto a = g.at(leaf).data();
        auto w = leaf.mutable_data();
        double diff = 0, na = 0, nn = 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double saved = w[k];
            double fp, fm;
            {
                NoGrad<double> off;
                w[k] = saved + h;
                fp = f().item();
                w[k] = saved - h;
                fm = f().item();
            }
            w[k] = saved;
            const double num = (fp - fm) / (2 * h);
            diff += (a[k] - num) * (a[k] - num);
            na += a[k] * a[k];
            nn += num * num;
        }
        const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
        worst = std::max(worst, std::sqrt(diff) / denom);
    }
    return worst;
}

/// Inputs whose entries stay at least `gap` away from zero (ReLU kink).
inline DTensor away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.01) {
    auto t = uniform(std::move(shape), rng);
    for (auto& v : t.mutable_data())
        if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + v;
    return t;
}

/// Integer labels in [0, classes).
inline std::vector<int> labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, static_cast<int>(classes) - 1);
    std::vector<int> y(n);
    for (auto& v : y) v = d(rng);
    return y;
}

/// Small network for fast training tests.
inline MTLNetConfig small_net(const WindowedDataset& ds, std::size_t hidden = 32) {
    MTLNetConfig c;
    c.window_length = ds.length;
    c.num_classes_task1 = ds.num_classes_task1();
    c.num_classes_task2 = ds.num_classes_task2();
    c.blocks = {{8, 5, 2}, {16, 5, 2}};
    c.hidden_width = hidden;
    c.dropout = 0.3;
    return c;
}

/// Training and validation over a fresh split of `ds`.
inline DataSplits first_fold(const WindowedDataset& ds, std::uint64_t seed = 0) {
    auto s = split_and_fold(ds, seed);
    auto v = fold_view(s, 0);
    return {&ds, v.train, v.val, s.test};
}

inline TrainConfig quick_train(std::size_t epochs, std::uint64_t seed = 0) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 32;
    t.seed = seed;
    t.learning_rate = 3e-3;
    return t;
}

template <class T>
std::vector<std::vector<T>> param_values(const Model<T>& m) {
    std::vector<std::vector<T>> out;
    for (auto& p : m.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

}  // namespace sdistill::testing
