#pragma once

// The five training procedures and best-epoch model selection.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "data.hpp"
#include "distill.hpp"
#include "metrics.hpp"
#include "optim.hpp"

namespace sdistill {

enum class Method { singletask1, singletask2, multitask, sd_dropout, born_again, smooth_distill };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::singletask1: return "singletask1";
        case Method::singletask2: return "singletask2";
        case Method::multitask: return "multitask";
        case Method::sd_dropout: return "sd_dropout";
        case Method::born_again: return "born_again";
        case Method::smooth_distill: return "smooth_distill";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    for (auto m : {Method::singletask1, Method::singletask2, Method::multitask, Method::sd_dropout,
                   Method::born_again, Method::smooth_distill})
        if (s == method_name(m)) return m;
    throw ConfigError("unknown method '" + std::string(s) +
                      "' (expected singletask1, singletask2, multitask, sd_dropout, born_again, smooth_distill)");
}

inline bool is_single_task(Method m) { return m == Method::singletask1 || m == Method::singletask2; }

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t epochs = 300;
    std::uint64_t seed = 0;
    DistillConfig distill;
    Method method = Method::multitask;
    double view_dropout = 0.5;  ///< SD-Dropout mask probability

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
        if (batch_size < 2) throw ConfigError("batch size must be at least 2");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (!(view_dropout >= 0.0 && view_dropout < 1.0)) throw ConfigError("view dropout must lie in [0, 1)");
        distill.validate();
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0, train_acc1 = 0, train_acc2 = 0;
    double val_loss = 0, val_acc1 = 0, val_acc2 = 0;
    double seconds = 0;
};

inline std::string progress_header() {
    return "epoch\ttrain_loss\ttrain_acc1\ttrain_acc2\tval_loss\tval_acc1\tval_acc2\tseconds";
}

inline std::string progress_line(const EpochRecord& e) {
    auto f = [](double v) { return std::isnan(v) ? std::string("NA") : fmt::format("{:.6f}", v); };
    return fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3f}", e.epoch, f(e.train_loss), f(e.train_acc1),
                       f(e.train_acc2), f(e.val_loss), f(e.val_acc1), f(e.val_acc2), e.seconds);
}

/// Metrics of one task on one split.
struct TaskEval {
    double loss = 0;
    double accuracy = 0;
    std::optional<double> macro_f1;
    ConfusionMatrix cm;
};

struct RunResult {
    Method method = Method::multitask;
    std::uint64_t seed = 0;
    int fold = -1;
    std::vector<EpochRecord> epochs;
    std::vector<EpochRecord> stage1_epochs;  // Born-Again teacher stage
    std::size_t best_epoch = 0;
    std::string best_checkpoint;
    std::map<int, TaskEval> val, test;  // keyed by task id
    double seconds = 0;
    double stage1_seconds = 0;
    std::vector<int> tasks;

    bool has_task(int t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }
};

/// Index lists into one windowed dataset.
struct DataSplits {
    const WindowedDataset* data = nullptr;
    std::vector<std::size_t> train, val, test;
};

template <class T>
struct StepInfo {
    std::size_t epoch;  // 1-based
    std::size_t batch;  // 0-based within the epoch
    int stage;          // 2 for the Born-Again student stage, 1 otherwise
    Model<T>& student;
    Model<T>* teacher;
    const Adam<T>& optimizer;
};

template <class T>
struct TrainHooks {
    std::function<void(const StepInfo<T>&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
    std::ostream* progress = nullptr;
};

/// Independent random streams derived from the run seed.
enum class Stream : std::uint64_t { init = 1, shuffle = 2, dropout = 3 };

inline Rng stream_rng(std::uint64_t seed, Stream s) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    return Rng(seq);
}

/// Consecutive batches over `n` items. A trailing batch of one is folded into
/// the batch before it so training-mode batch norm always sees two rows.
inline std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t s = 0; s < n; s += batch_size) out.push_back({s, std::min(n, s + batch_size)});
    if (out.size() >= 2 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

namespace detail {

struct Batch {
    std::vector<std::size_t> idx;
    std::vector<int> y1, y2;
};

template <class T>
using BatchLoss = std::function<BasicTensor<T>(const BasicTensor<T>& x, const Batch& b, Rng& dropout_rng)>;

template <class T>
BasicTensor<T> task_ce(const BasicTensor<T>& logits, int task, const Batch& b) {
    return cross_entropy(logits, std::span<const int>(task == 1 ? b.y1 : b.y2));
}

struct SplitScore {
    double loss = 0;
    std::map<int, double> acc;
    std::map<int, std::vector<int>> pred;
};

/// Eval-mode pass over `idx`. The loss is the task-weighted cross-entropy for
/// dual-head models and the plain cross-entropy otherwise.
template <class T>
SplitScore score(Model<T>& m, const WindowedDataset& ds, const std::vector<std::size_t>& idx, double alpha,
                 std::size_t chunk = 256) {
    NoGrad<T> off;
    SplitScore s;
    auto tasks = m.head_tasks();
    std::map<int, double> ce_sum;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::span<const std::size_t> sl(idx.data() + start, std::min(chunk, idx.size() - start));
        auto x = ds.gather<T>(sl);
        auto z = m.forward(x, Mode::eval, nullptr);
        for (std::size_t k = 0; k < z.size(); ++k) {
            auto y = ds.labels(tasks[k], sl);
            ce_sum[tasks[k]] += static_cast<double>(cross_entropy(z[k], std::span<const int>(y)).item()) *
                                static_cast<double>(sl.size());
            auto p = argmax_rows(z[k]);
            auto& dst = s.pred[tasks[k]];
            dst.insert(dst.end(), p.begin(), p.end());
        }
    }
    for (int t : tasks) {
        auto y = ds.labels(t, idx);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < y.size(); ++i) hit += y[i] == s.pred[t][i];
        s.acc[t] = idx.empty() ? 0.0 : double(hit) / double(idx.size());
        ce_sum[t] /= double(std::max<std::size_t>(1, idx.size()));
    }
    if (tasks.size() == 2) s.loss = alpha * ce_sum[1] + (1.0 - alpha) * ce_sum[2];
    else s.loss = ce_sum[tasks.front()];
    return s;
}

template <class T>
std::map<int, TaskEval> evaluate_split(Model<T>& m, const WindowedDataset& ds, const std::vector<std::size_t>& idx,
                                       double alpha) {
    std::map<int, TaskEval> out;
    if (idx.empty()) return out;
    auto s = score(m, ds, idx, alpha);
    for (int t : m.head_tasks()) {
        TaskEval e;
        auto y = ds.labels(t, idx);
        const auto& names = t == 1 ? ds.task1_names : ds.task2_names;
        auto classes = m.head_classes()[static_cast<std::size_t>(m.head_for_task(t))];
        e.cm = confusion(y, s.pred[t], classes, names);
        auto r = report(e.cm);
        e.accuracy = r.accuracy;
        e.macro_f1 = r.macro_f1;
        e.loss = s.loss;
        out[t] = std::move(e);
    }
    return out;
}

inline void check_splits(const DataSplits& d) {
    if (!d.data) throw DataError("no dataset given");
    if (d.train.empty()) throw DataError("empty training set");
    if (d.val.empty()) throw DataError("empty validation set; best-epoch selection needs validation data");
    for (auto* v : {&d.train, &d.val, &d.test})
        for (auto i : *v)
            if (i >= d.data->size()) throw DataError("split index " + std::to_string(i) + " outside dataset");
}

template <class T>
void check_model(const Model<T>& m, const WindowedDataset& ds) {
    auto tasks = m.head_tasks();
    auto classes = m.head_classes();
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        auto have = tasks[k] == 1 ? ds.num_classes_task1() : ds.num_classes_task2();
        if (have != classes[k]) {
            throw ConfigError("head for task " + std::to_string(tasks[k]) + " has " + std::to_string(classes[k]) +
                              " classes, dataset has " + std::to_string(have));
        }
    }
    if (m.input_shape() != Shape{1, 3, ds.length}) {
        throw ShapeError("model input " + shape_str(m.input_shape()) + " vs dataset windows " +
                         shape_str(Shape{1, 3, ds.length}));
    }
}

/// Shared epoch loop: minibatch Adam on `loss_fn`, per-epoch scoring, best
/// snapshot by mean validation accuracy, final val/test evaluation from the
/// best snapshot.
template <class T>
RunResult fit(Model<T>& student, const DataSplits& d, const TrainConfig& cfg, const BatchLoss<T>& loss_fn,
              const std::function<void()>& after_step, Model<T>* teacher, int stage, const TrainHooks<T>& hooks) {
    using clock = std::chrono::steady_clock;
    check_splits(d);
    check_model(student, *d.data);
    const auto& ds = *d.data;
    RunResult r;
    r.method = cfg.method;
    r.seed = cfg.seed;
    r.tasks = student.head_tasks();

    Adam<T> opt(student.parameters(), AdamConfig{cfg.learning_rate});
    Rng shuffle_rng = stream_rng(cfg.seed, Stream::shuffle);
    Rng dropout_rng = stream_rng(cfg.seed, Stream::dropout);
    std::vector<std::size_t> order = d.train;
    const auto batches = make_batches(order.size(), cfg.batch_size);

    double best_score = -1.0;
    StateSnapshot<T> best;
    const auto t0 = clock::now();
    for (std::size_t ep = 1; ep <= cfg.epochs; ++ep) {
        const auto e0 = clock::now();
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            Batch b;
            b.idx.assign(order.begin() + static_cast<std::ptrdiff_t>(batches[bi].first),
                         order.begin() + static_cast<std::ptrdiff_t>(batches[bi].second));
            b.y1 = ds.labels(1, b.idx);
            b.y2 = ds.labels(2, b.idx);
            auto x = ds.gather<T>(b.idx);
            Tape<T> tape;
            GradMap<T> grads;
            {
                TapeScope<T> scope(tape);
                auto loss = loss_fn(x, b, dropout_rng);
                loss_sum += static_cast<double>(loss.item()) * double(b.idx.size());
                grads = tape.backward(loss);
            }
            opt.step(grads, {ep, bi});
            if (after_step) after_step();
            if (hooks.on_step) hooks.on_step(StepInfo<T>{ep, bi, stage, student, teacher, opt});
        }
        EpochRecord rec;
        rec.epoch = ep;
        rec.train_loss = loss_sum / double(order.size());
        auto tr = score(student, ds, d.train, cfg.distill.alpha);
        auto va = score(student, ds, d.val, cfg.distill.alpha);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        rec.train_acc1 = tr.acc.count(1) ? tr.acc[1] : nan;
        rec.train_acc2 = tr.acc.count(2) ? tr.acc[2] : nan;
        rec.val_loss = va.loss;
        rec.val_acc1 = va.acc.count(1) ? va.acc[1] : nan;
        rec.val_acc2 = va.acc.count(2) ? va.acc[2] : nan;
        rec.seconds = std::chrono::duration<double>(clock::now() - e0).count();
        double sel = 0;
        for (auto& [t, a] : va.acc) sel += a;
        sel /= double(va.acc.size());
        if (sel > best_score) {
            best_score = sel;
            best = snapshot(student);
            r.best_epoch = ep;
        }
        r.epochs.push_back(rec);
        if (hooks.progress) *hooks.progress << progress_line(rec) << '\n' << std::flush;
        if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    r.best_checkpoint = fmt::format("epoch-{:04d}", r.best_epoch);
    restore(student, best);
    r.val = evaluate_split(student, ds, d.val, cfg.distill.alpha);
    r.test = evaluate_split(student, ds, d.test, cfg.distill.alpha);
    return r;
}

template <class T>
void require_heads(const Model<T>& m, std::vector<int> tasks, const char* who) {
    if (m.head_tasks() != tasks) throw ConfigError(std::string(who) + ": model heads do not match the method");
}

template <class T>
DualLogits<T> dual(const std::vector<BasicTensor<T>>& z) {
    return {z[0], z[1]};
}

/// Distillation loss of a student against fixed teacher logits.
template <class T>
BasicTensor<T> distilled_loss(const std::vector<BasicTensor<T>>& zs, const std::vector<BasicTensor<T>>& zt,
                              const Batch& b, const DistillConfig& dc) {
    auto ce1 = task_ce(zs[0], 1, b);
    auto ce2 = task_ce(zs[1], 2, b);
    if (dc.lambda == 0.0) return smooth_total(ce1, ce1, ce2, ce2, dc.alpha, 0.0);
    auto kd1 = kd_loss(zt[0], zs[0], dc.tau);
    auto kd2 = kd_loss(zt[1], zs[1], dc.tau);
    return smooth_total(ce1, kd1, ce2, kd2, dc.alpha, dc.lambda);
}

}  // namespace detail

/// Cross-entropy on the model's single head.
template <class T>
RunResult train_singletask(Model<T>& model, const DataSplits& data, int task, TrainConfig cfg,
                           const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    if (task != 1 && task != 2) throw ConfigError("task must be 1 or 2");
    detail::require_heads(model, {task}, "train_singletask");
    cfg.method = task == 1 ? Method::singletask1 : Method::singletask2;
    detail::BatchLoss<T> loss = [&](const BasicTensor<T>& x, const detail::Batch& b, Rng& rng) {
        auto z = model.forward(x, Mode::train, &rng);
        return detail::task_ce(z[0], task, b);
    };
    return detail::fit<T>(model, data, cfg, loss, {}, nullptr, 1, hooks);
}

/// Task-weighted cross-entropy on both heads.
template <class T>
RunResult train_multitask(Model<T>& model, const DataSplits& data, TrainConfig cfg, const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    cfg.method = Method::multitask;
    detail::require_heads(model, {1, 2}, "train_multitask");
    const double alpha = cfg.distill.alpha;
    detail::BatchLoss<T> loss = [&](const BasicTensor<T>& x, const detail::Batch& b, Rng& rng) {
        auto z = model.forward(x, Mode::train, &rng);
        return multitask_ce_loss(z[0], std::span<const int>(b.y1), z[1], std::span<const int>(b.y2), alpha);
    };
    return detail::fit<T>(model, data, cfg, loss, {}, nullptr, 1, hooks);
}

/// Two dropout views A and B of one feature pass. Cross-entropy is averaged
/// over the views; each task adds (KD(A->B) + KD(B->A)) / 2.
template <class T>
BasicTensor<T> sd_dropout_loss(Model<T>& model, const BasicTensor<T>& x, std::span<const int> y1,
                               std::span<const int> y2, const Dropout<T>& drop, const DistillConfig& dc, Rng& rng) {
    auto f = model.forward_features(x, Mode::train);
    auto fa = drop.forward(f, Mode::train, &rng);
    auto fb = drop.forward(f, Mode::train, &rng);
    const T half = static_cast<T>(0.5);
    std::vector<BasicTensor<T>> ce(2), kd(2);
    for (std::size_t k = 0; k < 2; ++k) {
        auto za = model.head(k, fa);
        auto zb = model.head(k, fb);
        auto y = k == 0 ? y1 : y2;
        ce[k] = scale(add(cross_entropy(za, y), cross_entropy(zb, y)), half);
        kd[k] = dc.lambda == 0.0 ? ce[k] : scale(add(kd_loss(zb, za, dc.tau), kd_loss(za, zb, dc.tau)), half);
    }
    return smooth_total(ce[0], kd[0], ce[1], kd[1], dc.alpha, dc.lambda);
}

/// Self-distillation between two dropout views of the shared features.
template <class T>
RunResult train_sd_dropout(Model<T>& model, const DataSplits& data, TrainConfig cfg, const TrainHooks<T>& hooks = {}) {
    cfg.validate();
    cfg.method = Method::sd_dropout;
    detail::require_heads(model, {1, 2}, "train_sd_dropout");
    const auto dc = cfg.distill;
    Dropout<T> drop(cfg.view_dropout);
    detail::BatchLoss<T> loss = [&](const BasicTensor<T>& x, const detail::Batch& b, Rng& rng) {
        return sd_dropout_loss(model, x, b.y1, b.y2, drop, dc, rng);
    };
    return detail::fit<T>(model, data, cfg, loss, {}, nullptr, 1, hooks);
}

/// Student trained against an eval-mode teacher whose parameters follow an
/// exponential moving average of the student after every step.
template <class T>
RunResult train_smooth_distill(Model<T>& model, const DataSplits& data, TrainConfig cfg,
                               const TrainHooks<T>& hooks = {}, std::unique_ptr<Model<T>>* teacher_out = nullptr) {
    cfg.validate();
    cfg.method = Method::smooth_distill;
    detail::require_heads(model, {1, 2}, "train_smooth_distill");
    TeacherState<T> teacher(model);
    const auto dc = cfg.distill;
    detail::BatchLoss<T> loss = [&](const BasicTensor<T>& x, const detail::Batch& b, Rng& rng) {
        auto zs = model.forward(x, Mode::train, &rng);
        auto zt = teacher.forward(x);
        return detail::distilled_loss(zs, zt, b, dc);
    };
    auto after = [&] { ema_update(teacher, model, dc.beta); };
    auto r = detail::fit<T>(model, data, cfg, loss, after, &teacher.model(), 1, hooks);
    if (teacher_out) *teacher_out = teacher.model().clone();
    return r;
}

/// Stage 1 trains a multitask teacher from theta_0; stage 2 restarts the
/// student at theta_0 and distills from the frozen best stage-1 model.
template <class T>
RunResult train_born_again(Model<T>& model, const DataSplits& data, TrainConfig cfg, const TrainHooks<T>& hooks = {},
                           std::unique_ptr<Model<T>>* teacher_out = nullptr) {
    cfg.validate();
    detail::require_heads(model, {1, 2}, "train_born_again");
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto theta0 = snapshot(model);

    TrainConfig c1 = cfg;
    c1.method = Method::multitask;
    auto stage1 = train_multitask(model, data, c1, hooks);

    TeacherState<T> teacher(model);
    restore(model, theta0);
    cfg.method = Method::born_again;
    const auto dc = cfg.distill;
    detail::BatchLoss<T> loss = [&](const BasicTensor<T>& x, const detail::Batch& b, Rng& rng) {
        auto zs = model.forward(x, Mode::train, &rng);
        auto zt = teacher.forward(x);
        return detail::distilled_loss(zs, zt, b, dc);
    };
    auto r = detail::fit<T>(model, data, cfg, loss, {}, &teacher.model(), 2, hooks);
    r.stage1_epochs = std::move(stage1.epochs);
    r.stage1_seconds = stage1.seconds;
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    if (teacher_out) *teacher_out = teacher.model().clone();
    return r;
}

/// A freshly initialized MTL-net for `method`, seeded from the run seed.
template <class T = float>
std::unique_ptr<MTLNet<T>> build_model(const MTLNetConfig& mc, Method method, std::uint64_t seed) {
    Heads h = method == Method::singletask1 ? Heads::task1 : method == Method::singletask2 ? Heads::task2 : Heads::dual;
    auto m = std::make_unique<MTLNet<T>>(mc, h);
    Rng rng = stream_rng(seed, Stream::init);
    m->init(rng);
    return m;
}

template <class T>
RunResult train_method(Model<T>& model, const DataSplits& data, const TrainConfig& cfg,
                       const TrainHooks<T>& hooks = {}, std::unique_ptr<Model<T>>* teacher_out = nullptr) {
    switch (cfg.method) {
        case Method::singletask1: return train_singletask(model, data, 1, cfg, hooks);
        case Method::singletask2: return train_singletask(model, data, 2, cfg, hooks);
        case Method::multitask: return train_multitask(model, data, cfg, hooks);
        case Method::sd_dropout: return train_sd_dropout(model, data, cfg, hooks);
        case Method::born_again: return train_born_again(model, data, cfg, hooks, teacher_out);
        case Method::smooth_distill: return train_smooth_distill(model, data, cfg, hooks, teacher_out);
    }
    throw ConfigError("unhandled method");
}

/// Builds, initializes and trains one model.
template <class T = float>
RunResult run_method(const MTLNetConfig& mc, const DataSplits& data, const TrainConfig& cfg,
                     const TrainHooks<T>& hooks = {}, std::unique_ptr<Model<T>>* model_out = nullptr,
                     std::unique_ptr<Model<T>>* teacher_out = nullptr) {
    auto model = build_model<T>(mc, cfg.method, cfg.seed);
    auto r = train_method<T>(*model, data, cfg, hooks, teacher_out);
    if (model_out) *model_out = std::move(model);
    return r;
}

}  // namespace sdistill
