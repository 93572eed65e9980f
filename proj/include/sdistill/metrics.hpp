#pragma once

// Confusion matrices, per-class and macro metrics, and the paired t-test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace sdistill {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;
    std::vector<std::string> names;

    std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * classes + p]; }
    std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * classes + p]; }
    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto c : counts) s += c;
        return s;
    }
    std::uint64_t trace() const {
        std::uint64_t s = 0;
        for (std::size_t k = 0; k < classes; ++k) s += at(k, k);
        return s;
    }
    std::uint64_t row(std::size_t k) const {
        std::uint64_t s = 0;
        for (std::size_t j = 0; j < classes; ++j) s += at(k, j);
        return s;
    }
    std::uint64_t col(std::size_t k) const {
        std::uint64_t s = 0;
        for (std::size_t i = 0; i < classes; ++i) s += at(i, k);
        return s;
    }
};

inline ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred, std::size_t classes,
                                 std::vector<std::string> names = {}) {
    if (y_true.size() != y_pred.size()) {
        throw DataError("confusion: " + std::to_string(y_true.size()) + " true labels vs " +
                        std::to_string(y_pred.size()) + " predictions");
    }
    ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0), std::move(names)};
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        auto t = y_true[i], p = y_pred[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
            throw DataError("confusion: label pair (" + std::to_string(t) + ", " + std::to_string(p) +
                            ") at sample " + std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
        }
        ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

/// Per-class figures. Empty optionals mark 0/0 cases.
struct ClassMetrics {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    std::optional<double> sensitivity, ppv, npv, f1;
};

struct MetricsReport {
    double accuracy = 0.0;
    std::optional<double> macro_f1;
    std::optional<double> macro_sensitivity, macro_ppv, macro_npv;
    std::vector<ClassMetrics> per_class;
    std::vector<std::string> names;
};

namespace detail {
inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline std::optional<double> mean_defined(const std::vector<ClassMetrics>& pc,
                                          std::optional<double> ClassMetrics::*field) {
    double s = 0;
    std::size_t n = 0;
    for (auto& c : pc)
        if (c.*field) s += *(c.*field), ++n;
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
}
}  // namespace detail

/// F1 of a class is 2TP / (2TP + FP + FN), which equals the harmonic mean of
/// PPV and sensitivity whenever that is defined. Classes absent from both the
/// truth and the predictions get no F1 and drop out of the macro mean.
inline MetricsReport report(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw DataError("report: empty confusion matrix");
    MetricsReport r;
    r.names = cm.names;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    for (std::size_t k = 0; k < cm.classes; ++k) {
        ClassMetrics c;
        c.tp = cm.at(k, k);
        c.fn = cm.row(k) - c.tp;
        c.fp = cm.col(k) - c.tp;
        c.tn = total - c.tp - c.fn - c.fp;
        c.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
        c.sensitivity = detail::ratio(c.tp, c.tp + c.fn);
        c.ppv = detail::ratio(c.tp, c.tp + c.fp);
        c.npv = detail::ratio(c.tn, c.tn + c.fn);
        c.f1 = detail::ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
        r.per_class.push_back(c);
    }
    r.macro_f1 = detail::mean_defined(r.per_class, &ClassMetrics::f1);
    r.macro_sensitivity = detail::mean_defined(r.per_class, &ClassMetrics::sensitivity);
    r.macro_ppv = detail::mean_defined(r.per_class, &ClassMetrics::ppv);
    r.macro_npv = detail::mean_defined(r.per_class, &ClassMetrics::npv);
    return r;
}

// ---------------------------------------------------------------------------
// Student t

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double betacf(double a, double b, double x) {
    constexpr double tiny = 1e-300, eps = 1e-15;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double bt = std::exp(lbt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::betacf(a, b, x) / a;
    return 1.0 - bt * detail::betacf(b, a, 1.0 - x) / b;
}

/// P(|T| >= |t|) for Student t with `df` degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

inline double student_t_cdf(double t, double df) {
    const double tail = 0.5 * student_t_two_sided(t, df);
    return t >= 0 ? 1.0 - tail : tail;
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    double mean_diff = 0.0;
    double sd_diff = 0.0;
};

/// Paired t-test on d = a - b. Zero spread with a nonzero mean gives p = 0;
/// all-zero differences give t = 0 and p = 1.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("paired_t_test: samples are not aligned");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("paired_t_test needs at least 2 pairs, got " + std::to_string(n));
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= double(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    TTestResult r;
    r.df = double(n - 1);
    r.mean_diff = mean;
    r.sd_diff = std::sqrt(ss / r.df);
    const double scale = std::max({1.0, std::fabs(mean)});
    if (r.sd_diff <= 1e-12 * scale) {
        if (std::fabs(mean) <= 1e-12 * scale) return r;
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = mean / (r.sd_diff / std::sqrt(double(n)));
    r.p = student_t_two_sided(r.t, r.df);
    return r;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {
inline std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : "NA"; }
inline nlohmann::ordered_json jcell(const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}
inline std::string class_name(const std::vector<std::string>& names, std::size_t k) {
    return k < names.size() ? names[k] : std::to_string(k);
}
}  // namespace detail

/// One row per class plus a summary row. Undefined cells read "NA".
inline std::string report_csv(const MetricsReport& r) {
    std::string out = "class,support,tp,fp,fn,tn,accuracy,sensitivity,ppv,npv,f1\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        auto& c = r.per_class[k];
        out += fmt::format("{},{},{},{},{},{},{:.6f},{},{},{},{}\n", detail::class_name(r.names, k), c.tp + c.fn, c.tp,
                           c.fp, c.fn, c.tn, c.accuracy, detail::cell(c.sensitivity), detail::cell(c.ppv),
                           detail::cell(c.npv), detail::cell(c.f1));
    }
    std::uint64_t n = 0;
    for (auto& c : r.per_class) n += c.tp + c.fn;
    out += fmt::format("macro,{},,,,,{:.6f},{},{},{},{}\n", n, r.accuracy, detail::cell(r.macro_sensitivity),
                       detail::cell(r.macro_ppv), detail::cell(r.macro_npv), detail::cell(r.macro_f1));
    return out;
}

inline nlohmann::ordered_json report_json(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = detail::jcell(r.macro_f1);
    j["macro_sensitivity"] = detail::jcell(r.macro_sensitivity);
    j["macro_ppv"] = detail::jcell(r.macro_ppv);
    j["macro_npv"] = detail::jcell(r.macro_npv);
    auto& pc = j["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        auto& c = r.per_class[k];
        pc.push_back({{"class", detail::class_name(r.names, k)},
                      {"tp", c.tp},
                      {"fp", c.fp},
                      {"fn", c.fn},
                      {"tn", c.tn},
                      {"accuracy", c.accuracy},
                      {"sensitivity", detail::jcell(c.sensitivity)},
                      {"ppv", detail::jcell(c.ppv)},
                      {"npv", detail::jcell(c.npv)},
                      {"f1", detail::jcell(c.f1)}});
    }
    return j;
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
    std::string out = "true\\pred";
    for (std::size_t k = 0; k < cm.classes; ++k) out += "," + detail::class_name(cm.names, k);
    out += '\n';
    for (std::size_t t = 0; t < cm.classes; ++t) {
        out += detail::class_name(cm.names, t);
        for (std::size_t p = 0; p < cm.classes; ++p) out += fmt::format(",{}", cm.at(t, p));
        out += '\n';
    }
    return out;
}

inline nlohmann::ordered_json confusion_json(const ConfusionMatrix& cm) {
    nlohmann::ordered_json j;
    j["classes"] = cm.classes;
    j["names"] = cm.names;
    j["counts"] = cm.counts;
    return j;
}

inline ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
    ConfusionMatrix cm;
    cm.classes = j.at("classes").get<std::size_t>();
    cm.names = j.at("names").get<std::vector<std::string>>();
    cm.counts = j.at("counts").get<std::vector<std::uint64_t>>();
    if (cm.counts.size() != cm.classes * cm.classes) throw DataError("confusion matrix JSON has the wrong cell count");
    return cm;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Aggregation

inline double mean_of(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / double(v.size());
}

/// Sample standard deviation; empty when fewer than two values.
inline std::optional<double> stddev_of(std::span<const double> v) {
    if (v.size() < 2) return std::nullopt;
    const double m = mean_of(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size() - 1));
}

}  // namespace sdistill
