#pragma once

// Recordings, sliding windows, windowed datasets, splits and folds, the
// synthetic two-task generator, and the binary window cache.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sdistill {

/// One continuous tri-axial stream from a single sensor placement.
struct RawRecording {
    std::string subject_id;
    int placement = 0;
    std::vector<std::array<float, 3>> samples;  // g units
    std::vector<int> activity;                  // one label per sample
    double sampling_rate = 0.0;                 // Hz, metadata only
    std::string source;

    std::size_t size() const { return samples.size(); }
    void check() const {
        if (samples.size() != activity.size()) {
            throw DataError("recording '" + subject_id + "': " + std::to_string(samples.size()) + " samples but " +
                            std::to_string(activity.size()) + " activity labels");
        }
    }
};

struct Provenance {
    std::string subject;
    std::string source;
    std::size_t start = 0;
    bool operator==(const Provenance&) const = default;
};

/// A single (3, L) window with its labels. Values are axis-major.
struct Window {
    std::size_t length = 0;
    std::vector<float> values;
    int y1 = 0;
    int y2 = 0;
    Provenance origin;
};

/// Most frequent label; ties go to the smallest label id.
inline int modal_label(std::span<const int> labels) {
    if (labels.empty()) throw DataError("modal_label on an empty slice");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    int best = counts.begin()->first;
    std::size_t best_n = 0;
    for (auto [l, n] : counts)
        if (n > best_n) best = l, best_n = n;
    return best;
}

inline std::size_t window_count(std::size_t n, std::size_t length, std::size_t step) {
    return n < length ? 0 : (n - length) / step + 1;
}

/// Windows starting at 0, step, 2*step, ... that fit entirely inside `rec`.
inline std::vector<Window> window_slide(const RawRecording& rec, std::size_t length = 100, std::size_t step = 60) {
    if (length < 1 || step < 1) throw ConfigError("window length and step must be at least 1");
    rec.check();
    std::vector<Window> out;
    const std::size_t n = rec.size();
    out.reserve(window_count(n, length, step));
    for (std::size_t s = 0; s + length <= n; s += step) {
        Window w;
        w.length = length;
        w.values.resize(3 * length);
        for (std::size_t t = 0; t < length; ++t)
            for (std::size_t a = 0; a < 3; ++a) w.values[a * length + t] = rec.samples[s + t][a];
        w.y1 = modal_label(std::span<const int>(rec.activity).subspan(s, length));
        w.y2 = rec.placement;
        w.origin = {rec.subject_id, rec.source, s};
        out.push_back(std::move(w));
    }
    return out;
}

/// Stacked windows, shape (N, 1, 3, L), with two label arrays.
struct WindowedDataset {
    std::size_t length = 0;
    std::vector<float> values;
    std::vector<int> y1, y2;
    std::vector<Provenance> origin;
    std::vector<std::string> task1_names, task2_names;

    std::size_t size() const { return y1.size(); }
    bool empty() const { return y1.empty(); }
    std::size_t window_numel() const { return 3 * length; }
    std::size_t num_classes_task1() const { return task1_names.size(); }
    std::size_t num_classes_task2() const { return task2_names.size(); }
    Shape shape() const { return {size(), 1, 3, length}; }

    std::span<const float> window(std::size_t i) const {
        return std::span<const float>(values).subspan(i * window_numel(), window_numel());
    }

    /// Rows `idx` as an (n, 1, 3, L) tensor.
    template <class T = float>
    BasicTensor<T> gather(std::span<const std::size_t> idx) const {
        std::vector<T> buf(idx.size() * window_numel());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto w = window(idx[r]);
            std::transform(w.begin(), w.end(), buf.begin() + static_cast<std::ptrdiff_t>(r * window_numel()),
                           [](float v) { return static_cast<T>(v); });
        }
        return BasicTensor<T>({idx.size(), 1, 3, length}, std::move(buf));
    }

    std::vector<int> labels(int task, std::span<const std::size_t> idx) const {
        const auto& y = task == 1 ? y1 : y2;
        std::vector<int> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(y[i]);
        return out;
    }

    void validate() const {
        if (values.size() != size() * window_numel() || y2.size() != size() || origin.size() != size()) {
            throw DataError("windowed dataset arrays are inconsistent");
        }
        for (std::size_t i = 0; i < size(); ++i) {
            if (y1[i] < 0 || static_cast<std::size_t>(y1[i]) >= std::max<std::size_t>(1, task1_names.size()) ||
                y2[i] < 0 || static_cast<std::size_t>(y2[i]) >= std::max<std::size_t>(1, task2_names.size())) {
                throw DataError("window " + std::to_string(i) + " has a label outside its class map");
            }
        }
    }
};

/// Stacks windows in the given order. All windows must share one length.
inline WindowedDataset assemble(const std::vector<Window>& windows, std::vector<std::string> task1_names = {},
                                std::vector<std::string> task2_names = {}) {
    WindowedDataset ds;
    ds.task1_names = std::move(task1_names);
    ds.task2_names = std::move(task2_names);
    if (windows.empty()) return ds;
    ds.length = windows.front().length;
    ds.values.reserve(windows.size() * 3 * ds.length);
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto& w = windows[i];
        if (w.length != ds.length || w.values.size() != 3 * w.length) {
            throw ShapeError("window " + std::to_string(i) + " has length " + std::to_string(w.length) +
                             ", expected " + std::to_string(ds.length));
        }
        ds.values.insert(ds.values.end(), w.values.begin(), w.values.end());
        ds.y1.push_back(w.y1);
        ds.y2.push_back(w.y2);
        ds.origin.push_back(w.origin);
    }
    return ds;
}

inline WindowedDataset subset(const WindowedDataset& ds, std::span<const std::size_t> idx) {
    WindowedDataset out;
    out.length = ds.length;
    out.task1_names = ds.task1_names;
    out.task2_names = ds.task2_names;
    for (auto i : idx) {
        auto w = ds.window(i);
        out.values.insert(out.values.end(), w.begin(), w.end());
        out.y1.push_back(ds.y1[i]);
        out.y2.push_back(ds.y2[i]);
        out.origin.push_back(ds.origin[i]);
    }
    return out;
}

/// Per-axis mean and standard deviation.
struct ChannelStats {
    std::array<double, 3> mean{}, stddev{1.0, 1.0, 1.0};
};

inline ChannelStats fit_channel_stats(const WindowedDataset& ds, std::span<const std::size_t> idx) {
    ChannelStats st;
    if (idx.empty()) return st;
    for (std::size_t a = 0; a < 3; ++a) {
        double s = 0, ss = 0;
        std::size_t n = 0;
        for (auto i : idx) {
            auto w = ds.window(i).subspan(a * ds.length, ds.length);
            for (float v : w) s += v, ss += double(v) * v, ++n;
        }
        double m = s / double(n);
        st.mean[a] = m;
        double var = ss / double(n) - m * m;
        st.stddev[a] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return st;
}

inline void standardize(WindowedDataset& ds, const ChannelStats& st) {
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t a = 0; a < 3; ++a) {
            float* p = ds.values.data() + i * ds.window_numel() + a * ds.length;
            for (std::size_t t = 0; t < ds.length; ++t)
                p[t] = static_cast<float>((p[t] - st.mean[a]) / st.stddev[a]);
        }
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
    std::vector<std::size_t> train, test;
    std::vector<std::vector<std::size_t>> folds;  // partition of train
    std::uint64_t seed = 0;
};

/// Training and validation indices when fold `k` is held out.
struct FoldView {
    std::vector<std::size_t> train, val;
};

inline FoldView fold_view(const SplitSpec& s, std::size_t k) {
    if (k >= s.folds.size()) throw ConfigError("fold " + std::to_string(k) + " out of range");
    FoldView v;
    v.val = s.folds[k];
    std::set_difference(s.train.begin(), s.train.end(), v.val.begin(), v.val.end(), std::back_inserter(v.train));
    return v;
}

namespace detail {
inline std::vector<std::vector<std::size_t>> chunk_folds(const std::vector<std::size_t>& order, std::size_t k) {
    std::vector<std::vector<std::size_t>> folds(k);
    const std::size_t base = order.size() / k, extra = order.size() % k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + len));
        std::sort(folds[f].begin(), folds[f].end());
        pos += len;
    }
    return folds;
}
}  // namespace detail

/// Seeded shuffle; the first floor(train_fraction * n) indices train, the
/// rest test; train is cut into `k` folds whose sizes differ by at most one.
inline SplitSpec split_and_fold(std::size_t n, std::uint64_t seed, std::size_t k = 5, double train_fraction = 0.8) {
    if (n < 10) throw DataError("need at least 10 windows to split, got " + std::to_string(n));
    if (k < 2) throw ConfigError("need at least 2 folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    SplitSpec s;
    s.seed = seed;
    std::vector<std::size_t> train_order(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.train = train_order;
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    s.folds = detail::chunk_folds(train_order, k);
    return s;
}

inline SplitSpec split_and_fold(const WindowedDataset& ds, std::uint64_t seed, std::size_t k = 5) {
    return split_and_fold(ds.size(), seed, k);
}

/// Like split_and_fold, but whole subjects go to either train or test.
inline SplitSpec split_by_subject(const WindowedDataset& ds, std::uint64_t seed, std::size_t k = 5,
                                  double train_fraction = 0.8) {
    if (ds.size() < 10) throw DataError("need at least 10 windows to split, got " + std::to_string(ds.size()));
    std::set<std::string> uniq;
    for (auto& o : ds.origin) uniq.insert(o.subject);
    if (uniq.size() < 2) throw DataError("subject-level split needs at least 2 subjects");
    std::vector<std::string> subjects(uniq.begin(), uniq.end());
    std::mt19937_64 rng(seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(train_fraction * double(subjects.size()))), 1, subjects.size() - 1);
    std::set<std::string> train_subjects(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_train));
    SplitSpec s;
    s.seed = seed;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (train_subjects.count(ds.origin[i].subject) ? s.train : s.test).push_back(i);
    auto order = s.train;
    std::shuffle(order.begin(), order.end(), rng);
    s.folds = detail::chunk_folds(order, k);
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Two-task sinusoid corpus. The task-1 class c sets the frequency to c + 1
/// cycles per window; the task-2 class sets a per-axis DC offset. Difficulty
/// scales the phase jitter and the Gaussian noise.
inline WindowedDataset synth_generate(std::size_t n_per_class, std::size_t c1, std::size_t c2, std::size_t length,
                                      std::uint64_t seed, double difficulty) {
    if (n_per_class == 0 || c1 == 0 || c2 == 0 || length == 0) throw ConfigError("synth_generate: sizes must be positive");
    if (difficulty < 0) throw ConfigError("synth_generate: difficulty must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double sigma = 1.5 * difficulty;
    const double jitter = std::numbers::pi * std::min(difficulty, 1.0);

    std::vector<Window> windows;
    windows.reserve(n_per_class * c1 * c2);
    for (std::size_t a = 0; a < c1; ++a)
        for (std::size_t b = 0; b < c2; ++b)
            for (std::size_t r = 0; r < n_per_class; ++r) {
                Window w;
                w.length = length;
                w.values.resize(3 * length);
                w.y1 = static_cast<int>(a);
                w.y2 = static_cast<int>(b);
                w.origin = {"synth", "synth", windows.size()};
                for (std::size_t axis = 0; axis < 3; ++axis) {
                    const double offset = 0.6 * std::cos(two_pi * double(b) / double(c2) + two_pi * double(axis) / 3.0);
                    const double phase = two_pi * double(axis) / 3.0 + jitter * unit(rng);
                    for (std::size_t t = 0; t < length; ++t) {
                        double v = offset + std::sin(two_pi * double(a + 1) * double(t) / double(length) + phase);
                        if (sigma > 0) v += sigma * noise(rng);
                        w.values[axis * length + t] = static_cast<float>(v);
                    }
                }
                windows.push_back(std::move(w));
            }
    std::vector<std::string> n1, n2;
    for (std::size_t a = 0; a < c1; ++a) n1.push_back("freq" + std::to_string(a + 1));
    for (std::size_t b = 0; b < c2; ++b) n2.push_back("offset" + std::to_string(b));
    return assemble(windows, std::move(n1), std::move(n2));
}

// ---------------------------------------------------------------------------
// Window cache

namespace io {

inline constexpr char window_magic[8] = {'S', 'D', 'W', 'I', 'N', 'D', 'O', 'W'};
inline constexpr std::uint32_t window_version = 1;

template <class U>
void put(std::ostream& os, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get(std::istream& is) {
    unsigned char b[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw IoError("unexpected end of file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    auto n = get<std::uint32_t>(is);
    if (n > (1u << 24)) throw IoError("string length " + std::to_string(n) + " is implausible");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw IoError("unexpected end of file");
    return s;
}

inline void put_names(std::ostream& os, const std::vector<std::string>& names) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(names.size()));
    for (auto& n : names) put_string(os, n);
}

inline std::vector<std::string> get_names(std::istream& is) {
    auto n = get<std::uint32_t>(is);
    std::vector<std::string> out;
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(get_string(is));
    return out;
}

}  // namespace io

inline void save_windows(const std::filesystem::path& path, const WindowedDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(io::window_magic, sizeof io::window_magic);
    io::put<std::uint32_t>(os, io::window_version);
    io::put<std::uint64_t>(os, ds.size());
    io::put<std::uint64_t>(os, ds.length);
    io::put_names(os, ds.task1_names);
    io::put_names(os, ds.task2_names);
    for (float v : ds.values) io::put<float>(os, v);
    for (int v : ds.y1) io::put<std::int32_t>(os, v);
    for (int v : ds.y2) io::put<std::int32_t>(os, v);
    for (auto& o : ds.origin) {
        io::put_string(os, o.subject);
        io::put_string(os, o.source);
        io::put<std::uint64_t>(os, o.start);
    }
    if (!os) throw IoError("write failed for " + path.string());
}

inline WindowedDataset load_windows(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, io::window_magic, 8) != 0) {
        throw IoError(path.string() + " is not a window cache");
    }
    auto version = io::get<std::uint32_t>(is);
    if (version != io::window_version) throw IoError("unsupported window cache version " + std::to_string(version));
    WindowedDataset ds;
    auto n = io::get<std::uint64_t>(is);
    ds.length = io::get<std::uint64_t>(is);
    ds.task1_names = io::get_names(is);
    ds.task2_names = io::get_names(is);
    ds.values.resize(n * 3 * ds.length);
    for (auto& v : ds.values) v = io::get<float>(is);
    ds.y1.resize(n);
    ds.y2.resize(n);
    for (auto& v : ds.y1) v = io::get<std::int32_t>(is);
    for (auto& v : ds.y2) v = io::get<std::int32_t>(is);
    ds.origin.resize(n);
    for (auto& o : ds.origin) {
        o.subject = io::get_string(is);
        o.source = io::get_string(is);
        o.start = io::get<std::uint64_t>(is);
    }
    ds.validate();
    return ds;
}

}  // namespace sdistill
