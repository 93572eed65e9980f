#pragma once

// Experiment configuration and orchestration: method comparisons over seeds
// and folds, lambda and train-ratio sweeps, and report emission.
//
// Config files are INI text; comments take whole lines starting with ';'.
// Every key is optional and the values below are the defaults:
//
//   [dataset]
//   kind = synth
//   path =
//   window_length = 100
//   step = 60
//   per_class = 40
//   classes_task1 = 4
//   classes_task2 = 3
//   difficulty = 0.0
//   synth_seed = 7
//   standardize = false
//   subject_split = false
//
//   [model]
//   blocks = 32:5:2,64:5:2,128:5:2
//   stem_channels = 0
//   hidden_width = 256
//   dropout = 0.3
//
//   [train]
//   learning_rate = 0.001
//   batch_size = 64
//   epochs = 300
//   alpha = 0.5
//   lambda = 0.5
//   tau = 3.0
//   beta = 0.999
//   view_dropout = 0.5
//
//   [experiment]
//   methods = singletask,multitask,sd_dropout,born_again,smooth_distill
//   seeds = 0,1,2,3,4
//   cv = true
//   folds = 5
//   train_ratio = 0.9
//   split_seed = 0
//   output_dir = runs
//   lambdas = 0.001,0.1,0.5,1.0
//   ratios = 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "datasets.hpp"
#include "trainers.hpp"

namespace sdistill {

struct DatasetSpec {
    std::string kind = "synth";
    std::string path;
    std::size_t window_length = 100;
    std::size_t step = 60;
    std::size_t per_class = 40;
    std::size_t classes_task1 = 4;
    std::size_t classes_task2 = 3;
    double difficulty = 0.0;
    std::uint64_t synth_seed = 7;
    bool standardize = false;
    bool subject_split = false;
};

inline const std::vector<std::string>& method_labels() {
    static const std::vector<std::string> l = {"singletask", "multitask", "sd_dropout", "born_again",
                                               "smooth_distill"};
    return l;
}

/// Training methods behind a table label; "singletask" runs one model per task.
inline std::vector<Method> methods_for_label(const std::string& label) {
    if (label == "singletask") return {Method::singletask1, Method::singletask2};
    return {parse_method(label)};
}

inline std::string label_for(Method m) { return is_single_task(m) ? "singletask" : method_name(m); }

struct ExperimentConfig {
    DatasetSpec dataset;
    MTLNetConfig model;
    TrainConfig train;
    std::vector<std::string> methods = method_labels();
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    bool cv = true;
    std::size_t folds = 5;
    double train_ratio = 0.9;
    std::uint64_t split_seed = 0;
    std::string output_dir = "runs";
    std::vector<double> lambdas = {0.001, 0.1, 0.5, 1.0};
    std::vector<double> ratios = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

    void validate() const {
        if (seeds.empty()) throw ConfigError("seed list is empty");
        if (methods.empty()) throw ConfigError("method list is empty");
        for (auto& m : methods) methods_for_label(m);
        if (cv && folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
        check_ratio(train_ratio);
        for (double r : ratios) check_ratio(r);
        train.validate();
    }

    /// Validation keeps a fixed tenth of the training pool, so the training
    /// share can reach at most 0.9.
    static void check_ratio(double r) {
        if (!(r > 0.0 && r <= 0.9 + 1e-9)) {
            throw ConfigError("train ratio " + fmt::format("{}", r) +
                              " must lie in (0, 0.9]; a tenth of the pool is held for validation");
        }
    }
};

namespace detail {

template <class U>
std::vector<U> parse_list(const std::string& s, const char* key) {
    std::vector<U> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) continue;
        std::istringstream is(tok);
        U v{};
        if constexpr (std::is_same_v<U, std::string>) {
            v = tok;
        } else if (!(is >> v) || !is.eof()) {
            throw ConfigError(std::string("bad value '") + tok + "' in list '" + key + "'");
        }
        out.push_back(v);
    }
    return out;
}

inline std::vector<ConvBlockSpec> parse_blocks(const std::string& s) {
    std::vector<ConvBlockSpec> out;
    for (auto& b : parse_list<std::string>(s, "blocks")) {
        ConvBlockSpec spec;
        char c1 = 0, c2 = 0;
        std::istringstream is(b);
        if (!(is >> spec.out_channels >> c1 >> spec.kernel_length >> c2 >> spec.pool_length) || c1 != ':' || c2 != ':') {
            throw ConfigError("bad block '" + b + "'; expected out_channels:kernel:pool");
        }
        out.push_back(spec);
    }
    return out;
}

inline std::string join_blocks(const std::vector<ConvBlockSpec>& blocks) {
    std::string out;
    for (auto& b : blocks)
        out += fmt::format("{}{}:{}:{}", out.empty() ? "" : ",", b.out_channels, b.kernel_length, b.pool_length);
    return out;
}

}  // namespace detail

namespace detail {
/// Overwrites `v` when `path` is present; malformed values raise ptree_bad_data.
template <class U>
void read(const boost::property_tree::ptree& tree, const char* path, U& v) {
    if (tree.get_child_optional(path)) v = tree.get<U>(path);
}
}  // namespace detail

/// Reads an INI config over the defaults. Unknown sections or keys are errors.
inline ExperimentConfig load_experiment_config(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ExperimentConfig c;
    static const std::map<std::string, std::set<std::string>> known = {
        {"dataset",
         {"kind", "path", "window_length", "step", "per_class", "classes_task1", "classes_task2", "difficulty",
          "synth_seed", "standardize", "subject_split"}},
        {"model", {"blocks", "stem_channels", "hidden_width", "dropout"}},
        {"train", {"learning_rate", "batch_size", "epochs", "alpha", "lambda", "tau", "beta", "view_dropout"}},
        {"experiment",
         {"methods", "seeds", "cv", "folds", "train_ratio", "split_seed", "output_dir", "lambdas", "ratios"}}};
    for (auto& [section, body] : tree) {
        auto it = known.find(section);
        if (it == known.end()) throw ConfigError("config: unknown section [" + section + "]");
        for (auto& [key, v] : body)
            if (!it->second.count(key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    }
    try {
        auto& d = c.dataset;
        detail::read(tree, "dataset.kind", d.kind);
        detail::read(tree, "dataset.path", d.path);
        detail::read(tree, "dataset.window_length", d.window_length);
        detail::read(tree, "dataset.step", d.step);
        detail::read(tree, "dataset.per_class", d.per_class);
        detail::read(tree, "dataset.classes_task1", d.classes_task1);
        detail::read(tree, "dataset.classes_task2", d.classes_task2);
        detail::read(tree, "dataset.difficulty", d.difficulty);
        detail::read(tree, "dataset.synth_seed", d.synth_seed);
        detail::read(tree, "dataset.standardize", d.standardize);
        detail::read(tree, "dataset.subject_split", d.subject_split);

        if (auto b = tree.get_optional<std::string>("model.blocks")) c.model.blocks = detail::parse_blocks(*b);
        detail::read(tree, "model.stem_channels", c.model.stem_channels);
        detail::read(tree, "model.hidden_width", c.model.hidden_width);
        detail::read(tree, "model.dropout", c.model.dropout);

        auto& t = c.train;
        detail::read(tree, "train.learning_rate", t.learning_rate);
        detail::read(tree, "train.batch_size", t.batch_size);
        detail::read(tree, "train.epochs", t.epochs);
        detail::read(tree, "train.alpha", t.distill.alpha);
        detail::read(tree, "train.lambda", t.distill.lambda);
        detail::read(tree, "train.tau", t.distill.tau);
        detail::read(tree, "train.beta", t.distill.beta);
        detail::read(tree, "train.view_dropout", t.view_dropout);

        if (auto m = tree.get_optional<std::string>("experiment.methods"))
            c.methods = detail::parse_list<std::string>(*m, "methods");
        if (auto s = tree.get_optional<std::string>("experiment.seeds"))
            c.seeds = detail::parse_list<std::uint64_t>(*s, "seeds");
        detail::read(tree, "experiment.cv", c.cv);
        detail::read(tree, "experiment.folds", c.folds);
        detail::read(tree, "experiment.train_ratio", c.train_ratio);
        detail::read(tree, "experiment.split_seed", c.split_seed);
        detail::read(tree, "experiment.output_dir", c.output_dir);
        if (auto l = tree.get_optional<std::string>("experiment.lambdas"))
            c.lambdas = detail::parse_list<double>(*l, "lambdas");
        if (auto r = tree.get_optional<std::string>("experiment.ratios"))
            c.ratios = detail::parse_list<double>(*r, "ratios");
    } catch (const boost::property_tree::ptree_bad_data& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return load_experiment_config(in);
}

/// The effective configuration as INI text.
inline std::string dump_experiment_config(const ExperimentConfig& c) {
    auto list = [](const auto& v) {
        std::string s;
        for (auto& x : v) s += fmt::format("{}{}", s.empty() ? "" : ",", x);
        return s;
    };
    const auto& d = c.dataset;
    const auto& t = c.train;
    return fmt::format(
        "[dataset]\nkind = {}\npath = {}\nwindow_length = {}\nstep = {}\nper_class = {}\nclasses_task1 = {}\n"
        "classes_task2 = {}\ndifficulty = {}\nsynth_seed = {}\nstandardize = {}\nsubject_split = {}\n\n"
        "[model]\nblocks = {}\nstem_channels = {}\nhidden_width = {}\ndropout = {}\n\n"
        "[train]\nlearning_rate = {}\nbatch_size = {}\nepochs = {}\nalpha = {}\nlambda = {}\ntau = {}\nbeta = {}\n"
        "view_dropout = {}\n\n"
        "[experiment]\nmethods = {}\nseeds = {}\ncv = {}\nfolds = {}\ntrain_ratio = {}\nsplit_seed = {}\n"
        "output_dir = {}\nlambdas = {}\nratios = {}\n",
        d.kind, d.path, d.window_length, d.step, d.per_class, d.classes_task1, d.classes_task2, d.difficulty,
        d.synth_seed, d.standardize, d.subject_split, detail::join_blocks(c.model.blocks), c.model.stem_channels,
        c.model.hidden_width, c.model.dropout, t.learning_rate, t.batch_size, t.epochs, t.distill.alpha,
        t.distill.lambda, t.distill.tau, t.distill.beta, t.view_dropout, list(c.methods), list(c.seeds), c.cv,
        c.folds, c.train_ratio, c.split_seed, c.output_dir, list(c.lambdas), list(c.ratios));
}

// ---------------------------------------------------------------------------
// Data

inline WindowedDataset load_dataset(const DatasetSpec& d) {
    if (d.kind == "synth") {
        return synth_generate(d.per_class, d.classes_task1, d.classes_task2, d.window_length, d.synth_seed,
                              d.difficulty);
    }
    if (d.kind == "cache") return load_windows(d.path);
    return load_canonical_dir(d.path, schema_for(d.kind), d.window_length, d.step);
}

/// Model config sized for `ds`.
inline MTLNetConfig model_for(const MTLNetConfig& base, const WindowedDataset& ds) {
    MTLNetConfig m = base;
    m.window_length = ds.length;
    m.axes = 3;
    m.num_classes_task1 = ds.num_classes_task1();
    m.num_classes_task2 = std::max<std::size_t>(2, ds.num_classes_task2());
    return m;
}

inline SplitSpec make_split(const ExperimentConfig& c, const WindowedDataset& ds) {
    const std::size_t k = c.cv ? c.folds : 5;
    return c.dataset.subject_split ? split_by_subject(ds, c.split_seed, k) : split_and_fold(ds, c.split_seed, k);
}

/// Fixed-validation split of the training pool: a tenth of the pool
/// validates, and the first `ratio` share of the remainder trains. Training
/// sets of increasing ratios are nested.
inline DataSplits ratio_splits(const WindowedDataset& ds, const SplitSpec& s, double ratio, std::size_t batch_size) {
    ExperimentConfig::check_ratio(ratio);
    std::vector<std::size_t> pool = s.train;
    std::mt19937_64 rng(s.seed ^ 0x5eed5eedULL);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * double(pool.size()))));
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * double(pool.size()) + 1e-9));
    if (n_train < batch_size) {
        throw DataError(fmt::format("train ratio {} gives {} training windows, fewer than one batch of {}", ratio,
                                    n_train, batch_size));
    }
    DataSplits d;
    d.data = &ds;
    d.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    d.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val),
                   pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), n_val + n_train)));
    d.test = s.test;
    std::sort(d.val.begin(), d.val.end());
    std::sort(d.train.begin(), d.train.end());
    return d;
}

// ---------------------------------------------------------------------------
// Comparison

struct RunRecord {
    std::string label;
    RunResult result;
    std::string error;  // empty when the run completed
    bool ok() const { return error.empty(); }
};

struct Archive {
    std::vector<RunRecord> runs;
    std::vector<std::string> labels;  // table row order
    std::vector<std::string> task1_names, task2_names;
};

struct CellStats {
    std::size_t n = 0;
    std::optional<double> mean, stddev;
};

/// Mean and spread of one metric for a (method, task, split) group.
struct TableRow {
    std::string label;
    std::size_t runs = 0;
    std::size_t failed = 0;
    // keyed by "task1/val" etc., then "acc" / "f1"
    std::map<std::string, std::map<std::string, CellStats>> cells;
};

struct ComparisonTable {
    std::vector<TableRow> rows;
};

inline const std::vector<std::pair<int, std::string>>& table_groups() {
    static const std::vector<std::pair<int, std::string>> g = {{1, "val"}, {1, "test"}, {2, "val"}, {2, "test"}};
    return g;
}

inline std::vector<double> metric_values(const std::vector<const RunRecord*>& runs, int task, const std::string& split,
                                         const std::string& metric) {
    std::vector<double> out;
    for (auto* r : runs) {
        if (!r->ok()) continue;
        const auto& m = split == "val" ? r->result.val : r->result.test;
        auto it = m.find(task);
        if (it == m.end()) continue;
        if (metric == "acc") out.push_back(it->second.accuracy);
        else if (it->second.macro_f1) out.push_back(*it->second.macro_f1);
    }
    return out;
}

inline ComparisonTable build_table(const Archive& a) {
    ComparisonTable t;
    for (auto& label : a.labels) {
        TableRow row;
        row.label = label;
        std::vector<const RunRecord*> mine;
        for (auto& r : a.runs)
            if (r.label == label) mine.push_back(&r), r.ok() ? ++row.runs : ++row.failed;
        for (auto& [task, split] : table_groups()) {
            auto key = fmt::format("task{}/{}", task, split);
            for (std::string metric : {"acc", "f1"}) {
                auto v = metric_values(mine, task, split, metric);
                CellStats c;
                c.n = v.size();
                if (!v.empty()) c.mean = mean_of(v);
                c.stddev = stddev_of(v);
                row.cells[key][metric] = c;
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::string table_csv(const ComparisonTable& t) {
    std::string out = "method,runs,failed";
    for (auto& [task, split] : table_groups())
        for (std::string metric : {"acc", "f1"})
            out += fmt::format(",task{0}/{1}/{2}_mean,task{0}/{1}/{2}_std", task, split, metric);
    out += '\n';
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string("NA"); };
    for (auto& r : t.rows) {
        out += fmt::format("{},{},{}", r.label, r.runs, r.failed);
        for (auto& [task, split] : table_groups())
            for (std::string metric : {"acc", "f1"}) {
                auto& c = r.cells.at(fmt::format("task{}/{}", task, split)).at(metric);
                out += "," + cell(c.mean) + "," + cell(c.stddev);
            }
        out += '\n';
    }
    return out;
}

/// Human-readable percentages for terminals.
inline std::string table_text(const ComparisonTable& t) {
    std::string out = fmt::format("{:<16}", "method");
    for (auto& [task, split] : table_groups()) out += fmt::format("{:>22}", fmt::format("task{} {} acc", task, split));
    out += '\n';
    for (auto& r : t.rows) {
        out += fmt::format("{:<16}", r.label);
        for (auto& [task, split] : table_groups()) {
            auto& c = r.cells.at(fmt::format("task{}/{}", task, split)).at("acc");
            std::string s = c.mean ? fmt::format("{:.2f}", 100 * *c.mean) : "-";
            if (c.stddev) s += fmt::format(" +- {:.2f}", 100 * *c.stddev);
            out += fmt::format("{:>22}", s);
        }
        out += '\n';
    }
    return out;
}

/// p-values of paired t-tests on validation accuracy, pairing runs by
/// (seed, fold). The matrix is symmetric with a unit diagonal.
struct SignificanceTable {
    int task = 1;
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> p;
};

inline SignificanceTable significance(const Archive& a, int task) {
    SignificanceTable s;
    s.task = task;
    std::map<std::string, std::map<std::pair<std::uint64_t, int>, double>> acc;
    for (auto& r : a.runs) {
        if (!r.ok()) continue;
        auto it = r.result.val.find(task);
        if (it == r.result.val.end()) continue;
        acc[r.label][{r.result.seed, r.result.fold}] = it->second.accuracy;
    }
    for (auto& l : a.labels)
        if (acc.count(l)) s.labels.push_back(l);
    const auto n = s.labels.size();
    s.p.assign(n, std::vector<std::optional<double>>(n));
    for (std::size_t i = 0; i < n; ++i) {
        s.p[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            std::vector<double> x, y;
            for (auto& [key, v] : acc[s.labels[i]]) {
                auto other = acc[s.labels[j]].find(key);
                if (other == acc[s.labels[j]].end()) continue;
                x.push_back(v);
                y.push_back(other->second);
            }
            if (x.size() < 2) continue;
            s.p[i][j] = s.p[j][i] = paired_t_test(x, y).p;
        }
    }
    return s;
}

inline std::string significance_csv(const SignificanceTable& s) {
    std::string out = "method";
    for (auto& l : s.labels) out += "," + l;
    out += '\n';
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
        out += s.labels[i];
        for (auto& v : s.p[i]) out += v ? fmt::format(",{}", *v) : std::string(",NA");
        out += '\n';
    }
    return out;
}

/// Receives a one-line note after every run.
using RunLog = std::function<void(const RunRecord&)>;

namespace detail {

inline RunRecord run_one(const std::string& label, Method m, const MTLNetConfig& mc, const DataSplits& d,
                         TrainConfig tc, std::uint64_t seed, int fold) {
    RunRecord rec;
    rec.label = label;
    tc.method = m;
    tc.seed = seed;
    try {
        rec.result = run_method<float>(mc, d, tc);
    } catch (const std::exception& e) {
        rec.error = e.what();
        rec.result.method = m;
        rec.result.seed = seed;
    }
    rec.result.fold = fold;
    return rec;
}

inline void check_tasks(const ExperimentConfig& c, const WindowedDataset& ds) {
    if (ds.num_classes_task2() >= 2) return;
    for (auto& l : c.methods)
        for (auto m : methods_for_label(l))
            if (m != Method::singletask1) {
                throw ConfigError("dataset has no placement task; only singletask1 can run (method '" + l + "')");
            }
}

}  // namespace detail

/// Every method x seed (x fold when cv) on one shared split.
inline Archive run_comparison(const ExperimentConfig& c, const WindowedDataset& raw, const RunLog& log = {}) {
    c.validate();
    detail::check_tasks(c, raw);
    Archive a;
    a.labels = c.methods;
    a.task1_names = raw.task1_names;
    a.task2_names = raw.task2_names;
    const auto split = make_split(c, raw);
    WindowedDataset ds = raw;
    if (c.dataset.standardize) standardize(ds, fit_channel_stats(raw, split.train));
    const auto mc = model_for(c.model, ds);
    for (auto& label : c.methods)
        for (auto seed : c.seeds) {
            auto emit = [&](RunRecord r) {
                if (log) log(r);
                a.runs.push_back(std::move(r));
            };
            if (c.cv) {
                for (std::size_t k = 0; k < split.folds.size(); ++k) {
                    auto fv = fold_view(split, k);
                    DataSplits d{&ds, fv.train, fv.val, split.test};
                    for (auto m : methods_for_label(label))
                        emit(detail::run_one(label, m, mc, d, c.train, seed, static_cast<int>(k)));
                }
            } else {
                auto d = ratio_splits(ds, split, c.train_ratio, c.train.batch_size);
                for (auto m : methods_for_label(label)) emit(detail::run_one(label, m, mc, d, c.train, seed, -1));
            }
        }
    return a;
}

inline Archive run_comparison(const ExperimentConfig& c, const RunLog& log = {}) {
    return run_comparison(c, load_dataset(c.dataset), log);
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
    double x = 0;  // lambda or train ratio
    std::string label;
    std::size_t runs = 0;
    CellStats acc1, acc2;
};

struct SweepResult {
    std::string parameter;
    std::vector<SweepRow> rows;
    std::vector<Archive> archives;  // one per swept value
};

namespace detail {
inline CellStats stats_of(const std::vector<double>& v) {
    CellStats c;
    c.n = v.size();
    if (!v.empty()) c.mean = mean_of(v);
    c.stddev = stddev_of(v);
    return c;
}

inline void add_rows(SweepResult& out, double x, const Archive& a) {
    for (auto& label : a.labels) {
        std::vector<const RunRecord*> mine;
        for (auto& r : a.runs)
            if (r.label == label) mine.push_back(&r);
        SweepRow row;
        row.x = x;
        row.label = label;
        for (auto* r : mine) row.runs += r->ok();
        row.acc1 = stats_of(metric_values(mine, 1, "test", "acc"));
        row.acc2 = stats_of(metric_values(mine, 2, "test", "acc"));
        out.rows.push_back(row);
    }
}
}  // namespace detail

/// Smooth-Distill comparison once per lambda value.
inline SweepResult sweep_lambda(ExperimentConfig c, const WindowedDataset& ds, const RunLog& log = {}) {
    if (c.lambdas.empty()) throw ConfigError("lambda list is empty");
    c.methods = {"smooth_distill"};
    SweepResult out;
    out.parameter = "lambda";
    for (double l : c.lambdas) {
        c.train.distill.lambda = l;
        out.archives.push_back(run_comparison(c, ds, log));
        detail::add_rows(out, l, out.archives.back());
    }
    return out;
}

/// One comparison per training share on a fixed train/validation/test split.
inline SweepResult sweep_train_ratio(ExperimentConfig c, const WindowedDataset& ds, const RunLog& log = {}) {
    if (c.cv) throw ConfigError("the train-ratio sweep needs cv = false");
    if (c.ratios.empty()) throw ConfigError("ratio list is empty");
    for (double r : c.ratios) ExperimentConfig::check_ratio(r);
    SweepResult out;
    out.parameter = "train_ratio";
    for (double r : c.ratios) {
        c.train_ratio = r;
        out.archives.push_back(run_comparison(c, ds, log));
        detail::add_rows(out, r, out.archives.back());
    }
    return out;
}

inline std::string sweep_csv(const SweepResult& s) {
    auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string("NA"); };
    std::string out = s.parameter + ",method,runs,test_acc1_mean,test_acc1_std,test_acc2_mean,test_acc2_std\n";
    for (auto& r : s.rows) {
        out += fmt::format("{},{},{},{},{},{},{}\n", r.x, r.label, r.runs, cell(r.acc1.mean), cell(r.acc1.stddev),
                           cell(r.acc2.mean), cell(r.acc2.stddev));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run files

inline nlohmann::ordered_json to_json(const EpochRecord& e) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
    return {{"epoch", e.epoch},       {"train_loss", num(e.train_loss)}, {"train_acc1", num(e.train_acc1)},
            {"train_acc2", num(e.train_acc2)}, {"val_loss", num(e.val_loss)}, {"val_acc1", num(e.val_acc1)},
            {"val_acc2", num(e.val_acc2)},     {"seconds", e.seconds}};
}

inline EpochRecord epoch_from_json(const nlohmann::json& j) {
    auto num = [&](const char* k) {
        return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
    };
    EpochRecord e;
    e.epoch = j.at("epoch").get<std::size_t>();
    e.train_loss = num("train_loss");
    e.train_acc1 = num("train_acc1");
    e.train_acc2 = num("train_acc2");
    e.val_loss = num("val_loss");
    e.val_acc1 = num("val_acc1");
    e.val_acc2 = num("val_acc2");
    e.seconds = j.at("seconds").get<double>();
    return e;
}

inline nlohmann::ordered_json to_json(const RunRecord& r) {
    nlohmann::ordered_json j;
    const auto& x = r.result;
    j["label"] = r.label;
    j["method"] = method_name(x.method);
    j["seed"] = x.seed;
    j["fold"] = x.fold;
    j["error"] = r.error;
    j["tasks"] = x.tasks;
    j["best_epoch"] = x.best_epoch;
    j["best_checkpoint"] = x.best_checkpoint;
    j["seconds"] = x.seconds;
    j["stage1_seconds"] = x.stage1_seconds;
    for (auto [name, m] : {std::pair{"val", &x.val}, std::pair{"test", &x.test}}) {
        auto& dst = j[name] = nlohmann::ordered_json::object();
        for (auto& [task, e] : *m) {
            auto rep = report(e.cm);
            dst[fmt::format("task{}", task)] = {{"loss", e.loss},
                                                {"accuracy", e.accuracy},
                                                {"macro_f1", e.macro_f1 ? nlohmann::ordered_json(*e.macro_f1) : nlohmann::ordered_json(nullptr)},
                                                {"confusion", confusion_json(e.cm)},
                                                {"report", report_json(rep)}};
        }
    }
    auto& ep = j["epochs"] = nlohmann::ordered_json::array();
    for (auto& e : x.epochs) ep.push_back(to_json(e));
    auto& s1 = j["stage1_epochs"] = nlohmann::ordered_json::array();
    for (auto& e : x.stage1_epochs) s1.push_back(to_json(e));
    return j;
}

inline RunRecord run_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.label = j.at("label").get<std::string>();
    r.error = j.at("error").get<std::string>();
    auto& x = r.result;
    x.method = parse_method(j.at("method").get<std::string>());
    x.seed = j.at("seed").get<std::uint64_t>();
    x.fold = j.at("fold").get<int>();
    x.tasks = j.at("tasks").get<std::vector<int>>();
    x.best_epoch = j.at("best_epoch").get<std::size_t>();
    x.best_checkpoint = j.at("best_checkpoint").get<std::string>();
    x.seconds = j.at("seconds").get<double>();
    x.stage1_seconds = j.at("stage1_seconds").get<double>();
    for (auto [name, m] : {std::pair{"val", &x.val}, std::pair{"test", &x.test}}) {
        for (auto& [key, v] : j.at(name).items()) {
            TaskEval e;
            e.loss = v.at("loss").get<double>();
            e.accuracy = v.at("accuracy").get<double>();
            if (!v.at("macro_f1").is_null()) e.macro_f1 = v.at("macro_f1").get<double>();
            e.cm = confusion_from_json(v.at("confusion"));
            (*m)[std::stoi(key.substr(4))] = std::move(e);
        }
    }
    for (auto& e : j.at("epochs")) x.epochs.push_back(epoch_from_json(e));
    for (auto& e : j.at("stage1_epochs")) x.stage1_epochs.push_back(epoch_from_json(e));
    return r;
}

inline std::string run_stem(const RunRecord& r) {
    std::string s = fmt::format("{}_seed{}", method_name(r.result.method), r.result.seed);
    if (r.result.fold >= 0) s += fmt::format("_fold{}", r.result.fold);
    return s;
}

inline std::string curve_csv(const RunResult& r) {
    std::string out = progress_header() + '\n';
    for (auto& e : r.epochs) out += progress_line(e) + '\n';
    return out;
}

/// Writes the comparison table, significance tables, and per-run JSON, curve
/// and confusion files under `dir`.
inline void emit_reports(const Archive& a, const std::filesystem::path& dir) {
    if (a.runs.empty()) throw DataError("nothing to report: the run archive is empty");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "runs", ec);
    fs::create_directories(dir / "curves", ec);
    fs::create_directories(dir / "confusion", ec);
    if (ec) throw IoError("cannot create output directories under " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json index;
    index["labels"] = a.labels;
    index["task1_names"] = a.task1_names;
    index["task2_names"] = a.task2_names;
    auto& files = index["runs"] = nlohmann::ordered_json::array();
    for (auto& r : a.runs) {
        auto stem = run_stem(r);
        files.push_back("runs/" + stem + ".json");
        write_text(dir / "runs" / (stem + ".json"), to_json(r).dump(2) + "\n");
        if (!r.ok()) continue;
        write_text(dir / "curves" / (stem + ".csv"), curve_csv(r.result));
        for (auto [name, m] : {std::pair{"val", &r.result.val}, std::pair{"test", &r.result.test}})
            for (auto& [task, e] : *m)
                write_text(dir / "confusion" / fmt::format("{}_task{}_{}.csv", stem, task, name), confusion_csv(e.cm));
    }
    write_text(dir / "archive.json", index.dump(2) + "\n");
    write_text(dir / "comparison.csv", table_csv(build_table(a)));
    for (int task : {1, 2}) {
        auto s = significance(a, task);
        if (!s.labels.empty()) write_text(dir / fmt::format("significance_task{}.csv", task), significance_csv(s));
    }
}

/// Reads back an archive written by emit_reports.
inline Archive load_archive(const std::filesystem::path& dir) {
    std::ifstream in(dir / "archive.json");
    if (!in) throw IoError("no archive.json under " + dir.string());
    auto index = nlohmann::json::parse(in);
    Archive a;
    a.labels = index.at("labels").get<std::vector<std::string>>();
    a.task1_names = index.at("task1_names").get<std::vector<std::string>>();
    a.task2_names = index.at("task2_names").get<std::vector<std::string>>();
    for (auto& f : index.at("runs")) {
        std::ifstream rf(dir / f.get<std::string>());
        if (!rf) throw IoError("missing run file " + (dir / f.get<std::string>()).string());
        a.runs.push_back(run_from_json(nlohmann::json::parse(rf)));
    }
    return a;
}

}  // namespace sdistill
