// sdistill: prepare datasets, train single runs, run method comparisons and
// sweeps, and re-emit reports.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <sdistill/sdistill.hpp>

namespace fs = std::filesystem;
using namespace sdistill;

namespace {

struct Overrides {
    std::string config;
    std::string out;
    std::string stamp;
    std::string kind, data;
    std::string methods;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, batch;
    std::optional<double> lambda, alpha, beta, tau, lr, ratio;
    std::optional<bool> cv;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", config, "INI experiment config")->check(CLI::ExistingFile);
        app->add_option("-o,--out", out, "output root (default: experiment.output_dir)");
        app->add_option("--stamp", stamp, "run directory name (default: local time)");
        app->add_option("--kind", kind, "dataset kind: synth, mhealth, wisdm, wisdm-phone, sleep, cache");
        app->add_option("--data", data, "dataset path; relative paths resolve under $SDISTILL_DATA_ROOT");
        app->add_option("--methods", methods, "comma-separated method list");
        app->add_option("--seed", seed, "run a single seed");
        app->add_option("--epochs", epochs);
        app->add_option("--batch-size", batch);
        app->add_option("--lambda", lambda);
        app->add_option("--alpha", alpha);
        app->add_option("--beta", beta);
        app->add_option("--tau", tau);
        app->add_option("--lr", lr);
        app->add_option("--train-ratio", ratio);
        app->add_option("--cv", cv, "cross-validate (true/false)");
    }

    ExperimentConfig resolve() const {
        ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_experiment_config(fs::path(config));
        if (!kind.empty()) c.dataset.kind = kind;
        if (!data.empty()) c.dataset.path = data;
        if (!methods.empty()) c.methods = detail::parse_list<std::string>(methods, "methods");
        if (seed) c.seeds = {*seed};
        if (epochs) c.train.epochs = *epochs;
        if (batch) c.train.batch_size = *batch;
        if (lambda) c.train.distill.lambda = *lambda;
        if (alpha) c.train.distill.alpha = *alpha;
        if (beta) c.train.distill.beta = *beta;
        if (tau) c.train.distill.tau = *tau;
        if (lr) c.train.learning_rate = *lr;
        if (ratio) c.train_ratio = *ratio;
        if (cv) c.cv = *cv;
        if (!out.empty()) c.output_dir = out;
        if (const char* root = std::getenv("SDISTILL_DATA_ROOT"); root && !c.dataset.path.empty() &&
                                                                 fs::path(c.dataset.path).is_relative()) {
            c.dataset.path = (fs::path(root) / c.dataset.path).string();
        }
        c.validate();
        return c;
    }

    fs::path run_dir(const ExperimentConfig& c, const std::string& command) const {
        std::string s = stamp;
        if (s.empty()) {
            auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
            std::tm tm{};
            localtime_r(&now, &tm);
            char buf[32];
            std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
            s = buf;
        }
        fs::path dir = fs::path(c.output_dir) / (command + "-" + s);
        fs::create_directories(dir);
        write_text(dir / "config.ini", dump_experiment_config(c));
        return dir;
    }
};

void log_run(const RunRecord& r) {
    if (r.ok()) {
        std::string acc;
        for (auto& [t, e] : r.result.test) acc += fmt::format(" test_acc{}={:.4f}", t, e.accuracy);
        std::cerr << fmt::format("[done] {} seed={} fold={} best_epoch={} {:.1f}s{}\n", method_name(r.result.method),
                                 r.result.seed, r.result.fold, r.result.best_epoch, r.result.seconds, acc);
    } else {
        std::cerr << fmt::format("[failed] {} seed={} fold={}: {}\n", method_name(r.result.method), r.result.seed,
                                 r.result.fold, r.error);
    }
}

bool all_ok(const Archive& a) {
    return std::all_of(a.runs.begin(), a.runs.end(), [](auto& r) { return r.ok(); });
}

int cmd_prepare(const std::string& kind, std::string root, const std::string& out, std::size_t length,
                std::size_t step) {
    if (root.empty()) {
        const char* env = std::getenv("SDISTILL_DATA_ROOT");
        if (!env) throw ConfigError("no --root given and SDISTILL_DATA_ROOT is unset");
        root = env;
    }
    fs::path canonical = fs::path(out) / "canonical";
    auto adapted = adapt_public_dataset(kind, root, canonical);
    auto ds = load_canonical_dir(canonical, schema_for(kind), length, step);
    fs::path cache = fs::path(out) / "windows.bin";
    save_windows(cache, ds);
    std::cout << fmt::format("{} canonical files, {} windows of length {} -> {}\n", adapted.files.size(), ds.size(),
                             ds.length, cache.string());
    return 0;
}

int cmd_train(const Overrides& o, const std::string& method_label, std::size_t fold) {
    auto c = o.resolve();
    auto raw = load_dataset(c.dataset);
    const auto split = make_split(c, raw);
    WindowedDataset ds = raw;
    if (c.dataset.standardize) standardize(ds, fit_channel_stats(raw, split.train));
    DataSplits d;
    if (c.cv) {
        auto fv = fold_view(split, fold);
        d = {&ds, fv.train, fv.val, split.test};
    } else {
        d = ratio_splits(ds, split, c.train_ratio, c.train.batch_size);
    }
    auto mc = model_for(c.model, ds);
    auto dir = o.run_dir(c, "train");
    int status = 0;
    for (auto m : methods_for_label(method_label)) {
        TrainConfig tc = c.train;
        tc.method = m;
        tc.seed = c.seeds.front();
        const std::string stem = fmt::format("{}_seed{}", method_name(m), tc.seed);
        std::ofstream progress(dir / (stem + ".tsv"));
        progress << progress_header() << '\n';
        TrainHooks<float> hooks;
        hooks.progress = &progress;
        hooks.on_epoch = [](const EpochRecord& e) { std::cerr << progress_line(e) << '\n'; };
        std::unique_ptr<Model<float>> model, teacher;
        RunRecord rec;
        rec.label = label_for(m);
        try {
            rec.result = run_method<float>(mc, d, tc, hooks, &model, &teacher);
            rec.result.fold = c.cv ? static_cast<int>(fold) : -1;
            save_checkpoint(dir / (stem + ".ckpt"), *model, "student", to_json(mc));
            if (teacher) save_checkpoint(dir / (stem + "_teacher.ckpt"), *teacher, "teacher", to_json(mc));
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.result.method = m;
            status = 1;
        }
        write_text(dir / (stem + ".json"), to_json(rec).dump(2) + "\n");
        log_run(rec);
    }
    std::cout << dir.string() << '\n';
    return status;
}

int cmd_compare(const Overrides& o) {
    auto c = o.resolve();
    auto ds = load_dataset(c.dataset);
    auto dir = o.run_dir(c, "compare");
    auto a = run_comparison(c, ds, log_run);
    emit_reports(a, dir);
    std::cout << table_text(build_table(a)) << dir.string() << '\n';
    return all_ok(a) ? 0 : 1;
}

int cmd_sweep(const Overrides& o, bool lambda) {
    auto c = o.resolve();
    auto ds = load_dataset(c.dataset);
    auto dir = o.run_dir(c, lambda ? "sweep-lambda" : "sweep-ratio");
    auto s = lambda ? sweep_lambda(c, ds, log_run) : sweep_train_ratio(c, ds, log_run);
    bool ok = true;
    for (std::size_t i = 0; i < s.archives.size(); ++i) {
        double x = lambda ? c.lambdas[i] : c.ratios[i];
        emit_reports(s.archives[i], dir / fmt::format("{}_{}", s.parameter, x));
        ok = ok && all_ok(s.archives[i]);
    }
    write_text(dir / (s.parameter + "_sweep.csv"), sweep_csv(s));
    std::cout << sweep_csv(s) << dir.string() << '\n';
    return ok ? 0 : 1;
}

int cmd_report(const std::string& dir) {
    auto a = load_archive(dir);
    emit_reports(a, dir);
    std::cout << table_text(build_table(a));
    return all_ok(a) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Smoothed self-distillation for multitask activity and placement recognition"};
    app.require_subcommand(1);

    std::string kind, root, out = "prepared";
    std::size_t length = 100, step = 60;
    auto* prepare = app.add_subcommand("prepare", "convert a public dataset to canonical CSV and a window cache");
    prepare->add_option("--kind", kind, "mhealth, wisdm, wisdm-phone or sleep")->required();
    prepare->add_option("--root", root, "raw dataset directory (default: $SDISTILL_DATA_ROOT)");
    prepare->add_option("-o,--out", out, "output directory");
    prepare->add_option("--window-length", length);
    prepare->add_option("--step", step);

    Overrides train_o, compare_o, lambda_o, ratio_o;
    std::string method = "smooth_distill";
    std::size_t fold = 0;
    auto* train = app.add_subcommand("train", "train one method on one seed and save checkpoints");
    train_o.add_to(train);
    train->add_option("-m,--method", method, "method to train");
    train->add_option("--fold", fold, "validation fold when cross-validating");

    auto* compare = app.add_subcommand("compare", "every method x seed x fold, with tables and significance tests");
    compare_o.add_to(compare);
    auto* sweep_l = app.add_subcommand("sweep-lambda", "Smooth-Distill over the lambda list");
    lambda_o.add_to(sweep_l);
    auto* sweep_r = app.add_subcommand("sweep-ratio", "comparison over training-set shares (cv = false)");
    ratio_o.add_to(sweep_r);

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "re-emit tables from a finished run directory");
    rep->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*prepare) return cmd_prepare(kind, root, out, length, step);
        if (*train) return cmd_train(train_o, method, fold);
        if (*compare) return cmd_compare(compare_o);
        if (*sweep_l) return cmd_sweep(lambda_o, true);
        if (*sweep_r) return cmd_sweep(ratio_o, false);
        if (*rep) return cmd_report(report_dir);
    } catch (const sdistill::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
