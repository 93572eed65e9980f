#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace sdistill;
using namespace sdistill::testing;
namespace fs = std::filesystem;

namespace {

const WindowedDataset& tiny() {
    static const WindowedDataset ds = synth_generate(8, 3, 2, 32, 4, 0.3);
    return ds;
}

MTLNetConfig tiny_net() { return small_net(tiny(), 16); }

TrainConfig tiny_train(Method m, std::size_t epochs = 3) {
    auto t = quick_train(epochs, 1);
    t.batch_size = 8;
    t.method = m;
    return t;
}

std::map<std::string, std::vector<float>> named_values(const Model<float>& m) {
    std::map<std::string, std::vector<float>> out;
    for (auto& p : m.parameters()) out[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

void expect_same_curves(const RunResult& a, const RunResult& b) {
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        EXPECT_EQ(a.epochs[i].train_loss, b.epochs[i].train_loss) << "epoch " << i + 1;
        EXPECT_EQ(a.epochs[i].val_loss, b.epochs[i].val_loss) << "epoch " << i + 1;
        EXPECT_EQ(a.epochs[i].train_acc1, b.epochs[i].train_acc1);
        EXPECT_EQ(a.epochs[i].val_acc2, b.epochs[i].val_acc2);
    }
    EXPECT_EQ(a.best_epoch, b.best_epoch);
}

ExperimentConfig tiny_experiment() {
    ExperimentConfig c;
    c.dataset.per_class = 8;
    c.dataset.classes_task1 = 3;
    c.dataset.classes_task2 = 2;
    c.dataset.window_length = 32;
    c.dataset.difficulty = 0.3;
    c.model.blocks = {{8, 5, 2}, {16, 5, 2}};
    c.model.hidden_width = 16;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.train.learning_rate = 3e-3;
    c.seeds = {0, 1};
    c.cv = false;
    c.train_ratio = 0.9;
    return c;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("sdistill_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// batching

TEST(Batches, CoverEveryIndexOnce) {
    for (std::size_t n = 1; n < 60; ++n)
        for (std::size_t b = 2; b < 12; ++b) {
            auto bs = make_batches(n, b);
            std::size_t next = 0;
            for (auto [lo, hi] : bs) {
                EXPECT_EQ(lo, next);
                EXPECT_GT(hi, lo);
                EXPECT_LE(hi - lo, b + 1);
                next = hi;
            }
            EXPECT_EQ(next, n);
            if (bs.size() > 1) {
                for (auto [lo, hi] : bs) EXPECT_GE(hi - lo, 2u);
            }
        }
}

TEST(Batches, TrailingSingletonIsMerged) {
    EXPECT_EQ(make_batches(10, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 8}, {8, 10}}));
    EXPECT_EQ(make_batches(9, 4), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 9}}));
}

// ---------------------------------------------------------------------------
// trainers

TEST(Trainers, MethodNamesRoundTrip) {
    for (auto m : {Method::singletask1, Method::singletask2, Method::multitask, Method::sd_dropout,
                   Method::born_again, Method::smooth_distill})
        EXPECT_EQ(parse_method(method_name(m)), m);
    EXPECT_THROW(parse_method("distill"), ConfigError);
}

TEST(Trainers, MultitaskLossFalls) {
    auto d = first_fold(tiny());
    auto r = run_method<float>(tiny_net(), d, tiny_train(Method::multitask, 12));
    ASSERT_EQ(r.epochs.size(), 12u);
    EXPECT_LT(r.epochs.back().train_loss, 0.7 * r.epochs.front().train_loss);
    EXPECT_GE(r.best_epoch, 1u);
    EXPECT_LE(r.best_epoch, 12u);
    EXPECT_EQ(r.val.size(), 2u);
    EXPECT_EQ(r.test.size(), 2u);
    EXPECT_EQ(r.test.at(1).cm.total(), d.test.size());
}

TEST(Trainers, SameSeedSameRun) {
    auto d = first_fold(tiny());
    for (auto m : {Method::multitask, Method::sd_dropout, Method::smooth_distill, Method::born_again}) {
        std::unique_ptr<Model<float>> a, b;
        auto ra = run_method<float>(tiny_net(), d, tiny_train(m, 2), {}, &a);
        auto rb = run_method<float>(tiny_net(), d, tiny_train(m, 2), {}, &b);
        expect_same_curves(ra, rb);
        EXPECT_EQ(param_values(*a), param_values(*b)) << method_name(m);
    }
}

TEST(Trainers, AlphaOneLeavesSecondHeadAlone) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::multitask, 2);
    cfg.distill.alpha = 1.0;
    auto model = build_model<float>(tiny_net(), Method::multitask, cfg.seed);
    auto before = named_values(*model);
    std::size_t steps = 0;
    TrainHooks<float> h;
    h.on_step = [&](const StepInfo<float>& s) {
        auto now = named_values(s.student);
        EXPECT_EQ(now["head2.weight"], before["head2.weight"]);
        EXPECT_EQ(now["head2.bias"], before["head2.bias"]);
        EXPECT_NE(now["head1.weight"], before["head1.weight"]);
        ++steps;
    };
    train_multitask<float>(*model, d, cfg, h);
    EXPECT_GT(steps, 0u);
}

TEST(Trainers, SingleTaskMatchesAlphaOneMultitask) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::multitask, 2);
    cfg.distill.alpha = 1.0;
    std::vector<std::map<std::string, std::vector<float>>> mt, st;
    TrainHooks<float> hm, hs;
    hm.on_step = [&](const StepInfo<float>& s) { mt.push_back(named_values(s.student)); };
    hs.on_step = [&](const StepInfo<float>& s) { st.push_back(named_values(s.student)); };
    run_method<float>(tiny_net(), d, cfg, hm);
    cfg.method = Method::singletask1;
    run_method<float>(tiny_net(), d, cfg, hs);
    ASSERT_EQ(mt.size(), st.size());
    for (std::size_t i = 0; i < mt.size(); ++i)
        for (auto& [name, v] : st[i]) {
            ASSERT_TRUE(mt[i].count(name)) << name;
            auto& w = mt[i][name];
            for (std::size_t k = 0; k < v.size(); ++k)
                ASSERT_NEAR(v[k], w[k], 1e-6f * (1 + std::abs(w[k]))) << name << " step " << i;
        }
}

TEST(Trainers, SingleTaskReportsOneTask) {
    auto d = first_fold(tiny());
    auto r = run_method<float>(tiny_net(), d, tiny_train(Method::singletask2, 2));
    EXPECT_EQ(r.tasks, (std::vector<int>{2}));
    EXPECT_EQ(r.test.count(1), 0u);
    EXPECT_TRUE(std::isnan(r.epochs[0].val_acc1));
    EXPECT_FALSE(std::isnan(r.epochs[0].val_acc2));
}

TEST(Trainers, SmoothWithZeroLambdaIsMultitask) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::multitask, 3);
    cfg.distill.lambda = 0.0;
    std::unique_ptr<Model<float>> a, b;
    auto ra = run_method<float>(tiny_net(), d, cfg, {}, &a);
    cfg.method = Method::smooth_distill;
    auto rb = run_method<float>(tiny_net(), d, cfg, {}, &b);
    expect_same_curves(ra, rb);
    EXPECT_EQ(param_values(*a), param_values(*b));
}

TEST(Trainers, BornAgainWithZeroLambdaRepeatsStageOne) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::multitask, 3);
    cfg.distill.lambda = 0.0;
    std::unique_ptr<Model<float>> a, b;
    auto ra = run_method<float>(tiny_net(), d, cfg, {}, &a);
    cfg.method = Method::born_again;
    auto rb = run_method<float>(tiny_net(), d, cfg, {}, &b);
    expect_same_curves(ra, rb);
    ASSERT_EQ(rb.stage1_epochs.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rb.stage1_epochs[i].train_loss, ra.epochs[i].train_loss);
    EXPECT_EQ(param_values(*a), param_values(*b));
}

TEST(Trainers, BornAgainTeacherIsFrozenAndFresh) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::born_again, 2);
    std::optional<std::vector<std::vector<float>>> teacher0;
    std::vector<std::vector<float>> student_first;
    std::size_t stage1 = 0, stage2 = 0;
    TrainHooks<float> h;
    h.on_step = [&](const StepInfo<float>& s) {
        if (s.stage == 1) {
            ++stage1;
            EXPECT_EQ(s.teacher, nullptr);
            return;
        }
        ++stage2;
        ASSERT_NE(s.teacher, nullptr);
        EXPECT_FALSE(s.optimizer.tracks(s.teacher->parameters()[0].tensor));
        auto now = param_values(*s.teacher);
        if (!teacher0) teacher0 = now;
        EXPECT_EQ(now, *teacher0);
        for (auto& p : s.teacher->parameters()) EXPECT_FALSE(p.tensor.requires_grad());
    };
    std::unique_ptr<Model<float>> teacher;
    run_method<float>(tiny_net(), d, cfg, h, nullptr, &teacher);
    EXPECT_EQ(stage1, stage2);
    ASSERT_TRUE(teacher);
    EXPECT_EQ(param_values(*teacher), *teacher0);
}

TEST(Trainers, SmoothTeacherFollowsMovingAverage) {
    auto d = first_fold(tiny());
    auto cfg = tiny_train(Method::smooth_distill, 1);
    cfg.distill.beta = 0.9;
    auto model = build_model<float>(tiny_net(), Method::smooth_distill, cfg.seed);
    auto prev = param_values(*model);
    std::size_t steps = 0;
    TrainHooks<float> h;
    h.on_step = [&](const StepInfo<float>& s) {
        ASSERT_NE(s.teacher, nullptr);
        EXPECT_EQ(s.optimizer.num_tracked(), s.student.parameters().size());
        for (auto& p : s.teacher->parameters()) EXPECT_FALSE(s.optimizer.tracks(p.tensor));
        auto t = param_values(*s.teacher);
        auto st = param_values(s.student);
        for (std::size_t i = 0; i < t.size(); ++i)
            for (std::size_t k = 0; k < t[i].size(); ++k)
                ASSERT_NEAR(t[i][k], 0.9 * prev[i][k] + 0.1 * st[i][k], 1e-6);
        prev = t;
        ++steps;
    };
    train_smooth_distill<float>(*model, d, cfg, h);
    EXPECT_GT(steps, 1u);
}

TEST(Trainers, SdDropoutWithoutMaskIsMultitask) {
    std::mt19937_64 g(2);
    auto net = tiny_net();
    auto model = build_model<double>(net, Method::sd_dropout, 3);
    auto x = uniform({6, 1, 3, 32}, g, -1, 1, false);
    auto y1 = labels(6, 3, g), y2 = labels(6, 2, g);
    DistillConfig dc;
    dc.lambda = 0.3;
    dc.alpha = 0.4;
    Rng rng(1);
    const double sd = sd_dropout_loss<double>(*model, x, y1, y2, Dropout<double>(0.0), dc, rng).item();
    auto f = model->forward_features(x, Mode::train);
    const double mt = multitask_ce_loss(model->head(0, f), std::span<const int>(y1), model->head(1, f),
                                        std::span<const int>(y2), 0.4)
                          .item();
    EXPECT_NEAR(sd, mt, 1e-10);
}

TEST(Trainers, SdDropoutWithoutDistillationAveragesViews) {
    std::mt19937_64 g(4);
    auto model = build_model<double>(tiny_net(), Method::sd_dropout, 5);
    auto x = uniform({6, 1, 3, 32}, g, -1, 1, false);
    auto y1 = labels(6, 3, g), y2 = labels(6, 2, g);
    DistillConfig dc;
    dc.lambda = 0.0;
    dc.alpha = 0.25;
    Dropout<double> drop(0.5);
    Rng rng(9), replay(9);
    const double sd = sd_dropout_loss<double>(*model, x, y1, y2, drop, dc, rng).item();
    auto f = model->forward_features(x, Mode::train);
    auto fa = drop.forward(f, Mode::train, &replay);
    auto fb = drop.forward(f, Mode::train, &replay);
    auto ce = [&](const DTensor& v, std::size_t k, const std::vector<int>& y) {
        return cross_entropy(model->head(k, v), std::span<const int>(y)).item();
    };
    const double want = 0.25 * 0.5 * (ce(fa, 0, y1) + ce(fb, 0, y1)) + 0.75 * 0.5 * (ce(fa, 1, y2) + ce(fb, 1, y2));
    EXPECT_NEAR(sd, want, 1e-10);
    EXPECT_FALSE(fa.same_values(fb));
}

TEST(Trainers, ProgressStream) {
    auto d = first_fold(tiny());
    std::ostringstream os;
    std::vector<EpochRecord> seen;
    TrainHooks<float> h;
    h.progress = &os;
    h.on_epoch = [&](const EpochRecord& e) { seen.push_back(e); };
    run_method<float>(tiny_net(), d, tiny_train(Method::multitask, 3), h);
    std::istringstream is(os.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 7);
        EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(n));
    }
    EXPECT_EQ(n, 3u);
    ASSERT_EQ(seen.size(), 3u);
    const auto head = progress_header();
    EXPECT_EQ(std::count(head.begin(), head.end(), '\t'), 7);
}

TEST(Trainers, MismatchedModelRejected) {
    auto d = first_fold(tiny());
    auto single = build_model<float>(tiny_net(), Method::singletask1, 0);
    EXPECT_THROW(train_multitask<float>(*single, d, tiny_train(Method::multitask)), ConfigError);
    auto wrong = tiny_net();
    wrong.num_classes_task1 = 5;
    EXPECT_THROW(run_method<float>(wrong, d, tiny_train(Method::multitask)), ConfigError);
    auto bad = tiny_train(Method::multitask);
    bad.batch_size = 1;
    EXPECT_THROW(run_method<float>(tiny_net(), d, bad), ConfigError);
    DataSplits empty{&tiny(), {}, d.val, d.test};
    EXPECT_THROW(run_method<float>(tiny_net(), empty, tiny_train(Method::multitask)), DataError);
}

// ---------------------------------------------------------------------------
// experiment configuration

TEST(ExperimentConfig, ParsesIni) {
    std::istringstream in(
        "[dataset]\nkind = synth\nper_class = 5\ndifficulty = 0.25\n"
        "[model]\nblocks = 8:3:2,16:5:4\nhidden_width = 24\n"
        "[train]\nepochs = 7\nlambda = 0.1\nbeta = 0.99\n"
        "[experiment]\nmethods = multitask,smooth_distill\nseeds = 3,4\ncv = false\ntrain_ratio = 0.5\n");
    auto c = load_experiment_config(in);
    EXPECT_EQ(c.dataset.per_class, 5u);
    EXPECT_DOUBLE_EQ(c.dataset.difficulty, 0.25);
    ASSERT_EQ(c.model.blocks.size(), 2u);
    EXPECT_EQ(c.model.blocks[1].out_channels, 16u);
    EXPECT_EQ(c.model.blocks[1].kernel_length, 5u);
    EXPECT_EQ(c.model.blocks[1].pool_length, 4u);
    EXPECT_EQ(c.model.hidden_width, 24u);
    EXPECT_EQ(c.train.epochs, 7u);
    EXPECT_DOUBLE_EQ(c.train.distill.lambda, 0.1);
    EXPECT_EQ(c.methods, (std::vector<std::string>{"multitask", "smooth_distill"}));
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
    EXPECT_FALSE(c.cv);

    std::istringstream again(dump_experiment_config(c));
    EXPECT_EQ(dump_experiment_config(load_experiment_config(again)), dump_experiment_config(c));
}

TEST(ExperimentConfig, RejectsBadInput) {
    auto load = [](const std::string& s) {
        std::istringstream in(s);
        return load_experiment_config(in);
    };
    EXPECT_THROW(load("[train]\nepoch = 3\n"), ConfigError);
    EXPECT_THROW(load("[training]\nepochs = 3\n"), ConfigError);
    EXPECT_THROW(load("[train]\nepochs = three\n"), ConfigError);
    EXPECT_THROW(load("[experiment]\ntrain_ratio = 1.0\n"), ConfigError);
    EXPECT_THROW(load("[experiment]\nmethods = multitask,teacher\n"), ConfigError);
    EXPECT_THROW(load("[train]\nbeta = 1.0\n"), ConfigError);
    EXPECT_THROW(load("[model]\nblocks = 8:3\n"), ConfigError);
    EXPECT_THROW(ExperimentConfig::check_ratio(0.0), ConfigError);
    EXPECT_NO_THROW(ExperimentConfig::check_ratio(0.9));
}

TEST(Experiment, RatioSplitsAreNested) {
    auto split = split_and_fold(tiny(), 0);
    std::vector<std::size_t> prev;
    std::optional<std::vector<std::size_t>> val;
    for (double r : {0.2, 0.4, 0.6, 0.9}) {
        auto d = ratio_splits(tiny(), split, r, 2);
        auto t = d.train;
        std::sort(t.begin(), t.end());
        EXPECT_TRUE(std::includes(t.begin(), t.end(), prev.begin(), prev.end()));
        if (val) EXPECT_EQ(d.val, *val);
        val = d.val;
        EXPECT_EQ(d.test, split.test);
        std::vector<std::size_t> both;
        auto v = d.val;
        std::sort(v.begin(), v.end());
        std::set_intersection(t.begin(), t.end(), v.begin(), v.end(), std::back_inserter(both));
        EXPECT_TRUE(both.empty());
        prev = t;
    }
    EXPECT_THROW(ratio_splits(tiny(), split, 0.05, 64), DataError);
}

TEST(Experiment, CountsRunsAndBuildsTables) {
    auto c = tiny_experiment();
    c.methods = {"multitask", "singletask"};
    std::size_t logged = 0;
    auto a = run_comparison(c, [&](const RunRecord&) { ++logged; });
    EXPECT_EQ(a.runs.size(), 6u);
    EXPECT_EQ(logged, 6u);
    auto t = build_table(a);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].runs, 2u);
    EXPECT_EQ(t.rows[1].runs, 4u);
    EXPECT_EQ(t.rows[1].cells.at("task1/test").at("acc").n, 2u);
    EXPECT_EQ(t.rows[1].cells.at("task2/test").at("acc").n, 2u);
    EXPECT_EQ(table_csv(t), table_csv(build_table(run_comparison(c))));
}

TEST(Experiment, CrossValidationRunsEveryFold) {
    auto c = tiny_experiment();
    c.cv = true;
    c.folds = 3;
    c.seeds = {0};
    c.methods = {"multitask"};
    auto a = run_comparison(c);
    ASSERT_EQ(a.runs.size(), 3u);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(a.runs[std::size_t(k)].result.fold, k);
}

TEST(Experiment, FailedRunIsRecorded) {
    auto c = tiny_experiment();
    c.methods = {"multitask", "smooth_distill"};
    c.seeds = {0};
    c.train.learning_rate = 1e30;
    auto a = run_comparison(c);
    ASSERT_EQ(a.runs.size(), 2u);
    for (auto& r : a.runs) {
        EXPECT_FALSE(r.ok());
        EXPECT_NE(r.error.find("non-finite"), std::string::npos) << r.error;
    }
    auto t = build_table(a);
    EXPECT_EQ(t.rows[0].failed, 1u);
    EXPECT_FALSE(t.rows[0].cells.at("task1/test").at("acc").mean.has_value());
    EXPECT_NE(table_csv(t).find("multitask,0,1,NA"), std::string::npos);
}

TEST(Experiment, LambdaSweep) {
    auto c = tiny_experiment();
    c.seeds = {0};
    auto s = sweep_lambda(c, load_dataset(c.dataset));
    ASSERT_EQ(s.rows.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(s.rows[i].x, c.lambdas[i]);
        EXPECT_EQ(s.rows[i].label, "smooth_distill");
        EXPECT_EQ(s.rows[i].runs, 1u);
    }
    c.methods = {"smooth_distill"};
    c.train.distill.lambda = 0.5;
    auto alone = run_comparison(c);
    EXPECT_EQ(alone.runs[0].result.test.at(1).accuracy, s.archives[2].runs[0].result.test.at(1).accuracy);
    EXPECT_EQ(alone.runs[0].result.epochs.back().train_loss, s.archives[2].runs[0].result.epochs.back().train_loss);
    auto csv = sweep_csv(s);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Experiment, TrainRatioSweep) {
    auto c = tiny_experiment();
    c.seeds = {0};
    c.methods = {"multitask"};
    c.train.epochs = 1;
    c.train.batch_size = 2;
    auto ds = load_dataset(c.dataset);
    auto s = sweep_train_ratio(c, ds);
    ASSERT_EQ(s.rows.size(), 9u);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(s.rows[i].x, 0.1 * double(i + 1));
    c.cv = true;
    EXPECT_THROW(sweep_train_ratio(c, ds), ConfigError);
}

// ---------------------------------------------------------------------------
// reports

TEST(Reports, EmitReloadAndReemit) {
    auto c = tiny_experiment();
    c.cv = true;
    c.folds = 2;
    c.methods = {"multitask", "smooth_distill", "singletask"};
    auto a = run_comparison(c);
    TempDir one("rep1"), two("rep2");
    emit_reports(a, one.path);

    auto runs = 0;
    for (auto& e : fs::directory_iterator(one.path / "runs")) runs += e.path().extension() == ".json";
    EXPECT_EQ(runs, int(a.runs.size()));
    auto curve = read_file(one.path / "curves" / "multitask_seed0_fold1.csv");
    EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), int(c.train.epochs) + 1);
    EXPECT_TRUE(fs::exists(one.path / "confusion" / "singletask2_seed1_fold0_task2_test.csv"));
    EXPECT_FALSE(fs::exists(one.path / "confusion" / "singletask2_seed1_fold0_task1_test.csv"));

    for (int task : {1, 2}) {
        auto s = significance(a, task);
        ASSERT_EQ(s.labels.size(), 3u);
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(s.p[i][i], 1.0);
            for (std::size_t j = 0; j < 3; ++j) {
                ASSERT_TRUE(s.p[i][j].has_value());
                EXPECT_EQ(*s.p[i][j], *s.p[j][i]);
                EXPECT_GE(*s.p[i][j], 0.0);
                EXPECT_LE(*s.p[i][j], 1.0);
            }
        }
    }

    auto back = load_archive(one.path);
    ASSERT_EQ(back.runs.size(), a.runs.size());
    emit_reports(back, two.path);
    EXPECT_EQ(read_tree(one.path), read_tree(two.path));

    auto table = build_table(a);
    auto j = nlohmann::json::parse(read_file(one.path / "runs" / "smooth_distill_seed0_fold0.json"));
    EXPECT_EQ(j.at("label"), "smooth_distill");
    std::istringstream csv(read_file(one.path / "comparison.csv"));
    std::string header, line;
    std::getline(csv, header);
    std::vector<std::string> cols;
    for (std::stringstream hs(header); std::getline(hs, line, ',');) cols.push_back(line);
    std::vector<double> accs;
    for (auto& r : a.runs)
        if (r.label == "multitask") accs.push_back(r.result.test.at(2).accuracy);
    std::getline(csv, line);
    std::vector<std::string> cells;
    for (std::stringstream ls(line); std::getline(ls, header, ',');) cells.push_back(header);
    auto at = std::find(cols.begin(), cols.end(), "task2/test/acc_mean") - cols.begin();
    EXPECT_EQ(cells[0], "multitask");
    EXPECT_NEAR(std::stod(cells[std::size_t(at)]), mean_of(accs), 1e-9);
    EXPECT_NEAR(*table.rows[0].cells.at("task2/test").at("acc").mean, mean_of(accs), 1e-12);
}

TEST(Reports, Failures) {
    Archive empty;
    TempDir tmp("repfail");
    EXPECT_THROW(emit_reports(empty, tmp.path), DataError);
    auto c = tiny_experiment();
    c.seeds = {0};
    c.methods = {"multitask"};
    auto a = run_comparison(c);
    std::ofstream(tmp.path / "blocker") << "x";
    EXPECT_THROW(emit_reports(a, tmp.path / "blocker" / "out"), IoError);
    EXPECT_THROW(load_archive(tmp.path / "nowhere"), IoError);
}
