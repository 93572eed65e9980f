#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include <boost/math/distributions/students_t.hpp>
#include <gtest/gtest.h>

#include "support.hpp"

using namespace sdistill;
using namespace sdistill::testing;
namespace fs = std::filesystem;

namespace {

RawRecording ramp(std::size_t n, std::vector<int> activity = {}, int placement = 0) {
    RawRecording r;
    r.subject_id = "s1";
    r.placement = placement;
    r.source = "ramp.csv";
    for (std::size_t i = 0; i < n; ++i) r.samples.push_back({float(i), float(i) + 0.5f, -float(i)});
    r.activity = activity.empty() ? std::vector<int>(n, 0) : std::move(activity);
    return r;
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

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string header = std::string(canonical_header) + "\n";

}  // namespace

// ---------------------------------------------------------------------------
// windowing

TEST(Windowing, ExactLengthGivesOneWindow) {
    auto w = window_slide(ramp(100));
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].origin.start, 0u);
}

TEST(Windowing, StartsFollowTheStep) {
    auto w = window_slide(ramp(220));
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0].origin.start, 0u);
    EXPECT_EQ(w[1].origin.start, 60u);
    EXPECT_EQ(w[2].origin.start, 120u);
}

TEST(Windowing, ShortRecordingGivesNothing) { EXPECT_TRUE(window_slide(ramp(99)).empty()); }

TEST(Windowing, CountMatchesFormula) {
    for (std::size_t n : {0, 1, 99, 100, 159, 160, 161, 1000, 1234}) {
        for (std::size_t step : {1, 7, 60, 100, 150}) {
            auto w = window_slide(ramp(n), 100, step);
            EXPECT_EQ(w.size(), n < 100 ? 0 : (n - 100) / step + 1) << n << " " << step;
            for (std::size_t k = 0; k < w.size(); ++k) {
                EXPECT_EQ(w[k].origin.start, k * step);
                EXPECT_LE(w[k].origin.start + 100, n);
            }
        }
    }
}

TEST(Windowing, TieGoesToSmallestLabel) {
    std::vector<int> act(100, 3);
    std::fill(act.begin() + 50, act.end(), 1);
    auto w = window_slide(ramp(100, act));
    EXPECT_EQ(w[0].y1, 1);
    std::vector<int> act2(100, 1);
    std::fill(act2.begin() + 50, act2.end(), 3);
    EXPECT_EQ(window_slide(ramp(100, act2))[0].y1, 1);
}

TEST(Windowing, LabelIsModalAndPlacementCarriesOver) {
    std::vector<int> act(100, 2);
    std::fill(act.begin(), act.begin() + 49, 5);
    auto w = window_slide(ramp(100, act, 2));
    EXPECT_EQ(w[0].y1, 2);
    EXPECT_EQ(w[0].y2, 2);
}

TEST(Windowing, ValuesAreAxisMajorSlices) {
    auto rec = ramp(220);
    auto w = window_slide(rec);
    for (auto& win : w)
        for (std::size_t t = 0; t < 100; ++t)
            for (std::size_t a = 0; a < 3; ++a)
                EXPECT_EQ(win.values[a * 100 + t], rec.samples[win.origin.start + t][a]);
}

TEST(Windowing, ProvenanceRecoversTheSlice) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(-2, 2);
    auto rec = ramp(537);
    for (auto& s : rec.samples) s = {u(rng), u(rng), u(rng)};
    auto ds = assemble(window_slide(rec, 64, 37));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto w = ds.window(i);
        EXPECT_EQ(ds.origin[i].subject, "s1");
        EXPECT_EQ(ds.origin[i].source, "ramp.csv");
        for (std::size_t t = 0; t < 64; ++t)
            for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(w[a * 64 + t], rec.samples[ds.origin[i].start + t][a]);
    }
}

TEST(Windowing, MismatchedLabelsRejected) {
    auto r = ramp(120);
    r.activity.pop_back();
    EXPECT_THROW(window_slide(r), DataError);
    EXPECT_THROW(window_slide(ramp(120), 0, 60), ConfigError);
    EXPECT_THROW(window_slide(ramp(120), 100, 0), ConfigError);
}

TEST(Assemble, StacksWindows) {
    auto w = window_slide(ramp(160));
    ASSERT_EQ(w.size(), 2u);
    auto ds = assemble(w, {"a"}, {"p"});
    EXPECT_EQ(ds.shape(), (Shape{2, 1, 3, 100}));
    auto t = ds.gather(std::vector<std::size_t>{1, 0});
    EXPECT_EQ(t.shape(), (Shape{2, 1, 3, 100}));
    EXPECT_EQ(t.data()[0], 60.0f);
    EXPECT_EQ(t.data()[300], 0.0f);
    EXPECT_NO_THROW(ds.validate());
}

TEST(Assemble, EmptyInputGivesEmptyDataset) {
    auto ds = assemble({});
    EXPECT_TRUE(ds.empty());
    EXPECT_EQ(ds.size(), 0u);
}

TEST(Assemble, MixedLengthsRejected) {
    auto a = window_slide(ramp(100));
    auto b = window_slide(ramp(50), 50, 10);
    a.push_back(b[0]);
    EXPECT_THROW(assemble(a), ShapeError);
}

// ---------------------------------------------------------------------------
// splits

TEST(Split, HundredWindows) {
    auto s = split_and_fold(100, 0);
    EXPECT_EQ(s.train.size(), 80u);
    EXPECT_EQ(s.test.size(), 20u);
    for (auto& f : s.folds) EXPECT_EQ(f.size(), 16u);
}

TEST(Split, UnevenFolds) {
    auto s = split_and_fold(103, 0);
    EXPECT_EQ(s.train.size(), 82u);
    EXPECT_EQ(s.test.size(), 21u);
    std::vector<std::size_t> sizes;
    for (auto& f : s.folds) sizes.push_back(f.size());
    EXPECT_EQ(sizes, (std::vector<std::size_t>{17, 17, 16, 16, 16}));
}

TEST(Split, DeterministicAndSeedSensitive) {
    auto a = split_and_fold(500, 11), b = split_and_fold(500, 11), c = split_and_fold(500, 12);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.folds, b.folds);
    EXPECT_NE(a.test, c.test);
}

TEST(Split, PartitionProperties) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 10 + rng() % 900;
        auto s = split_and_fold(n, rng());
        std::vector<std::size_t> all = s.train;
        all.insert(all.end(), s.test.begin(), s.test.end());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(all[i], i);
        EXPECT_EQ(s.train.size(), static_cast<std::size_t>(std::floor(0.8 * double(n))));
        std::vector<std::size_t> folded;
        std::size_t lo = n, hi = 0;
        for (auto& f : s.folds) {
            folded.insert(folded.end(), f.begin(), f.end());
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
        }
        std::sort(folded.begin(), folded.end());
        EXPECT_EQ(folded, s.train);
        EXPECT_LE(hi - lo, 1u);
        for (std::size_t k = 0; k < s.folds.size(); ++k) {
            auto v = fold_view(s, k);
            EXPECT_EQ(v.train.size() + v.val.size(), s.train.size());
            std::vector<std::size_t> both;
            std::set_intersection(v.train.begin(), v.train.end(), v.val.begin(), v.val.end(),
                                  std::back_inserter(both));
            EXPECT_TRUE(both.empty());
        }
    }
}

TEST(Split, TooFewWindows) {
    EXPECT_THROW(split_and_fold(9, 0), DataError);
    EXPECT_THROW(fold_view(split_and_fold(100, 0), 5), ConfigError);
}

TEST(Split, SubjectsDoNotStraddle) {
    std::vector<Window> w;
    for (int s = 0; s < 6; ++s) {
        auto rec = ramp(400);
        rec.subject_id = "subj" + std::to_string(s);
        auto ws = window_slide(rec);
        w.insert(w.end(), ws.begin(), ws.end());
    }
    auto ds = assemble(w, {"a"}, {"p"});
    auto s = split_by_subject(ds, 1);
    std::set<std::string> tr, te;
    for (auto i : s.train) tr.insert(ds.origin[i].subject);
    for (auto i : s.test) te.insert(ds.origin[i].subject);
    for (auto& x : tr) EXPECT_EQ(te.count(x), 0u);
    EXPECT_EQ(s.train.size() + s.test.size(), ds.size());
}

TEST(Standardize, TrainStatisticsOnly) {
    auto ds = synth_generate(10, 2, 2, 32, 1, 0.3);
    auto s = split_and_fold(ds, 0);
    auto st = fit_channel_stats(ds, s.train);
    standardize(ds, st);
    for (std::size_t a = 0; a < 3; ++a) {
        double m = 0, v = 0;
        std::size_t n = 0;
        for (auto i : s.train)
            for (std::size_t t = 0; t < 32; ++t) m += ds.window(i)[a * 32 + t], ++n;
        m /= double(n);
        for (auto i : s.train)
            for (std::size_t t = 0; t < 32; ++t) v += std::pow(ds.window(i)[a * 32 + t] - m, 2);
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(v / double(n), 1.0, 1e-3);
    }
}

// ---------------------------------------------------------------------------
// synthetic corpus

TEST(Synth, CountsPerClassPair) {
    auto ds = synth_generate(7, 4, 3, 100, 9, 0.2);
    EXPECT_EQ(ds.size(), 84u);
    std::map<std::pair<int, int>, int> c;
    for (std::size_t i = 0; i < ds.size(); ++i) ++c[{ds.y1[i], ds.y2[i]}];
    EXPECT_EQ(c.size(), 12u);
    for (auto& [k, n] : c) EXPECT_EQ(n, 7);
    EXPECT_NO_THROW(ds.validate());
}

TEST(Synth, SameSeedSameBytes) {
    auto a = synth_generate(5, 3, 2, 50, 42, 0.5), b = synth_generate(5, 3, 2, 50, 42, 0.5);
    auto c = synth_generate(5, 3, 2, 50, 43, 0.5);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, c.values);
}

// Nearest centroid on mean-removed spectra for task 1 and per-axis means for task 2.
TEST(Synth, NoiseFreeCorpusIsSeparable) {
    auto ds = synth_generate(20, 4, 3, 100, 1, 0.0);
    const std::size_t L = ds.length;
    auto power = [&](std::size_t i, std::size_t k) {
        double s = 0;
        for (std::size_t a = 0; a < 3; ++a) {
            auto w = ds.window(i).subspan(a * L, L);
            double mean = std::accumulate(w.begin(), w.end(), 0.0) / double(L);
            double re = 0, im = 0;
            for (std::size_t t = 0; t < L; ++t) {
                re += (w[t] - mean) * std::cos(2 * std::numbers::pi * double(k * t) / double(L));
                im += (w[t] - mean) * std::sin(2 * std::numbers::pi * double(k * t) / double(L));
            }
            s += re * re + im * im;
        }
        return s;
    };
    std::map<int, std::array<double, 3>> centroid;
    std::map<int, int> count;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            auto w = ds.window(i).subspan(a * L, L);
            centroid[ds.y2[i]][a] += std::accumulate(w.begin(), w.end(), 0.0) / double(L);
        }
        ++count[ds.y2[i]];
    }
    for (auto& [k, c] : centroid)
        for (auto& v : c) v /= count[k];
    std::size_t ok1 = 0, ok2 = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t best = 1;
        for (std::size_t k = 2; k <= 4; ++k)
            if (power(i, k) > power(i, best)) best = k;
        ok1 += int(best) - 1 == ds.y1[i];
        int b2 = 0;
        double d2 = 1e30;
        for (auto& [k, c] : centroid) {
            double d = 0;
            for (std::size_t a = 0; a < 3; ++a) {
                auto w = ds.window(i).subspan(a * L, L);
                d += std::pow(std::accumulate(w.begin(), w.end(), 0.0) / double(L) - c[a], 2);
            }
            if (d < d2) d2 = d, b2 = k;
        }
        ok2 += b2 == ds.y2[i];
    }
    EXPECT_EQ(ok1, ds.size());
    EXPECT_EQ(ok2, ds.size());
}

TEST(Synth, BadArguments) {
    EXPECT_THROW(synth_generate(0, 2, 2, 10, 0, 0), ConfigError);
    EXPECT_THROW(synth_generate(1, 2, 2, 10, 0, -1), ConfigError);
}

TEST(WindowCache, RoundTrip) {
    TempDir tmp("cache");
    auto ds = synth_generate(3, 3, 2, 40, 5, 0.7);
    ds.origin[2] = {"subject 7", "file,with,commas.csv", 1234};
    save_windows(tmp.path / "w.bin", ds);
    auto back = load_windows(tmp.path / "w.bin");
    EXPECT_EQ(back.length, ds.length);
    EXPECT_EQ(back.values, ds.values);
    EXPECT_EQ(back.y1, ds.y1);
    EXPECT_EQ(back.y2, ds.y2);
    EXPECT_EQ(back.origin, ds.origin);
    EXPECT_EQ(back.task1_names, ds.task1_names);
    EXPECT_EQ(back.task2_names, ds.task2_names);
}

TEST(WindowCache, BadFiles) {
    TempDir tmp("cachebad");
    EXPECT_THROW(load_windows(tmp.path / "missing.bin"), IoError);
    write_file(tmp.path / "junk.bin", "not a window cache");
    EXPECT_THROW(load_windows(tmp.path / "junk.bin"), IoError);
    auto ds = synth_generate(2, 2, 2, 20, 5, 0.1);
    save_windows(tmp.path / "w.bin", ds);
    auto bytes = read_file(tmp.path / "w.bin");
    write_file(tmp.path / "cut.bin", bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW(load_windows(tmp.path / "cut.bin"), IoError);
}

// ---------------------------------------------------------------------------
// canonical CSV

TEST(Csv, TwoRowsOneRecording) {
    TempDir tmp("csv2");
    write_file(tmp.path / "a.csv", header + "s1,chest,Walking,0.1,0.2,0.3,0\ns1,chest,Walking,0.4,0.5,0.6,1\n");
    auto recs = ingest_csv(tmp.path / "a.csv", mhealth_schema());
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].size(), 2u);
    EXPECT_EQ(recs[0].subject_id, "s1");
    EXPECT_EQ(recs[0].placement, 0);
    EXPECT_EQ(recs[0].activity, (std::vector<int>{4, 4}));
    EXPECT_FLOAT_EQ(recs[0].samples[1][2], 0.6f);
}

TEST(Csv, PlacementsSplitRecordings) {
    TempDir tmp("csvpl");
    write_file(tmp.path / "a.csv", header +
                                       "s1,chest,Walking,0,0,0,0\ns1,ankle,Walking,1,1,1,0\n"
                                       "s1,chest,Walking,0,0,0,1\ns1,ankle,Walking,1,1,1,1\n");
    auto recs = ingest_csv(tmp.path / "a.csv", mhealth_schema());
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].placement, 0);
    EXPECT_EQ(recs[1].placement, 2);
    EXPECT_EQ(recs[0].size(), 2u);
    EXPECT_EQ(recs[1].size(), 2u);
}

TEST(Csv, IndexResetStartsNewSession) {
    TempDir tmp("csvsess");
    write_file(tmp.path / "a.csv", header + "s1,chest,Null,0,0,0,0\ns1,chest,Null,0,0,0,1\ns1,chest,Null,0,0,0,0\n");
    auto recs = ingest_csv(tmp.path / "a.csv", mhealth_schema());
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].size(), 2u);
    EXPECT_EQ(recs[1].size(), 1u);
}

TEST(Csv, HeaderOnly) {
    TempDir tmp("csvh");
    write_file(tmp.path / "a.csv", header);
    EXPECT_TRUE(ingest_csv(tmp.path / "a.csv", mhealth_schema()).empty());
}

TEST(Csv, ErrorsNameTheLineAndValidLabels) {
    TempDir tmp("csverr");
    write_file(tmp.path / "a.csv", header + "s1,chest,Walking,0,0,0,0\ns1,elbow,Walking,0,0,0,1\n");
    try {
        ingest_csv(tmp.path / "a.csv", mhealth_schema());
        FAIL();
    } catch (const DataError& e) {
        std::string m = e.what();
        EXPECT_NE(m.find("line 3"), std::string::npos) << m;
        EXPECT_NE(m.find("'elbow'"), std::string::npos) << m;
        EXPECT_NE(m.find("'ankle'"), std::string::npos) << m;
    }
    write_file(tmp.path / "b.csv", header + "s1,chest,Flying,0,0,0,0\n");
    try {
        ingest_csv(tmp.path / "b.csv", mhealth_schema());
        FAIL();
    } catch (const DataError& e) {
        std::string m = e.what();
        EXPECT_NE(m.find("line 2"), std::string::npos) << m;
        EXPECT_NE(m.find("'Jump front & back'"), std::string::npos) << m;
    }
    write_file(tmp.path / "c.csv", header + "s1,chest,Walking,0,zero,0,0\n");
    EXPECT_THROW(ingest_csv(tmp.path / "c.csv", mhealth_schema()), DataError);
    write_file(tmp.path / "d.csv", "x,y,z\n");
    EXPECT_THROW(ingest_csv(tmp.path / "d.csv", mhealth_schema()), DataError);
    EXPECT_THROW(ingest_csv(tmp.path / "none.csv", mhealth_schema()), IoError);
}

TEST(Csv, WriteThenReadIsIdentity) {
    TempDir tmp("csvrt");
    auto schema = wisdm_schema();
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> u(-3, 3);
    std::vector<RawRecording> recs;
    for (int k = 0; k < 3; ++k) {
        RawRecording r;
        r.subject_id = k == 2 ? "16\"01, b" : "16" + std::to_string(k);
        r.placement = k % 2;
        r.source = "rt.csv";
        r.sampling_rate = 20.0;
        for (int i = 0; i < 57; ++i) {
            r.samples.push_back({u(rng), u(rng), u(rng)});
            r.activity.push_back(int(rng() % 18));
        }
        recs.push_back(r);
    }
    write_canonical_csv(tmp.path / "rt.csv", recs, schema);
    auto back = ingest_csv(tmp.path / "rt.csv", schema);
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t k = 0; k < recs.size(); ++k) {
        EXPECT_EQ(back[k].subject_id, recs[k].subject_id);
        EXPECT_EQ(back[k].placement, recs[k].placement);
        EXPECT_EQ(back[k].samples, recs[k].samples);
        EXPECT_EQ(back[k].activity, recs[k].activity);
    }
    write_canonical_csv(tmp.path / "rt2.csv", back, schema);
    EXPECT_EQ(read_file(tmp.path / "rt.csv"), read_file(tmp.path / "rt2.csv"));
}

// ---------------------------------------------------------------------------
// schemas and adapters

TEST(Schema, MHealth) {
    auto s = mhealth_schema();
    ASSERT_EQ(s.activities.size(), 13u);
    EXPECT_EQ(s.activities.front(), "Null");
    EXPECT_EQ(s.activities.back(), "Jump front & back");
    EXPECT_EQ(s.placements.size(), 3u);
}

TEST(Schema, Sleep) {
    auto s = sleep_schema();
    ASSERT_EQ(s.activities.size(), 12u);
    EXPECT_EQ(s.activities[0], "Up (Supine)");
    EXPECT_EQ(sleep_posture_angle(0), 90);
    EXPECT_EQ(sleep_posture_angle(3), 0);
    EXPECT_EQ(sleep_posture_angle(6), 270);
    for (std::size_t k = 0; k + 1 < 12; ++k) EXPECT_EQ((sleep_posture_angle(k) - sleep_posture_angle(k + 1) + 360) % 360, 30);
}

TEST(Schema, Wisdm) {
    auto s = wisdm_schema();
    ASSERT_EQ(s.activities.size(), 18u);
    EXPECT_EQ(s.activities.front(), "Walking");
    EXPECT_EQ(s.activities.back(), "Folding Clothes");
    EXPECT_EQ(s.placements.size(), 2u);
    EXPECT_EQ(wisdm_schema(true).placements.size(), 1u);
    EXPECT_THROW(schema_for("pamap"), ConfigError);
}

TEST(Adapter, MHealthLogs) {
    TempDir tmp("mh");
    std::string log;
    for (int i = 0; i < 150; ++i) {
        std::string row;
        for (int c = 0; c < 23; ++c) row += std::to_string(c == 0 ? 9.80665 : double(c)) + " ";
        row += std::to_string(i < 100 ? 0 : 5) + "\n";
        log += row;
    }
    write_file(tmp.path / "raw" / "mHealth_subject1.log", log);
    write_file(tmp.path / "raw" / "mHealth_subject2.log", log);
    auto out = adapt_mhealth(tmp.path / "raw", tmp.path / "canon", {1, 2});
    ASSERT_EQ(out.files.size(), 2u);
    EXPECT_TRUE(fs::exists(out.metadata));
    auto recs = ingest_csv(out.files[0], mhealth_schema());
    ASSERT_EQ(recs.size(), 3u);
    EXPECT_EQ(recs[0].size(), 150u);
    EXPECT_NEAR(recs[0].samples[0][0], 1.0f, 1e-6);
    EXPECT_NEAR(recs[1].samples[0][0], 14.0 / 9.80665, 1e-5);
    EXPECT_NEAR(recs[2].samples[0][0], 5.0 / 9.80665, 1e-5);
    EXPECT_EQ(recs[0].activity[120], 5);
    auto ds = load_canonical_dir(tmp.path / "canon", mhealth_schema());
    EXPECT_EQ(ds.size(), 2u * 3u);
    EXPECT_EQ(ds.num_classes_task1(), 13u);
}

TEST(Adapter, MHealthMissingFile) {
    TempDir tmp("mhmiss");
    try {
        adapt_mhealth(tmp.path, tmp.path / "out", {1, 2});
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("mHealth_subject2.log"), std::string::npos);
    }
}

TEST(Adapter, Wisdm) {
    TempDir tmp("wisdm");
    std::string phone, watch;
    for (int i = 0; i < 130; ++i) {
        phone += "1600," + std::string(i < 70 ? "A" : "S") + "," + std::to_string(i) + ",9.80665,0,-9.80665;\n";
        watch += "1600,B," + std::to_string(i) + ",0,19.6133,0;\n";
    }
    write_file(tmp.path / "raw" / "phone" / "accel" / "data_1600_accel_phone.txt", phone);
    write_file(tmp.path / "raw" / "watch" / "accel" / "data_1600_accel_watch.txt", watch);
    auto out = adapt_wisdm(tmp.path, tmp.path / "canon");
    ASSERT_EQ(out.files.size(), 1u);
    auto recs = ingest_csv(out.files[0], wisdm_schema());
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[0].activity.front(), 0);
    EXPECT_EQ(recs[0].activity.back(), 17);
    EXPECT_EQ(recs[1].activity.front(), 1);
    EXPECT_NEAR(recs[0].samples[0][0], 1.0f, 1e-6);
    EXPECT_NEAR(recs[1].samples[0][1], 2.0f, 1e-6);

    fs::remove(tmp.path / "raw" / "watch" / "accel" / "data_1600_accel_watch.txt");
    EXPECT_THROW(adapt_wisdm(tmp.path, tmp.path / "canon2"), IoError);
    EXPECT_NO_THROW(adapt_wisdm(tmp.path, tmp.path / "canon3", true));
}

TEST(Adapter, Sleep) {
    TempDir tmp("sleep");
    for (std::string pl : {"chest", "neck", "abdomen"}) {
        write_file(tmp.path / pl / "p1_U.csv", "x,y,z\n" + [] {
            std::string s;
            for (int i = 0; i < 110; ++i) s += "0.1,0.2,0.97\n";
            return s;
        }());
        write_file(tmp.path / pl / "p1_LD.csv", [] {
            std::string s;
            for (int i = 0; i < 100; ++i) s += "-0.5,0.1,0.8\n";
            return s;
        }());
    }
    auto out = adapt_sleep(tmp.path, tmp.path / "canon");
    ASSERT_EQ(out.files.size(), 1u);
    auto ds = load_canonical_dir(tmp.path / "canon", sleep_schema());
    EXPECT_EQ(ds.size(), 6u);
    std::set<int> postures(ds.y1.begin(), ds.y1.end()), placements(ds.y2.begin(), ds.y2.end());
    EXPECT_EQ(postures, (std::set<int>{0, 8}));
    EXPECT_EQ(placements, (std::set<int>{0, 1, 2}));

    write_file(tmp.path / "neck" / "p1_ZZ.csv", "0,0,1\n");
    EXPECT_THROW(adapt_sleep(tmp.path, tmp.path / "canon2"), DataError);
    TempDir empty("sleepmiss");
    EXPECT_THROW(adapt_sleep(empty.path, empty.path / "out"), IoError);
}

// ---------------------------------------------------------------------------
// metrics

TEST(Metrics, BinaryExample) {
    std::vector<int> t, p;
    auto add = [&](int a, int b, int n) {
        for (int i = 0; i < n; ++i) t.push_back(a), p.push_back(b);
    };
    add(0, 0, 8);
    add(0, 1, 2);
    add(1, 0, 1);
    add(1, 1, 9);
    auto cm = confusion(t, p, 2);
    EXPECT_EQ(cm.at(0, 0), 8u);
    EXPECT_EQ(cm.at(0, 1), 2u);
    auto r = report(cm);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.85);
    auto& c = r.per_class[0];
    EXPECT_DOUBLE_EQ(*c.sensitivity, 0.8);
    EXPECT_DOUBLE_EQ(*c.ppv, 8.0 / 9.0);
    EXPECT_DOUBLE_EQ(*c.npv, 9.0 / 11.0);
    EXPECT_DOUBLE_EQ(c.accuracy, 0.85);
    EXPECT_DOUBLE_EQ(*c.f1, 16.0 / 19.0);
}

TEST(Metrics, PerfectPrediction) {
    std::vector<int> y = {0, 1, 2, 2, 1, 0, 2};
    auto r = report(confusion(y, y, 3));
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(*r.macro_f1, 1.0);
}

TEST(Metrics, AbsentClassIsUndefined) {
    std::vector<int> t = {0, 0, 1}, p = {0, 1, 1};
    auto r = report(confusion(t, p, 3));
    EXPECT_FALSE(r.per_class[2].sensitivity.has_value());
    EXPECT_FALSE(r.per_class[2].ppv.has_value());
    EXPECT_FALSE(r.per_class[2].f1.has_value());
    EXPECT_TRUE(r.per_class[2].npv.has_value());
    EXPECT_DOUBLE_EQ(*r.macro_f1, (2.0 / 3.0 + 2.0 / 3.0) / 2.0);
    auto csv = report_csv(r);
    EXPECT_NE(csv.find("2,0,0,0,0,3,1.000000,NA,NA,1.000000,NA"), std::string::npos) << csv;
    EXPECT_TRUE(report_json(r)["per_class"][2]["f1"].is_null());
}

TEST(Metrics, BadInput) {
    std::vector<int> a = {0, 1}, b = {0};
    EXPECT_THROW(confusion(a, b, 2), DataError);
    std::vector<int> c = {0, 2};
    EXPECT_THROW(confusion(a, c, 2), DataError);
    EXPECT_THROW(report(confusion(std::vector<int>{}, std::vector<int>{}, 2)), DataError);
}

TEST(Metrics, MatchesBruteForce) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 2 + rng() % 12, n = 1 + rng() % 300;
        auto t = labels(n, k, rng), p = labels(n, k, rng);
        if (trial % 3 == 0)
            for (std::size_t i = 0; i < n; ++i)
                if (rng() % 2) p[i] = t[i];
        auto r = report(confusion(t, p, k));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) hits += t[i] == p[i];
        EXPECT_DOUBLE_EQ(r.accuracy, double(hits) / double(n));
        double f1_sum = 0;
        int f1_n = 0;
        for (std::size_t c = 0; c < k; ++c) {
            std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                bool is_t = t[i] == int(c), is_p = p[i] == int(c);
                tp += is_t && is_p;
                fp += !is_t && is_p;
                fn += is_t && !is_p;
                tn += !is_t && !is_p;
            }
            auto& m = r.per_class[c];
            EXPECT_EQ(m.tp, tp);
            EXPECT_EQ(m.fp, fp);
            EXPECT_EQ(m.fn, fn);
            EXPECT_EQ(m.tn, tn);
            EXPECT_EQ(m.sensitivity.has_value(), tp + fn > 0);
            if (m.sensitivity) EXPECT_DOUBLE_EQ(*m.sensitivity, double(tp) / double(tp + fn));
            if (m.ppv) EXPECT_DOUBLE_EQ(*m.ppv, double(tp) / double(tp + fp));
            if (m.npv) EXPECT_DOUBLE_EQ(*m.npv, double(tn) / double(tn + fn));
            if (m.ppv && m.sensitivity && *m.ppv + *m.sensitivity > 0)
                EXPECT_NEAR(*m.f1, 2 * *m.ppv * *m.sensitivity / (*m.ppv + *m.sensitivity), 1e-12);
            if (tp + fp + fn > 0) f1_sum += 2.0 * double(tp) / double(2 * tp + fp + fn), ++f1_n;
            for (auto v : {m.sensitivity, m.ppv, m.npv, m.f1})
                if (v) EXPECT_TRUE(*v >= 0 && *v <= 1);
        }
        ASSERT_TRUE(r.macro_f1.has_value());
        EXPECT_NEAR(*r.macro_f1, f1_sum / f1_n, 1e-12);
    }
}

TEST(Metrics, ConfusionJsonRoundTrip) {
    std::vector<int> t = {0, 1, 2, 1}, p = {0, 2, 2, 1};
    auto cm = confusion(t, p, 3, {"a", "b", "c"});
    auto back = confusion_from_json(nlohmann::json::parse(confusion_json(cm).dump()));
    EXPECT_EQ(back.counts, cm.counts);
    EXPECT_EQ(back.names, cm.names);
    EXPECT_EQ(confusion_csv(cm), "true\\pred,a,b,c\na,1,0,0\nb,0,1,1\nc,0,0,1\n");
}

// ---------------------------------------------------------------------------
// paired t-test

TEST(TTest, IdenticalSamples) {
    std::vector<double> a = {0.9, 0.8, 0.85};
    auto r = paired_t_test(a, a);
    EXPECT_EQ(r.t, 0.0);
    EXPECT_EQ(r.p, 1.0);
}

TEST(TTest, ConstantShift) {
    std::vector<double> a = {0.9, 0.8, 0.85}, b = {0.8, 0.7, 0.75};
    auto r = paired_t_test(a, b);
    EXPECT_EQ(r.p, 0.0);
    EXPECT_TRUE(std::isinf(r.t));
}

TEST(TTest, SmallExample) {
    std::vector<double> a = {1, 0, 1, -1}, b = {0, 0, 0, 0};
    auto r = paired_t_test(a, b);
    EXPECT_NEAR(r.t, 0.5222, 1e-4);
    EXPECT_NEAR(r.p, 0.638, 1e-3);
    EXPECT_EQ(r.df, 3.0);
}

TEST(TTest, MatchesReferenceDistribution) {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        std::vector<double> a(n), b(n);
        const double shift = 0.5 * g(rng);
        for (std::size_t i = 0; i < n; ++i) a[i] = g(rng), b[i] = a[i] + shift + g(rng);
        auto r = paired_t_test(a, b);
        boost::math::students_t dist(double(n - 1));
        const double ref = 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
        EXPECT_NEAR(r.p, ref, 1e-9 + 1e-7 * ref) << n << " t=" << r.t;
        EXPECT_GE(r.p, 0.0);
        EXPECT_LE(r.p, 1.0);
        auto sym = paired_t_test(b, a);
        EXPECT_NEAR(sym.t, -r.t, 1e-12);
        EXPECT_NEAR(sym.p, r.p, 1e-12);
    }
}

TEST(TTest, NeedsPairs) {
    std::vector<double> a = {1}, b = {2}, c = {1, 2};
    EXPECT_THROW(paired_t_test(a, b), DataError);
    EXPECT_THROW(paired_t_test(a, c), DataError);
}

TEST(Aggregate, MeanAndSampleStd) {
    std::vector<double> v = {1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(mean_of(v), 2.5);
    EXPECT_NEAR(*stddev_of(v), std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_FALSE(stddev_of(std::vector<double>{1.0}).has_value());
}
