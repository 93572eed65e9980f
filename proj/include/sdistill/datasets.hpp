#pragma once

// Canonical CSV interchange and adapters for the MHealth, WISDM and Sleep
// accelerometer corpora.
//
// Canonical schema, one sample per row:
//   subject_id,placement_label,activity_label,x,y,z,sample_index
// Acceleration is in g. sample_index increases within a (subject, placement)
// group; a value that does not increase starts a new session.

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "data.hpp"

namespace sdistill {

inline constexpr double standard_gravity = 9.80665;

struct DatasetSchema {
    std::string kind;
    std::vector<std::string> activities;
    std::vector<std::string> placements;
    double sampling_rate = 0.0;

    int activity_id(std::string_view name) const { return lookup(activities, name); }
    int placement_id(std::string_view name) const { return lookup(placements, name); }

private:
    static int lookup(const std::vector<std::string>& names, std::string_view n) {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == n) return static_cast<int>(i);
        return -1;
    }
};

inline DatasetSchema mhealth_schema() {
    return {"mhealth",
            {"Null", "Standing still", "Sitting and relaxing", "Lying down", "Walking", "Climbing stairs",
             "Waist bends forward", "Frontal elevation of arms", "Knees bending (crouching)", "Cycling", "Jogging",
             "Running", "Jump front & back"},
            {"chest", "wrist", "ankle"},
            50.0};
}

inline DatasetSchema wisdm_schema(bool phone_only = false) {
    DatasetSchema s{"wisdm",
                    {"Walking", "Jogging", "Stairs", "Sitting", "Standing", "Typing", "Brushing Teeth", "Eating Soup",
                     "Eating Chips", "Eating Pasta", "Drinking from Cup", "Eating Sandwich", "Kicking (Soccer Ball)",
                     "Playing Catch w/Tennis Ball", "Dribbling (Basketball)", "Writing", "Clapping",
                     "Folding Clothes"},
                    {"phone-pocket", "watch-wrist"},
                    20.0};
    if (phone_only) s.placements = {"phone-pocket"};
    return s;
}

/// Posture names with their abbreviations, label 1 first.
inline const std::vector<std::pair<std::string, std::string>>& sleep_postures() {
    static const std::vector<std::pair<std::string, std::string>> p = {
        {"Up (Supine)", "U"},   {"Up Right", "UR"},  {"Right Up", "RU"},   {"Right (Lateral Right)", "R"},
        {"Right Down", "RD"},   {"Down Right", "DR"}, {"Down (Prone)", "D"}, {"Down Left", "DL"},
        {"Left Down", "LD"},    {"Left (Lateral Left)", "L"}, {"Left Up", "LU"}, {"Up Left", "UL"}};
    return p;
}

/// Angle of the stomach against the x-axis, in degrees, per posture.
inline int sleep_posture_angle(std::size_t label_index) {
    static const int a[] = {90, 60, 30, 0, 330, 300, 270, 240, 210, 180, 150, 120};
    return a[label_index];
}

inline DatasetSchema sleep_schema() {
    DatasetSchema s{"sleep", {}, {"chest", "neck", "abdomen"}, 50.0};
    for (auto& [name, abbr] : sleep_postures()) s.activities.push_back(name);
    return s;
}

inline DatasetSchema schema_for(std::string_view kind) {
    if (kind == "mhealth") return mhealth_schema();
    if (kind == "wisdm") return wisdm_schema(false);
    if (kind == "wisdm-phone") return wisdm_schema(true);
    if (kind == "sleep") return sleep_schema();
    throw ConfigError("unknown dataset kind '" + std::string(kind) + "' (expected mhealth, wisdm, wisdm-phone, sleep)");
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split_row(std::string_view line, std::size_t lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
            else if (c == '"') quoted = false;
            else cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) throw DataError("line " + std::to_string(lineno) + ": unterminated quote");
    out.push_back(std::move(cur));
    return out;
}

inline std::string field(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + '"';
}

template <class U>
U number(std::string_view s, std::size_t lineno, const char* what) {
    U v{};
    auto first = s.data(), last = s.data() + s.size();
    while (first < last && *first == ' ') ++first;
    auto [p, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || p != last) {
        throw DataError("line " + std::to_string(lineno) + ": bad " + what + " '" + std::string(s) + "'");
    }
    return v;
}

inline std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (auto& n : names) out += (out.empty() ? "" : ", ") + ("'" + n + "'");
    return out;
}

}  // namespace csv

inline const char* canonical_header = "subject_id,placement_label,activity_label,x,y,z,sample_index";

/// One recording per (subject, placement, session), in order of first
/// appearance. Activity and placement ids index into `schema`.
inline std::vector<RawRecording> ingest_csv(const std::filesystem::path& path, const DatasetSchema& schema) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) return {};
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != canonical_header) {
        throw DataError(path.string() + ": line 1: expected header '" + std::string(canonical_header) + "'");
    }
    std::vector<RawRecording> recs;
    std::map<std::pair<std::string, int>, std::pair<std::size_t, long long>> open;  // -> (record, last index)
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = csv::split_row(line, lineno);
        if (f.size() != 7) {
            throw DataError(path.string() + ": line " + std::to_string(lineno) + ": expected 7 fields, got " +
                            std::to_string(f.size()));
        }
        int placement = schema.placement_id(f[1]);
        if (placement < 0) {
            throw DataError(path.string() + ": line " + std::to_string(lineno) + ": unknown placement '" + f[1] +
                            "'; valid: " + csv::join_names(schema.placements));
        }
        int activity = schema.activity_id(f[2]);
        if (activity < 0) {
            throw DataError(path.string() + ": line " + std::to_string(lineno) + ": unknown activity '" + f[2] +
                            "'; valid: " + csv::join_names(schema.activities));
        }
        std::array<float, 3> xyz{csv::number<float>(f[3], lineno, "x"), csv::number<float>(f[4], lineno, "y"),
                                 csv::number<float>(f[5], lineno, "z")};
        auto idx = csv::number<long long>(f[6], lineno, "sample_index");
        auto key = std::make_pair(f[0], placement);
        auto it = open.find(key);
        if (it == open.end() || idx <= it->second.second) {
            RawRecording r;
            r.subject_id = f[0];
            r.placement = placement;
            r.sampling_rate = schema.sampling_rate;
            r.source = path.filename().string();
            recs.push_back(std::move(r));
            it = open.insert_or_assign(key, std::make_pair(recs.size() - 1, idx)).first;
        }
        auto& rec = recs[it->second.first];
        rec.samples.push_back(xyz);
        rec.activity.push_back(activity);
        it->second.second = idx;
    }
    return recs;
}

/// Writes recordings in the canonical schema. Floats use the shortest text
/// that reads back to the same value, so output is reproducible.
inline void write_canonical_csv(const std::filesystem::path& path, const std::vector<RawRecording>& recs,
                                const DatasetSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << canonical_header << '\n';
    for (auto& r : recs) {
        r.check();
        const auto& pl = schema.placements.at(static_cast<std::size_t>(r.placement));
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << fmt::format("{},{},{},{},{},{},{}\n", csv::field(r.subject_id), csv::field(pl),
                               csv::field(schema.activities.at(static_cast<std::size_t>(r.activity[i]))),
                               r.samples[i][0], r.samples[i][1], r.samples[i][2], i);
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

/// Canonical CSV files in `dir`, sorted by name.
inline std::vector<std::filesystem::path> canonical_files(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    for (auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Windows every recording and stacks the result in input order.
inline WindowedDataset windows_from_recordings(const std::vector<RawRecording>& recs, const DatasetSchema& schema,
                                               std::size_t length = 100, std::size_t step = 60) {
    std::vector<Window> all;
    for (auto& r : recs) {
        auto w = window_slide(r, length, step);
        std::move(w.begin(), w.end(), std::back_inserter(all));
    }
    auto ds = assemble(all, schema.activities, schema.placements);
    ds.length = length;
    return ds;
}

// ---------------------------------------------------------------------------
// Adapters

struct AdapterOutput {
    std::vector<std::filesystem::path> files;
    std::filesystem::path metadata;
};

namespace detail {

inline void require_present(const std::vector<std::filesystem::path>& expected, const std::string& what) {
    std::vector<std::string> missing;
    for (auto& p : expected)
        if (!std::filesystem::exists(p)) missing.push_back(p.string());
    if (missing.empty()) return;
    std::string msg = what + ": " + std::to_string(missing.size()) + " missing file(s):";
    for (auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline void write_metadata(const std::filesystem::path& path, const DatasetSchema& schema,
                           const std::map<std::string, double>& rates, const std::vector<std::string>& sources) {
    nlohmann::ordered_json j;
    j["kind"] = schema.kind;
    j["units"] = "g";
    j["sampling_rate_hz"] = rates;
    j["activities"] = schema.activities;
    j["placements"] = schema.placements;
    j["sources"] = sources;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline float to_g(float ms2) { return static_cast<float>(static_cast<double>(ms2) / standard_gravity); }

}  // namespace detail

/// MHealth logs (mHealth_subject<k>.log, 24 whitespace-separated columns):
/// keeps the chest, right-wrist and left-ankle accelerometers and the label
/// column. Rows labelled 0 map to "Null".
inline AdapterOutput adapt_mhealth(const std::filesystem::path& root, const std::filesystem::path& out_dir,
                                   std::vector<int> subjects = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) {
    auto schema = mhealth_schema();
    std::vector<std::filesystem::path> inputs;
    for (int s : subjects) inputs.push_back(root / ("mHealth_subject" + std::to_string(s) + ".log"));
    detail::require_present(inputs, "MHealth");
    std::filesystem::create_directories(out_dir);
    // 0-based columns: chest 0-2, ankle 5-7, wrist 14-16, label 23
    const std::array<std::pair<int, std::size_t>, 3> cols = {{{0, 0}, {1, 14}, {2, 5}}};
    AdapterOutput res;
    std::vector<std::string> sources;
    for (std::size_t k = 0; k < subjects.size(); ++k) {
        std::ifstream in(inputs[k]);
        if (!in) throw IoError("cannot open " + inputs[k].string());
        std::vector<RawRecording> recs(3);
        for (auto [pl, c] : cols) {
            recs[static_cast<std::size_t>(pl)].subject_id = "subject" + std::to_string(subjects[k]);
            recs[static_cast<std::size_t>(pl)].placement = pl;
        }
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto f = detail::split_ws(line);
            if (f.empty()) continue;
            if (f.size() != 24) {
                throw DataError(inputs[k].string() + ": line " + std::to_string(lineno) + ": expected 24 columns, got " +
                                std::to_string(f.size()));
            }
            int label = csv::number<int>(f[23], lineno, "label");
            if (label < 0 || label >= static_cast<int>(schema.activities.size())) {
                throw DataError(inputs[k].string() + ": line " + std::to_string(lineno) + ": label " +
                                std::to_string(label) + " outside 0..12");
            }
            for (auto [pl, c] : cols) {
                auto& r = recs[static_cast<std::size_t>(pl)];
                r.samples.push_back({detail::to_g(csv::number<float>(f[c], lineno, "acceleration")),
                                     detail::to_g(csv::number<float>(f[c + 1], lineno, "acceleration")),
                                     detail::to_g(csv::number<float>(f[c + 2], lineno, "acceleration"))});
                r.activity.push_back(label);
            }
        }
        auto out = out_dir / ("mhealth_subject" + std::to_string(subjects[k]) + ".csv");
        write_canonical_csv(out, recs, schema);
        res.files.push_back(out);
        sources.push_back(inputs[k].filename().string());
    }
    res.metadata = out_dir / "mhealth_meta.json";
    detail::write_metadata(res.metadata, schema, {{"chest", 50.0}, {"wrist", 50.0}, {"ankle", 50.0}}, sources);
    return res;
}

/// WISDM raw accelerometer files (raw/{phone,watch}/accel/data_<id>_accel_<dev>.txt,
/// rows "id,code,timestamp,x,y,z;"). Activity codes A..S skip N.
inline AdapterOutput adapt_wisdm(const std::filesystem::path& root, const std::filesystem::path& out_dir,
                                 bool phone_only = false) {
    auto schema = wisdm_schema(phone_only);
    std::filesystem::path raw = root / "raw";
    if (!std::filesystem::is_directory(raw) && std::filesystem::is_directory(root / "wisdm-dataset" / "raw")) {
        raw = root / "wisdm-dataset" / "raw";
    }
    const std::vector<std::string> devices = phone_only ? std::vector<std::string>{"phone"}
                                                        : std::vector<std::string>{"phone", "watch"};
    std::set<int> ids;
    for (auto& d : devices) {
        auto dir = raw / d / "accel";
        if (!std::filesystem::is_directory(dir)) continue;
        for (auto& e : std::filesystem::directory_iterator(dir)) {
            auto name = e.path().filename().string();
            if (name.rfind("data_", 0) == 0) ids.insert(std::atoi(name.c_str() + 5));
        }
    }
    if (ids.empty()) {
        detail::require_present({raw / "phone" / "accel" / "data_1600_accel_phone.txt"}, "WISDM");
    }
    std::vector<std::filesystem::path> expected;
    for (int id : ids)
        for (auto& d : devices)
            expected.push_back(raw / d / "accel" / ("data_" + std::to_string(id) + "_accel_" + d + ".txt"));
    detail::require_present(expected, "WISDM");

    const std::string codes = "ABCDEFGHIJKLMOPQRS";
    std::filesystem::create_directories(out_dir);
    AdapterOutput res;
    std::vector<std::string> sources;
    std::size_t e = 0;
    for (int id : ids) {
        std::vector<RawRecording> recs;
        for (std::size_t d = 0; d < devices.size(); ++d, ++e) {
            RawRecording r;
            r.subject_id = std::to_string(id);
            r.placement = static_cast<int>(d);
            std::ifstream in(expected[e]);
            if (!in) throw IoError("cannot open " + expected[e].string());
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                while (!line.empty() && (line.back() == ';' || line.back() == '\r' || line.back() == ' ')) line.pop_back();
                if (line.empty()) continue;
                auto f = csv::split_row(line, lineno);
                if (f.size() != 6) {
                    throw DataError(expected[e].string() + ": line " + std::to_string(lineno) + ": expected 6 fields");
                }
                auto pos = f[1].size() == 1 ? codes.find(f[1][0]) : std::string::npos;
                if (pos == std::string::npos) {
                    throw DataError(expected[e].string() + ": line " + std::to_string(lineno) + ": unknown activity code '" +
                                    f[1] + "'; valid: A-S without N");
                }
                r.samples.push_back({detail::to_g(csv::number<float>(f[3], lineno, "x")),
                                     detail::to_g(csv::number<float>(f[4], lineno, "y")),
                                     detail::to_g(csv::number<float>(f[5], lineno, "z"))});
                r.activity.push_back(static_cast<int>(pos));
            }
            recs.push_back(std::move(r));
            sources.push_back(std::filesystem::relative(expected[e], raw).string());
        }
        auto out = out_dir / ("wisdm_" + std::to_string(id) + ".csv");
        write_canonical_csv(out, recs, schema);
        res.files.push_back(out);
    }
    std::map<std::string, double> rates;
    for (auto& p : schema.placements) rates[p] = 20.0;
    res.metadata = out_dir / "wisdm_meta.json";
    detail::write_metadata(res.metadata, schema, rates, sources);
    return res;
}

/// Sleep posture files laid out as <root>/<placement>/<subject>_<ABBR>.csv,
/// each holding x,y,z columns in g with an optional header row.
inline AdapterOutput adapt_sleep(const std::filesystem::path& root, const std::filesystem::path& out_dir) {
    auto schema = sleep_schema();
    std::vector<std::filesystem::path> dirs;
    for (auto& p : schema.placements) dirs.push_back(root / p);
    detail::require_present(dirs, "Sleep");

    // subject -> placement -> posture -> file
    std::map<std::string, std::map<int, std::map<int, std::filesystem::path>>> files;
    for (std::size_t pl = 0; pl < dirs.size(); ++pl) {
        for (auto& e : std::filesystem::directory_iterator(dirs[pl])) {
            if (e.path().extension() != ".csv") continue;
            auto stem = e.path().stem().string();
            auto us = stem.rfind('_');
            if (us == std::string::npos) continue;
            auto abbr = stem.substr(us + 1);
            int posture = -1;
            for (std::size_t k = 0; k < sleep_postures().size(); ++k)
                if (sleep_postures()[k].second == abbr) posture = static_cast<int>(k);
            if (posture < 0) {
                std::vector<std::string> valid;
                for (auto& [n, a] : sleep_postures()) valid.push_back(a);
                throw DataError(e.path().string() + ": unknown posture '" + abbr + "'; valid: " + csv::join_names(valid));
            }
            files[stem.substr(0, us)][static_cast<int>(pl)][posture] = e.path();
        }
    }
    if (files.empty()) throw IoError("Sleep: no <subject>_<posture>.csv files under " + root.string());

    std::filesystem::create_directories(out_dir);
    AdapterOutput res;
    std::vector<std::string> sources;
    for (auto& [subject, by_pl] : files) {
        std::vector<RawRecording> recs;
        for (auto& [pl, by_posture] : by_pl)
            for (auto& [posture, path] : by_posture) {
                RawRecording r;
                r.subject_id = subject;
                r.placement = pl;
                std::ifstream in(path);
                if (!in) throw IoError("cannot open " + path.string());
                std::string line;
                std::size_t lineno = 0;
                while (std::getline(in, line)) {
                    ++lineno;
                    if (!line.empty() && line.back() == '\r') line.pop_back();
                    if (line.empty()) continue;
                    auto f = csv::split_row(line, lineno);
                    if (lineno == 1 && !f.empty() && !f[0].empty() && std::isalpha(static_cast<unsigned char>(f[0][0]))) continue;
                    if (f.size() < 3) throw DataError(path.string() + ": line " + std::to_string(lineno) + ": expected x,y,z");
                    r.samples.push_back({csv::number<float>(f[0], lineno, "x"), csv::number<float>(f[1], lineno, "y"),
                                         csv::number<float>(f[2], lineno, "z")});
                    r.activity.push_back(posture);
                }
                recs.push_back(std::move(r));
                sources.push_back(std::filesystem::relative(path, root).string());
            }
        auto out = out_dir / ("sleep_" + subject + ".csv");
        write_canonical_csv(out, recs, schema);
        res.files.push_back(out);
    }
    res.metadata = out_dir / "sleep_meta.json";
    detail::write_metadata(res.metadata, schema, {{"chest", 50.0}, {"neck", 50.0}, {"abdomen", 50.0}}, sources);
    return res;
}

inline AdapterOutput adapt_public_dataset(std::string_view kind, const std::filesystem::path& root,
                                          const std::filesystem::path& out_dir) {
    if (kind == "mhealth") return adapt_mhealth(root, out_dir);
    if (kind == "wisdm") return adapt_wisdm(root, out_dir, false);
    if (kind == "wisdm-phone") return adapt_wisdm(root, out_dir, true);
    if (kind == "sleep") return adapt_sleep(root, out_dir);
    throw ConfigError("unknown dataset kind '" + std::string(kind) + "'");
}

/// Reads every canonical CSV in `dir` and windows it.
inline WindowedDataset load_canonical_dir(const std::filesystem::path& dir, const DatasetSchema& schema,
                                          std::size_t length = 100, std::size_t step = 60) {
    std::vector<RawRecording> recs;
    for (auto& f : canonical_files(dir)) {
        auto r = ingest_csv(f, schema);
        std::move(r.begin(), r.end(), std::back_inserter(recs));
    }
    return windows_from_recordings(recs, schema, length, step);
}

}  // namespace sdistill
