#pragma once

// Checkpoint container:
//   "SDISTCKP" | u32 version | u32 header bytes | JSON header | f32 payload
// The header carries the role, the model config and an ordered manifest of
// named arrays with shapes. All integers and floats are little-endian.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "data.hpp"
#include "model.hpp"

namespace sdistill {

inline nlohmann::ordered_json to_json(const MTLNetConfig& c) {
    nlohmann::ordered_json j;
    j["window_length"] = c.window_length;
    j["axes"] = c.axes;
    j["num_classes_task1"] = c.num_classes_task1;
    j["num_classes_task2"] = c.num_classes_task2;
    j["stem_channels"] = c.stem_channels;
    auto& b = j["blocks"] = nlohmann::ordered_json::array();
    for (auto& s : c.blocks) b.push_back({s.out_channels, s.kernel_length, s.pool_length});
    j["hidden_width"] = c.hidden_width;
    j["dropout"] = c.dropout;
    return j;
}

inline MTLNetConfig mtlnet_config_from_json(const nlohmann::json& j) {
    MTLNetConfig c;
    c.window_length = j.at("window_length").get<std::size_t>();
    c.axes = j.at("axes").get<std::size_t>();
    c.num_classes_task1 = j.at("num_classes_task1").get<std::size_t>();
    c.num_classes_task2 = j.at("num_classes_task2").get<std::size_t>();
    c.stem_channels = j.value("stem_channels", std::size_t{0});
    c.blocks.clear();
    for (auto& b : j.at("blocks")) c.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
    c.hidden_width = j.at("hidden_width").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

struct CheckpointEntry {
    std::string name;
    Shape shape;
    bool trainable = true;
    std::vector<float> values;
};

struct Checkpoint {
    std::string role;
    nlohmann::json config;
    std::vector<CheckpointEntry> entries;
};

inline constexpr char checkpoint_magic[8] = {'S', 'D', 'I', 'S', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t checkpoint_version = 1;

/// Parameters, then buffers (trainable = false), in state() order.
template <class T>
Checkpoint make_checkpoint(const Model<T>& m, std::string role, nlohmann::json config) {
    Checkpoint c{std::move(role), std::move(config), {}};
    auto params = m.parameters();
    auto state = m.state();
    for (std::size_t i = 0; i < state.size(); ++i) {
        auto v = state[i].tensor.data();
        c.entries.push_back({state[i].name, state[i].tensor.shape(), i < params.size(),
                             std::vector<float>(v.begin(), v.end())});
    }
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    nlohmann::ordered_json h;
    h["role"] = c.role;
    h["config"] = c.config;
    auto& man = h["params"] = nlohmann::ordered_json::array();
    for (auto& e : c.entries) man.push_back({{"name", e.name}, {"shape", e.shape}, {"trainable", e.trainable}});
    const std::string header = h.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(checkpoint_magic, sizeof checkpoint_magic);
    io::put<std::uint32_t>(os, checkpoint_version);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (auto& e : c.entries)
        for (float v : e.values) io::put<float>(os, v);
    if (!os) throw IoError("write failed for " + path.string());
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& m, std::string role, nlohmann::json config) {
    save_checkpoint(path, make_checkpoint(m, std::move(role), std::move(config)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, checkpoint_magic, 8) != 0) {
        throw IoError(path.string() + " is not a checkpoint");
    }
    auto version = io::get<std::uint32_t>(is);
    if (version != checkpoint_version) throw IoError("unsupported checkpoint version " + std::to_string(version));
    auto len = io::get<std::uint32_t>(is);
    std::string header(len, '\0');
    if (!is.read(header.data(), len)) throw IoError("truncated checkpoint header in " + path.string());
    auto h = nlohmann::json::parse(header);
    Checkpoint c;
    c.role = h.at("role").get<std::string>();
    c.config = h.at("config");
    for (auto& p : h.at("params")) {
        CheckpointEntry e;
        e.name = p.at("name").get<std::string>();
        e.shape = p.at("shape").get<Shape>();
        e.trainable = p.at("trainable").get<bool>();
        e.values.resize(numel_of(e.shape));
        for (auto& v : e.values) v = io::get<float>(is);
        c.entries.push_back(std::move(e));
    }
    return c;
}

/// Copies checkpoint values into `m`; names and shapes must match exactly.
template <class T>
void apply_checkpoint(Model<T>& m, const Checkpoint& c) {
    auto state = m.state();
    if (state.size() != c.entries.size()) {
        throw ContractError("checkpoint holds " + std::to_string(c.entries.size()) + " arrays, model has " +
                            std::to_string(state.size()));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        auto& e = c.entries[i];
        if (e.name != state[i].name || e.shape != state[i].tensor.shape()) {
            throw ContractError("checkpoint entry '" + e.name + "' " + shape_str(e.shape) + " does not match '" +
                                state[i].name + "' " + shape_str(state[i].tensor.shape()));
        }
        auto dst = state[i].tensor.mutable_data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(e.values[k]);
    }
}

}  // namespace sdistill
