#pragma once

// Model interface and the dual-head MTL-net CNN.

#include <memory>
#include <string>
#include <vector>

#include "nn.hpp"

namespace sdistill {

/// Common interface for every architecture the trainers can drive. A model
/// produces one logit tensor per head from a shared feature extractor.
template <class T>
class Model {
public:
    virtual ~Model() = default;

    virtual std::size_t num_heads() const = 0;
    /// Task id (1 or 2) served by each head.
    virtual std::vector<int> head_tasks() const = 0;
    virtual std::vector<std::size_t> head_classes() const = 0;
    virtual std::size_t feature_width() const = 0;
    /// Per-sample input shape, e.g. (1, 3, L).
    virtual Shape input_shape() const = 0;

    /// Shared penultimate features, before dropout and heads.
    virtual BasicTensor<T> forward_features(const BasicTensor<T>& x, Mode mode) = 0;
    virtual BasicTensor<T> head(std::size_t k, const BasicTensor<T>& features) const = 0;
    /// Logits of every head. Train mode applies dropout with `rng`.
    virtual std::vector<BasicTensor<T>> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) = 0;

    /// Trainable tensors in a fixed order.
    virtual std::vector<NamedTensor<T>> parameters() const = 0;
    /// Non-trainable state (batch-norm running statistics).
    virtual std::vector<NamedTensor<T>> buffers() const = 0;

    virtual std::unique_ptr<Model> clone() const = 0;

    std::vector<NamedTensor<T>> state() const {
        auto s = parameters();
        auto b = buffers();
        s.insert(s.end(), b.begin(), b.end());
        return s;
    }

    /// Index of the head serving `task`, or -1.
    int head_for_task(int task) const {
        auto t = head_tasks();
        for (std::size_t k = 0; k < t.size(); ++k)
            if (t[k] == task) return static_cast<int>(k);
        return -1;
    }
};

/// Values of every parameter and buffer, in state() order.
template <class T>
using StateSnapshot = std::vector<std::vector<T>>;

template <class T>
StateSnapshot<T> snapshot(const Model<T>& m) {
    StateSnapshot<T> out;
    for (auto& nt : m.state()) out.emplace_back(nt.tensor.data().begin(), nt.tensor.data().end());
    return out;
}

template <class T>
void restore(Model<T>& m, const StateSnapshot<T>& s) {
    auto st = m.state();
    if (st.size() != s.size()) throw ContractError("snapshot does not match model state layout");
    for (std::size_t i = 0; i < st.size(); ++i) {
        auto dst = st[i].tensor.mutable_data();
        if (dst.size() != s[i].size()) throw ContractError("snapshot size mismatch for '" + st[i].name + "'");
        std::copy(s[i].begin(), s[i].end(), dst.begin());
    }
}

/// Copies parameter and buffer values from `src` into `dst`.
template <class T>
void copy_state(Model<T>& dst, const Model<T>& src) {
    auto d = dst.state();
    auto s = src.state();
    if (d.size() != s.size()) throw ContractError("models are not shape-congruent");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i].tensor.shape() != s[i].tensor.shape()) {
            throw ContractError("shape mismatch for '" + d[i].name + "': " + shape_str(d[i].tensor.shape()) +
                                " vs " + shape_str(s[i].tensor.shape()));
        }
        auto sv = s[i].tensor.data();
        std::copy(sv.begin(), sv.end(), d[i].tensor.mutable_data().begin());
    }
}

template <class T>
void set_trainable(Model<T>& m, bool on) {
    for (auto& p : m.parameters()) p.tensor.set_requires_grad(on);
}

template <class T>
std::size_t count_parameters(const Model<T>& m) {
    std::size_t n = 0;
    for (auto& p : m.parameters()) n += p.tensor.numel();
    return n;
}

// ---------------------------------------------------------------------------
// MTL-net

struct ConvBlockSpec {
    std::size_t out_channels = 32;
    std::size_t kernel_length = 5;
    std::size_t pool_length = 2;
    bool operator==(const ConvBlockSpec&) const = default;
};

/// Which classification heads a network carries.
enum class Heads { dual, task1, task2 };

struct MTLNetConfig {
    std::size_t window_length = 100;
    std::size_t axes = 3;
    std::size_t num_classes_task1 = 12;
    std::size_t num_classes_task2 = 3;
    /// Optional (axes x 1) projection that mixes the axis rows into channels
    /// before the blocks; 0 keeps the rows separate.
    std::size_t stem_channels = 0;
    std::vector<ConvBlockSpec> blocks = {{32, 5, 2}, {64, 5, 2}, {128, 5, 2}};
    std::size_t hidden_width = 256;
    double dropout = 0.3;

    bool operator==(const MTLNetConfig&) const = default;

    std::size_t trunk_rows() const { return stem_channels ? 1 : axes; }

    /// Time length after every block (the last entry is the flattened length).
    std::vector<std::size_t> time_lengths() const {
        std::vector<std::size_t> out{window_length};
        std::size_t t = window_length;
        for (auto& b : blocks) {
            std::size_t pad = (b.kernel_length - 1) / 2;
            if (b.kernel_length == 0 || b.kernel_length > t + 2 * pad) return {};
            t = t + 2 * pad - b.kernel_length + 1;
            if (b.pool_length == 0 || b.pool_length > t) return {};
            t = (t - b.pool_length) / b.pool_length + 1;
            out.push_back(t);
        }
        return out;
    }

    std::size_t trunk_channels() const {
        return blocks.empty() ? (stem_channels ? stem_channels : 1) : blocks.back().out_channels;
    }

    std::size_t flat_width() const { return trunk_channels() * trunk_rows() * time_lengths().back(); }

    void validate() const {
        if (window_length == 0 || axes == 0) throw ConfigError("window length and axis count must be positive");
        if (num_classes_task1 < 2 || num_classes_task2 < 2) throw ConfigError("each task needs at least 2 classes");
        if (hidden_width == 0) throw ConfigError("hidden width must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
        for (auto& b : blocks)
            if (b.out_channels == 0) throw ConfigError("conv block with zero output channels");
        auto t = time_lengths();
        if (t.empty() || t.back() < 1) {
            throw ConfigError("window length " + std::to_string(window_length) + " is too short for the conv trunk");
        }
    }
};

/// Trainable scalar count of an MTL-net built from `cfg`.
inline std::size_t param_count(const MTLNetConfig& cfg, Heads heads = Heads::dual) {
    cfg.validate();
    std::size_t n = 0;
    std::size_t in = 1;
    if (cfg.stem_channels) {
        n += cfg.stem_channels * cfg.axes + cfg.stem_channels;
        in = cfg.stem_channels;
    }
    for (auto& b : cfg.blocks) {
        n += b.out_channels * in * b.kernel_length + b.out_channels;  // conv
        n += 2 * b.out_channels;                                       // batch-norm affine
        in = b.out_channels;
    }
    n += cfg.flat_width() * cfg.hidden_width + cfg.hidden_width;
    if (heads != Heads::task2) n += cfg.hidden_width * cfg.num_classes_task1 + cfg.num_classes_task1;
    if (heads != Heads::task1) n += cfg.hidden_width * cfg.num_classes_task2 + cfg.num_classes_task2;
    return n;
}

template <class T>
class MTLNet final : public Model<T> {
public:
    MTLNet(const MTLNetConfig& cfg, Heads heads = Heads::dual)
        : cfg_(cfg), heads_(heads), dense_(1, 1), dropout_(cfg.dropout) {
        cfg_.validate();
        std::size_t in = 1;
        if (cfg_.stem_channels) {
            stem_.emplace_back(1, cfg_.stem_channels, Window2{cfg_.axes, 1});
            in = cfg_.stem_channels;
        }
        for (auto& b : cfg_.blocks) {
            std::size_t pad = (b.kernel_length - 1) / 2;
            convs_.emplace_back(in, b.out_channels, Window2{1, b.kernel_length}, Window2{1, 1}, Window2{0, pad});
            norms_.emplace_back(b.out_channels);
            in = b.out_channels;
        }
        dense_ = Linear<T>(cfg_.flat_width(), cfg_.hidden_width);
        if (heads_ != Heads::task2) heads_layers_.emplace_back(cfg_.hidden_width, cfg_.num_classes_task1);
        if (heads_ != Heads::task1) heads_layers_.emplace_back(cfg_.hidden_width, cfg_.num_classes_task2);
    }

    // Copies would alias parameter storage; use clone() instead.
    MTLNet(const MTLNet&) = delete;
    MTLNet& operator=(const MTLNet&) = delete;
    MTLNet(MTLNet&&) = default;
    MTLNet& operator=(MTLNet&&) = default;

    /// Kaiming-uniform weights, zero biases, unit gamma and zero beta.
    void init(Rng& rng) {
        for (auto& s : stem_) s.init(rng);
        for (auto& c : convs_) c.init(rng);
        dense_.init(rng);
        for (auto& h : heads_layers_) h.init(rng);
    }

    const MTLNetConfig& config() const { return cfg_; }
    Heads heads() const { return heads_; }

    std::size_t num_heads() const override { return heads_layers_.size(); }
    std::vector<int> head_tasks() const override {
        switch (heads_) {
            case Heads::dual: return {1, 2};
            case Heads::task1: return {1};
            case Heads::task2: return {2};
        }
        return {};
    }
    std::vector<std::size_t> head_classes() const override {
        std::vector<std::size_t> out;
        for (auto& h : heads_layers_) out.push_back(h.out_features());
        return out;
    }
    std::size_t feature_width() const override { return cfg_.hidden_width; }
    Shape input_shape() const override { return {1, cfg_.axes, cfg_.window_length}; }

    BasicTensor<T> forward_features(const BasicTensor<T>& x, Mode mode) override {
        check_input(x);
        BasicTensor<T> h = x;
        for (auto& s : stem_) h = s.forward(h);
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = convs_[i].forward(h);
            h = norms_[i].forward(h, mode);
            h = relu(h);
            std::size_t p = cfg_.blocks[i].pool_length;
            h = maxpool2d(h, Window2{1, p}, Window2{1, p});
        }
        return relu(dense_.forward(flatten(h)));
    }

    BasicTensor<T> head(std::size_t k, const BasicTensor<T>& features) const override {
        if (k >= heads_layers_.size()) throw ContractError("head index " + std::to_string(k) + " out of range");
        return heads_layers_[k].forward(features);
    }

    std::vector<BasicTensor<T>> forward(const BasicTensor<T>& x, Mode mode, Rng* rng) override {
        auto f = dropout_.forward(forward_features(x, mode), mode, rng);
        std::vector<BasicTensor<T>> out;
        for (std::size_t k = 0; k < heads_layers_.size(); ++k) out.push_back(head(k, f));
        return out;
    }

    std::vector<NamedTensor<T>> parameters() const override {
        std::vector<NamedTensor<T>> p;
        for (auto& s : stem_) {
            p.push_back({"stem.weight", s.weight});
            p.push_back({"stem.bias", s.bias});
        }
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            std::string b = "block" + std::to_string(i);
            p.push_back({b + ".conv.weight", convs_[i].weight});
            p.push_back({b + ".conv.bias", convs_[i].bias});
            p.push_back({b + ".bn.gamma", norms_[i].gamma});
            p.push_back({b + ".bn.beta", norms_[i].beta});
        }
        p.push_back({"dense.weight", dense_.weight});
        p.push_back({"dense.bias", dense_.bias});
        auto tasks = head_tasks();
        for (std::size_t k = 0; k < heads_layers_.size(); ++k) {
            std::string h = "head" + std::to_string(tasks[k]);
            p.push_back({h + ".weight", heads_layers_[k].weight});
            p.push_back({h + ".bias", heads_layers_[k].bias});
        }
        return p;
    }

    std::vector<NamedTensor<T>> buffers() const override {
        std::vector<NamedTensor<T>> b;
        for (std::size_t i = 0; i < norms_.size(); ++i) {
            std::string n = "block" + std::to_string(i) + ".bn.";
            b.push_back({n + "running_mean", norms_[i].running_mean});
            b.push_back({n + "running_var", norms_[i].running_var});
        }
        return b;
    }

    std::unique_ptr<Model<T>> clone() const override {
        auto m = std::make_unique<MTLNet>(cfg_, heads_);
        copy_state<T>(*m, *this);
        auto src = parameters();
        auto dst = m->parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor.set_requires_grad(src[i].tensor.requires_grad());
        return m;
    }

    /// Single-head variant serving `task` with the same trunk.
    static MTLNet single_head(const MTLNetConfig& cfg, int task) {
        return MTLNet(cfg, task == 1 ? Heads::task1 : Heads::task2);
    }

private:
    void check_input(const BasicTensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.axes || x.dim(3) != cfg_.window_length) {
            throw ShapeError("MTL-net expects input (N, 1, " + std::to_string(cfg_.axes) + ", " +
                             std::to_string(cfg_.window_length) + "), got " + shape_str(x.shape()));
        }
    }

    MTLNetConfig cfg_;
    Heads heads_;
    std::vector<Conv2D<T>> stem_;
    std::vector<Conv2D<T>> convs_;
    std::vector<BatchNorm2D<T>> norms_;
    Linear<T> dense_;
    std::vector<Linear<T>> heads_layers_;
    Dropout<T> dropout_;
};

/// Paired logits of the two task heads for the same batch rows.
template <class T>
struct DualLogits {
    BasicTensor<T> z1, z2;
};

template <class T>
DualLogits<T> mtlnet_forward(MTLNet<T>& net, const BasicTensor<T>& x, Mode mode, Rng* rng) {
    if (net.heads() != Heads::dual) throw ContractError("mtlnet_forward needs a dual-head network");
    auto z = net.forward(x, mode, rng);
    return {z[0], z[1]};
}

}  // namespace sdistill
