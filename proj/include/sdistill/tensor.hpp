#pragma once

// Dense row-major tensors with a define-by-run gradient tape.
//
// A BasicTensor is a cheap handle onto shared storage. Operations never
// modify their inputs; they allocate a new output and, when a Tape is active
// on the calling thread and at least one input is tracked, append a node to
// that tape. Parameters are leaves: tensors with requires_grad() set that
// were not produced by a recorded operation.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace sdistill {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

template <class T>
class BasicTensor {
    struct Impl {
        Shape shape;
        std::shared_ptr<std::vector<T>> storage;
        bool requires_grad = false;
    };

public:
    using value_type = T;

    BasicTensor() : BasicTensor(Shape{0}, std::vector<T>{}) {}

    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<Impl>()) {
        if (numel_of(shape) != data.size()) {
            throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        }
        impl_->shape = std::move(shape);
        impl_->storage = std::make_shared<std::vector<T>>(std::move(data));
        impl_->requires_grad = requires_grad;
    }

    static BasicTensor zeros(Shape shape) {
        std::vector<T> data(numel_of(shape), T(0));
        return BasicTensor(std::move(shape), std::move(data));
    }
    static BasicTensor full(Shape shape, T value) {
        std::vector<T> data(numel_of(shape), value);
        return BasicTensor(std::move(shape), std::move(data));
    }
    static BasicTensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) {
            throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape()));
        }
        return impl_->shape[axis];
    }
    std::size_t numel() const { return impl_->storage->size(); }

    std::span<const T> data() const { return {impl_->storage->data(), impl_->storage->size()}; }

    /// In-place access for optimizers, EMA updates and checkpoint loading.
    /// Every handle sharing this storage observes the change.
    std::span<T> mutable_data() { return {impl_->storage->data(), impl_->storage->size()}; }

    T operator[](std::size_t i) const { return (*impl_->storage)[i]; }

    T item() const {
        if (numel() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        }
        return (*impl_->storage)[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    /// Identity of this tensor node (not of its storage).
    const void* id() const { return impl_.get(); }

    /// Same values, new identity, never tracked.
    BasicTensor detach() const {
        BasicTensor out(*this, nullptr);
        return out;
    }

    /// Same storage viewed with another shape (no tape involvement).
    BasicTensor view(Shape shape) const {
        if (numel_of(shape) != numel()) {
            throw ShapeError("cannot view " + shape_str(this->shape()) + " as " + shape_str(shape));
        }
        BasicTensor out(*this, nullptr);
        out.impl_->shape = std::move(shape);
        return out;
    }

    /// Deep copy with fresh storage.
    BasicTensor clone() const {
        return BasicTensor(shape(), std::vector<T>(data().begin(), data().end()), requires_grad());
    }

    bool same_values(const BasicTensor& other) const {
        return shape() == other.shape() &&
               std::equal(data().begin(), data().end(), other.data().begin());
    }

private:
    template <class U>
    friend class Tape;

    BasicTensor(const BasicTensor& src, std::nullptr_t) : impl_(std::make_shared<Impl>()) {
        impl_->shape = src.impl_->shape;
        impl_->storage = src.impl_->storage;
    }

    std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;

template <class T>
class Tape;

/// Gradients produced by Tape::backward, keyed by leaf identity.
template <class T>
class GradMap {
public:
    const BasicTensor<T>* find(const BasicTensor<T>& leaf) const {
        auto it = grads_.find(leaf.id());
        return it == grads_.end() ? nullptr : &it->second;
    }
    const BasicTensor<T>& at(const BasicTensor<T>& leaf) const {
        auto* g = find(leaf);
        if (!g) throw ContractError("no gradient recorded for the requested leaf tensor");
        return *g;
    }
    bool contains(const BasicTensor<T>& leaf) const { return grads_.count(leaf.id()) != 0; }
    std::size_t size() const { return grads_.size(); }

private:
    friend class Tape<T>;
    std::unordered_map<const void*, BasicTensor<T>> grads_;
};

/// Backward closure: receives d(loss)/d(output) and one span per input to
/// accumulate into. Spans of untracked inputs are empty.
template <class T>
using BackwardFn = std::function<void(std::span<const T>, std::span<std::span<T>>)>;

/// Ordered record of executed operations on one thread. Nodes are appended in
/// execution order, so every node's inputs precede it.
template <class T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Active tape for the calling thread, or nullptr.
    static Tape*& current() {
        thread_local Tape* active = nullptr;
        return active;
    }

    bool tracks(const BasicTensor<T>& t) const {
        return slot_.count(t.id()) != 0 || t.requires_grad();
    }

    /// Appends a node producing `out` from `inputs` if any input is tracked.
    /// Returns `out`, marked as tracked when recorded.
    BasicTensor<T> record(BasicTensor<T> out, std::initializer_list<BasicTensor<T>> inputs,
                          BackwardFn<T> backward) {
        bool any = false;
        for (const auto& in : inputs) any = any || tracks(in);
        if (!any) return out;
        if (done_) {
            throw ContractError("tape already consumed by backward(); call reset() first");
        }
        Node node;
        node.inputs.reserve(inputs.size());
        for (const auto& in : inputs) node.inputs.push_back(tracks(in) ? slot_for(in) : -1);
        node.output = new_slot(out, false);
        node.backward = std::move(backward);
        nodes_.push_back(std::move(node));
        return out;
    }

    std::size_t num_nodes() const { return nodes_.size(); }
    std::size_t num_leaves() const {
        return static_cast<std::size_t>(std::count(is_leaf_.begin(), is_leaf_.end(), true));
    }

    /// Reverse accumulation from a scalar loss. Each registered leaf receives
    /// a gradient of its own shape (zeros when unreachable).
    GradMap<T> backward(const BasicTensor<T>& loss) {
        if (loss.numel() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " +
                                shape_str(loss.shape()));
        }
        auto it = slot_.find(loss.id());
        if (it == slot_.end() || is_leaf_[it->second]) {
            throw ContractError("backward() on a loss that was not produced on this tape");
        }
        if (done_) {
            throw ContractError("backward() called twice on the same tape without reset()");
        }
        done_ = true;

        grads_.assign(tensors_.size(), {});
        grads_[it->second].assign(1, T(1));
        std::vector<std::span<T>> gin;
        for (auto n = nodes_.rbegin(); n != nodes_.rend(); ++n) {
            auto& gout = grads_[n->output];
            if (gout.empty()) continue;
            gin.clear();
            for (int s : n->inputs) {
                if (s < 0) {
                    gin.emplace_back();
                    continue;
                }
                auto& g = grads_[s];
                if (g.empty()) g.assign(tensors_[s].numel(), T(0));
                gin.emplace_back(g.data(), g.size());
            }
            n->backward(std::span<const T>(gout.data(), gout.size()),
                        std::span<std::span<T>>(gin.data(), gin.size()));
            // intermediate gradients are no longer needed once propagated
            std::vector<T>().swap(gout);
        }

        GradMap<T> out;
        for (std::size_t s = 0; s < tensors_.size(); ++s) {
            if (!is_leaf_[s]) continue;
            auto& g = grads_[s];
            if (g.empty()) g.assign(tensors_[s].numel(), T(0));
            out.grads_.emplace(tensors_[s].id(), BasicTensor<T>(tensors_[s].shape(), std::move(g)));
        }
        grads_.clear();
        return out;
    }

    void reset() {
        nodes_.clear();
        tensors_.clear();
        is_leaf_.clear();
        slot_.clear();
        grads_.clear();
        done_ = false;
    }

private:
    struct Node {
        std::vector<int> inputs;
        int output = -1;
        BackwardFn<T> backward;
    };

    int slot_for(const BasicTensor<T>& t) {
        auto it = slot_.find(t.id());
        if (it != slot_.end()) return it->second;
        return new_slot(t, true);
    }

    int new_slot(const BasicTensor<T>& t, bool leaf) {
        int s = static_cast<int>(tensors_.size());
        tensors_.push_back(t);  // keeps the identity alive for the tape's lifetime
        is_leaf_.push_back(leaf);
        slot_.emplace(t.id(), s);
        return s;
    }

    std::vector<Node> nodes_;
    std::vector<BasicTensor<T>> tensors_;
    std::vector<bool> is_leaf_;
    std::unordered_map<const void*, int> slot_;
    std::vector<std::vector<T>> grads_;
    bool done_ = false;
};

template <class T>
GradMap<T> backward(const BasicTensor<T>& loss, Tape<T>& tape) {
    return tape.backward(loss);
}

/// Makes `tape` the active tape of this thread for the scope's lifetime.
/// Pass nullptr to suspend recording (no-grad region).
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>* tape) : prev_(Tape<T>::current()) { Tape<T>::current() = tape; }
    explicit TapeScope(Tape<T>& tape) : TapeScope(&tape) {}
    ~TapeScope() { Tape<T>::current() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* prev_;
};

template <class T>
struct NoGrad : TapeScope<T> {
    NoGrad() : TapeScope<T>(nullptr) {}
};

/// Records `out` on the active tape when one exists.
template <class T>
BasicTensor<T> record(BasicTensor<T> out, std::initializer_list<BasicTensor<T>> inputs,
                      BackwardFn<T> backward) {
    Tape<T>* tape = Tape<T>::current();
    if (!tape) return out;
    return tape->record(std::move(out), inputs, std::move(backward));
}

template <class T>
struct NamedTensor {
    std::string name;
    BasicTensor<T> tensor;
};

}  // namespace sdistill
