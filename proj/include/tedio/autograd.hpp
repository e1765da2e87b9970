#pragma once

#include <algorithm>
#include <functional>
#include <unordered_map>
#include <vector>

#include "tedio/tensor.hpp"

namespace tedio {

/// Backward working buffers, one per tape node, allocated lazily.
template <class T>
class Grads {
public:
    explicit Grads(size_t n) : bufs_(n) {}
    // get-or-create a zeroed buffer of n elements
    T* get(int64_t id, int64_t n) {
        auto& b = bufs_[static_cast<size_t>(id)];
        if (b.empty()) b.assign(static_cast<size_t>(n), T(0));
        return b.data();
    }
    std::vector<T>& buf(int64_t id) { return bufs_[static_cast<size_t>(id)]; }
    bool seeded(int64_t id) const { return !bufs_[static_cast<size_t>(id)].empty(); }

private:
    std::vector<std::vector<T>> bufs_;
};

template <class T>
struct GradMapT {
    std::unordered_map<int64_t, TensorT<T>> by_id;

    const TensorT<T>& at(const TensorT<T>& leaf) const {
        auto it = by_id.find(leaf.tape_id);
        if (leaf.tape_id < 0 || it == by_id.end())
            throw UsageError("gradient map: tensor is not a watched leaf of this tape");
        return it->second;
    }
    bool contains(const TensorT<T>& leaf) const { return by_id.count(leaf.tape_id) > 0; }
};

using GradMap = GradMapT<float>;

/// Append-only reverse-mode tape. One active tape per thread, installed by
/// GradScopeT. Node order is topological by construction (inputs recorded
/// before outputs), and backward() walks it once, in reverse, with
/// insertion-ordered accumulation.
template <class T>
class TapeT {
public:
    using BackwardFn = std::function<void(const std::vector<T>& grad_out, Grads<T>& grads)>;

    struct Node {
        const char* op;
        Shape shape;
        BackwardFn backward;  // empty for leaves
        bool leaf = false;
    };

    TapeT() : epoch_(next_epoch()) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    static TapeT* active() { return active_; }
    uint64_t epoch() const { return epoch_; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

    int64_t record(const char* op, Shape shape, BackwardFn fn) {
        nodes_.push_back(Node{op, std::move(shape), std::move(fn), false});
        return size() - 1;
    }

    /// Register t as a differentiable leaf. Idempotent per tape.
    void watch(TensorT<T>& t) {
        if (t.tape_id >= 0 && t.tape_epoch == epoch_) return;
        nodes_.push_back(Node{"leaf", t.shape, {}, true});
        t.tape_id = size() - 1;
        t.tape_epoch = epoch_;
        t.requires_grad = true;
    }

    /// Attach an op output to this tape.
    void bind(TensorT<T>& out, int64_t id) {
        out.tape_id = id;
        out.tape_epoch = epoch_;
    }

    /// Node id of t on this tape, or -1 when t is a constant here.
    int64_t id_of(const TensorT<T>& t) const {
        return (t.tape_id >= 0 && t.tape_epoch == epoch_) ? t.tape_id : -1;
    }

    GradMapT<T> backward(const TensorT<T>& loss) const {
        if (loss.numel() != 1) throw UsageError("backward: loss must be a scalar");
        const int64_t root = id_of(loss);
        if (root < 0) throw UsageError("backward: loss is detached from the active tape");
        Grads<T> grads(nodes_.size());
        grads.get(root, 1)[0] = T(1);
        for (int64_t id = root; id >= 0; --id) {
            if (!grads.seeded(id)) continue;
            const Node& node = nodes_[static_cast<size_t>(id)];
            if (node.backward) node.backward(grads.buf(id), grads);
        }
        GradMapT<T> out;
        for (int64_t id = 0; id < size(); ++id) {
            const Node& node = nodes_[static_cast<size_t>(id)];
            if (!node.leaf) continue;
            TensorT<T> g(node.shape);
            if (grads.seeded(id)) {
                const auto& buf = grads.buf(id);
                std::copy(buf.begin(), buf.end(), g.data->begin());
            }
            out.by_id.emplace(id, std::move(g));
        }
        return out;
    }

    // instrumentation: transformer blocks recorded under this tape
    int64_t recorded_blocks = 0;

private:
    static uint64_t next_epoch();

    std::vector<Node> nodes_;
    uint64_t epoch_;

    static thread_local TapeT* active_;
    template <class U>
    friend class GradScopeT;
};

/// RAII scope that makes a fresh tape active on this thread. Ops outside
/// any scope run non-differentiably at full speed.
template <class T>
class GradScopeT {
public:
    GradScopeT() : prev_(TapeT<T>::active_) { TapeT<T>::active_ = &tape_; }
    ~GradScopeT() { TapeT<T>::active_ = prev_; }
    GradScopeT(const GradScopeT&) = delete;
    GradScopeT& operator=(const GradScopeT&) = delete;

    TapeT<T>& tape() { return tape_; }
    void watch(TensorT<T>& t) { tape_.watch(t); }
    GradMapT<T> backward(const TensorT<T>& loss) { return tape_.backward(loss); }

private:
    TapeT<T> tape_;
    TapeT<T>* prev_;
};

using GradScope = GradScopeT<float>;

/// Central finite differences, the project-wide gradient oracle.
template <class T>
TensorT<T> finite_diff_gradient(const std::function<T(const TensorT<T>&)>& f, const TensorT<T>& x,
                                T step) {
    TensorT<T> g(x.shape);
    TensorT<T> probe = x.clone();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T saved = (*probe.data)[i];
        (*probe.data)[i] = saved + step;
        const T hi = f(probe);
        (*probe.data)[i] = saved - step;
        const T lo = f(probe);
        (*probe.data)[i] = saved;
        (*g.data)[i] = (hi - lo) / (T(2) * step);
    }
    return g;
}

extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace tedio
