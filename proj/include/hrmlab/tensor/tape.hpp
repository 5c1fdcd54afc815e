#pragma once

#include "hrmlab/kernels/kernels.hpp"
#include "hrmlab/tensor/tensor.hpp"

#include <functional>
#include <unordered_map>

namespace hrmlab {

// Per-backward-call adjoint storage, keyed by tensor storage. Adjoints stay
// out of Tensor::grad until the sweep finishes, which is what lets repeated
// backward() calls accumulate cleanly.
template <class S>
class AdjointMap {
public:
    std::vector<S>* lookup(const TensorData<S>* td) {
        auto it = m_.find(td);
        return it == m_.end() ? nullptr : &it->second.val;
    }

    // Adjoint buffer for td, zero-initialized on first touch.
    std::vector<S>& accum(const std::shared_ptr<TensorData<S>>& td) {
        auto& e = m_[td.get()];
        if (!e.keep) {
            e.keep = td;
            e.val.assign(td->values.size(), S(0));
        }
        return e.val;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        for (auto& [ptr, e] : m_) fn(e.keep, e.val);
    }

private:
    struct Entry {
        std::shared_ptr<TensorData<S>> keep;
        std::vector<S> val;
    };
    std::unordered_map<const TensorData<S>*, Entry> m_;
};

// Records primitive applications in execution order. Replaying the records
// backward visits the graph in reverse topological order. A tape is confined
// to a single thread.
template <class S>
class Tape {
public:
    using BackwardFn = std::function<void(AdjointMap<S>&)>;

    bool recording() const { return recording_; }
    void set_recording(bool v) { recording_ = v; }

    size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void push_node(BackwardFn fn) { nodes_.push_back(std::move(fn)); }

    // Accumulates d(loss)/d(leaf) into .grad of every requires_grad tensor
    // reachable from loss. Repeated calls accumulate.
    void backward(const Tensor<S>& loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ShapeError("backward: loss must be a defined scalar tensor");
        AdjointMap<S> adj;
        adj.accum(loss.raw())[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(adj);
        adj.for_each([](const std::shared_ptr<TensorData<S>>& td, const std::vector<S>& a) {
            if (!td->requires_grad) return;
            if (td->grad.empty()) td->grad.assign(td->values.size(), S(0));
            kernels::add(td->grad.data(), a.data(), td->grad.data(), a.size());
        });
    }

private:
    std::vector<BackwardFn> nodes_;
    bool recording_ = true;
};

// Temporarily disables recording on a tape; restores the previous state, so
// scopes nest.
template <class S>
class NoGradScope {
public:
    explicit NoGradScope(Tape<S>& tape) : tape_(tape), prev_(tape.recording()) { tape_.set_recording(false); }
    ~NoGradScope() { tape_.set_recording(prev_); }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<S>& tape_;
    bool prev_;
};

} // namespace hrmlab
