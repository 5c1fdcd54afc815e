#pragma once

// The two-timescale recurrent reasoner: a fast L transformer stack applied
// every micro-step and an optional slow H stack applied once every t
// micro-steps, both post-norm blocks with rotary attention and a gated MLP.
// One segment runs cycles*t micro-steps and ends in prediction logits plus a
// halt/continue Q pair.

#include "hrmlab/model/config.hpp"
#include "hrmlab/tensor/ops.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace hrmlab {

template <class S>
struct BlockParams {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<S> w_gate, b_gate, w_up, b_up, w_down, b_down;
};

template <class S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

// Carried latent state. State handed across a segment boundary is always
// detached; halted samples must be frozen by the caller.
template <class S>
struct LatentState {
    Tensor<S> z_l;                  // [batch, seq, hidden]
    Tensor<S> z_h;                  // undefined when the model has no H module
    std::vector<int> segment_index; // per-sample m, 0 before the first segment
    std::vector<uint8_t> halted;

    int batch() const { return static_cast<int>(segment_index.size()); }
};

template <class S>
struct SegmentOutcome {
    Tensor<S> y_hat;    // [batch, seq, vocab]
    Tensor<S> q_logits; // [batch, 2]: halt, continue
    LatentState<S> next_state;

    double q_halt(int i) const { return static_cast<double>(q_logits.ptr()[2 * i]); }
    double q_continue(int i) const { return static_cast<double>(q_logits.ptr()[2 * i + 1]); }
};

struct SegmentTrace {
    std::vector<int> h_update_steps; // 1-based micro-step indices where f_H ran
};

template <class S>
class HrmModel {
public:
    HrmModel(const ModelConfig& cfg, uint64_t weight_seed);

    const ModelConfig& config() const { return cfg_; }

    // Deterministic truncated-normal latent init (std 1, cutoff +-2); the
    // same vector fills every batch row and sequence position.
    LatentState<S> init_state(int batch, uint64_t seed) const;

    // Token embedding scaled by sqrt(hidden). tokens.size() == batch * seq.
    Tensor<S> embed_input(Tape<S>& tape, std::span<const int32_t> tokens, int batch) const;

    SegmentOutcome<S> recurrent_forward(Tape<S>& tape, const LatentState<S>& state, const Tensor<S>& x_tilde,
                                        SegmentTrace* trace = nullptr) const {
        return recurrent_forward(tape, state, x_tilde, cfg_.grad_mode, trace);
    }
    SegmentOutcome<S> recurrent_forward(Tape<S>& tape, const LatentState<S>& state, const Tensor<S>& x_tilde,
                                        GradMode mode, SegmentTrace* trace) const;

    // Component surfaces (used by the heads above and by equivalence tests).
    Tensor<S> apply_l_stack(Tape<S>& tape, const Tensor<S>& x) const;
    Tensor<S> apply_h_stack(Tape<S>& tape, const Tensor<S>& x) const;
    Tensor<S> output_logits(Tape<S>& tape, const Tensor<S>& z) const;
    Tensor<S> halt_logits(Tape<S>& tape, const Tensor<S>& z) const;

    std::vector<NamedParam<S>>& parameters() { return params_; }
    const std::vector<NamedParam<S>>& parameters() const { return params_; }
    void zero_grads();

    const ops::RotaryTable<S>& rope() const { return rope_; }
    const std::vector<BlockParams<S>>& l_blocks() const { return l_blocks_; }
    const std::vector<BlockParams<S>>& h_blocks() const { return h_blocks_; }
    const Tensor<S>& embedding_table() const { return embed_; }

private:
    Tensor<S> block_forward(Tape<S>& tape, const BlockParams<S>& blk, Tensor<S> x) const;
    void register_params();

    ModelConfig cfg_;
    ops::RotaryTable<S> rope_;
    Tensor<S> embed_;
    std::vector<BlockParams<S>> l_blocks_, h_blocks_;
    Tensor<S> w_out_, b_out_, w_q_, b_q_;
    std::vector<NamedParam<S>> params_;
};

template <class S>
using GradientMap = std::map<std::string, std::vector<S>>;

// Gradients of one segment's loss (cross-entropy of y_hat plus BCE of the Q
// pair against the given [batch,2] targets) under an explicit grad mode.
template <class S>
GradientMap<S> segment_loss_gradients(HrmModel<S>& model, const LatentState<S>& state,
                                      std::span<const int32_t> tokens, std::span<const int32_t> targets,
                                      const Tensor<S>& q_targets, GradMode mode, size_t* tracked_nodes = nullptr);

// Every micro-step tracked; the memory-hungry baseline used as a test oracle.
template <class S>
GradientMap<S> reference_bptt_gradient(HrmModel<S>& model, const LatentState<S>& state,
                                       std::span<const int32_t> tokens, std::span<const int32_t> targets,
                                       const Tensor<S>& q_targets) {
    return segment_loss_gradients(model, state, tokens, targets, q_targets, GradMode::FullBptt);
}

} // namespace hrmlab
