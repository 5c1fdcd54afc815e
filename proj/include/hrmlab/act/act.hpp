#pragma once

// Adaptive computation time: Q-learning halting during training (stochastic
// minimum M_min, hard horizon M_max, bootstrap targets), the combined
// prediction+stopping loss, the deep-supervision training step, and the
// inference-time halting strategies.

#include "hrmlab/harness/optimizer.hpp"
#include "hrmlab/model/model.hpp"

#include <span>
#include <vector>

namespace hrmlab {

enum class HaltStrategy { FixedSteps, QHaltThreshold, QDiffThreshold };

std::string to_string(HaltStrategy s);
HaltStrategy halt_strategy_from_string(const std::string& s);

struct ActConfig {
    int m_max = 4;
    double exploration_prob = 0.1;
    HaltStrategy halt_strategy = HaltStrategy::QHaltThreshold;
    double threshold = 0.5;
    int fixed_steps = 4;

    void validate() const {
        if (m_max < 1) throw ValidationError("act.m_max must be >= 1");
        if (exploration_prob < 0 || exploration_prob > 1)
            throw ValidationError("act.exploration_prob must lie in [0,1]");
        if (threshold <= 0 || threshold >= 1) throw ValidationError("act.threshold must lie in (0,1)");
        if (fixed_steps < 1 || fixed_steps > m_max)
            throw ValidationError("act.fixed_steps must lie in [1, m_max]");
    }
};

// Bootstrap targets for one sample's Q pair; plain detached values.
struct QTargets {
    double g_halt = 0.0;     // in {0,1}
    double g_continue = 0.0; // in [0,1]
};

// With probability exploration_prob: uniform in [2, m_max]; otherwise 1.
int sample_m_min(const ActConfig& cfg, Rng& rng);

// halt <=> m >= m_max, or q_halt > q_continue once m >= m_min.
bool train_halt_decision(double q_halt, double q_continue, int m, int m_min, int m_max);

// g_halt = 1{prediction exact}; g_continue = sigmoid(next halt logit) at the
// horizon, else max of the two next-step sigmoids.
QTargets compute_q_targets(double next_q_halt, double next_q_continue, bool prediction_exact, int m, int m_max);

// Inference halting per cfg.halt_strategy; M_min plays no role here.
bool infer_halt_decision(double q_halt, double q_continue, const ActConfig& cfg, int m);

// Cross-entropy over all cells plus BCE of the Q pair, weight 1 each.
template <class S>
Tensor<S> segment_loss(Tape<S>& tape, const Tensor<S>& y_hat, std::span<const int32_t> targets,
                       const Tensor<S>& q_logits, const std::vector<QTargets>& q_targets);

template <class S>
std::vector<int32_t> argmax_tokens(const Tensor<S>& logits); // [B,T,V] -> B*T ids

struct Batch {
    int batch = 0;
    int seq = 0;
    std::vector<int32_t> inputs;  // batch*seq
    std::vector<int32_t> targets; // batch*seq
};

struct TrainStepResult {
    double summed_loss = 0.0;          // sum over executed segments of (CE + BCE)
    int segments_executed = 0;         // deepest m reached by any sample
    std::vector<int> segments_used;    // per sample halt segment
    std::vector<int32_t> predictions;  // batch*seq, at each sample's halt segment
    double token_acc = 0.0;
    double exact_acc = 0.0;
};

// Runs segments until every sample halts, one backward per segment with
// gradient accumulation, then exactly one optimizer update. Samples that
// halt are excluded from later segments; next-step Q values for the targets
// come from an extra gradient-free forward.
template <class S>
TrainStepResult train_step_deep_supervision(const Batch& batch, HrmModel<S>& model, const ActConfig& cfg,
                                            AdamW<S>& optimizer, Rng& rng, uint64_t init_seed);

} // namespace hrmlab
