#include "hrmlab/act/act.hpp"

#include "hrmlab/sudoku/sudoku.hpp"

#include <algorithm>
#include <cmath>

namespace hrmlab {

std::string to_string(HaltStrategy s) {
    switch (s) {
    case HaltStrategy::FixedSteps: return "fixed_steps";
    case HaltStrategy::QHaltThreshold: return "q_halt_threshold";
    case HaltStrategy::QDiffThreshold: return "q_diff_threshold";
    }
    return "?";
}

HaltStrategy halt_strategy_from_string(const std::string& s) {
    if (s == "fixed_steps") return HaltStrategy::FixedSteps;
    if (s == "q_halt_threshold" || s == "q_halt") return HaltStrategy::QHaltThreshold;
    if (s == "q_diff_threshold" || s == "q_diff") return HaltStrategy::QDiffThreshold;
    throw ValidationError(strcat("unknown halt strategy '", s,
                                 "' (fixed_steps|q_halt_threshold|q_diff_threshold)"));
}

int sample_m_min(const ActConfig& cfg, Rng& rng) {
    if (cfg.exploration_prob > 0 && cfg.m_max < 2)
        throw ValidationError("sample_m_min: exploration needs m_max >= 2");
    if (cfg.exploration_prob > 0) {
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng) < cfg.exploration_prob) {
            std::uniform_int_distribution<int> pick(2, cfg.m_max);
            return pick(rng);
        }
    }
    return 1;
}

bool train_halt_decision(double q_halt, double q_continue, int m, int m_min, int m_max) {
    if (m >= m_max) return true;
    return q_halt > q_continue && m >= m_min;
}

namespace {
// plain form: in double, exp(-x) overflowing to inf still yields the correct
// 0, and it matches the obvious reference implementation bit for bit
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

QTargets compute_q_targets(double next_q_halt, double next_q_continue, bool prediction_exact, int m, int m_max) {
    QTargets t;
    t.g_halt = prediction_exact ? 1.0 : 0.0;
    t.g_continue = m >= m_max ? sigmoid(next_q_halt) : std::max(sigmoid(next_q_halt), sigmoid(next_q_continue));
    return t;
}

bool infer_halt_decision(double q_halt, double q_continue, const ActConfig& cfg, int m) {
    switch (cfg.halt_strategy) {
    case HaltStrategy::FixedSteps: return m >= cfg.fixed_steps;
    case HaltStrategy::QHaltThreshold: return sigmoid(q_halt) > cfg.threshold || m >= cfg.m_max;
    case HaltStrategy::QDiffThreshold: return sigmoid(q_halt - q_continue) > cfg.threshold || m >= cfg.m_max;
    }
    throw ValidationError("infer_halt_decision: unknown strategy");
}

template <class S>
Tensor<S> segment_loss(Tape<S>& tape, const Tensor<S>& y_hat, std::span<const int32_t> targets,
                       const Tensor<S>& q_logits, const std::vector<QTargets>& q_targets) {
    if (q_logits.rank() != 2 || q_logits.dim(1) != 2)
        throw ShapeError(strcat("segment_loss: q_logits must be [batch,2], got ", shape_str(q_logits.shape())));
    if (static_cast<size_t>(q_logits.dim(0)) != q_targets.size())
        throw ShapeError(strcat("segment_loss: ", q_targets.size(), " targets for batch ", q_logits.dim(0)));
    std::vector<int32_t> tgt(targets.begin(), targets.end());
    auto ce = ops::softmax_cross_entropy(tape, y_hat, tgt);
    auto gt = Tensor<S>::zeros({q_logits.dim(0), 2});
    for (size_t i = 0; i < q_targets.size(); ++i) {
        gt.ptr()[2 * i] = static_cast<S>(q_targets[i].g_halt);
        gt.ptr()[2 * i + 1] = static_cast<S>(q_targets[i].g_continue);
    }
    auto bce = ops::bce_with_logits(tape, q_logits, gt);
    return ops::add(tape, ce, bce);
}

template <class S>
std::vector<int32_t> argmax_tokens(const Tensor<S>& logits) {
    size_t vocab = static_cast<size_t>(logits.dim(logits.rank() - 1));
    size_t rows = static_cast<size_t>(logits.numel()) / vocab;
    std::vector<int32_t> out(rows);
    for (size_t r = 0; r < rows; ++r) {
        const S* row = logits.ptr() + r * vocab;
        size_t best = 0;
        for (size_t j = 1; j < vocab; ++j)
            if (row[j] > row[best]) best = j;
        out[r] = static_cast<int32_t>(best);
    }
    return out;
}

namespace {

template <class S>
LatentState<S> gather_state(const LatentState<S>& st, const std::vector<int>& rows, int seq, int hidden) {
    LatentState<S> out;
    size_t row_elems = static_cast<size_t>(seq) * static_cast<size_t>(hidden);
    auto gather_tensor = [&](const Tensor<S>& src) {
        auto dst = Tensor<S>::zeros({static_cast<int64_t>(rows.size()), seq, hidden});
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy(src.ptr() + static_cast<size_t>(rows[i]) * row_elems,
                      src.ptr() + (static_cast<size_t>(rows[i]) + 1) * row_elems, dst.ptr() + i * row_elems);
        return dst;
    };
    out.z_l = gather_tensor(st.z_l);
    if (st.z_h.defined()) out.z_h = gather_tensor(st.z_h);
    out.segment_index.resize(rows.size());
    out.halted.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        out.segment_index[i] = st.segment_index[static_cast<size_t>(rows[i])];
        out.halted[i] = st.halted[static_cast<size_t>(rows[i])];
    }
    return out;
}

} // namespace

template <class S>
TrainStepResult train_step_deep_supervision(const Batch& batch, HrmModel<S>& model, const ActConfig& cfg,
                                            AdamW<S>& optimizer, Rng& rng, uint64_t init_seed) {
    if (batch.batch <= 0) throw ValueError("train_step: empty batch");
    cfg.validate();
    const int B = batch.batch;
    const int seq = batch.seq;

    std::vector<int> m_min(static_cast<size_t>(B));
    for (int& v : m_min) v = sample_m_min(cfg, rng);

    TrainStepResult res;
    res.segments_used.assign(static_cast<size_t>(B), 0);
    res.predictions.assign(static_cast<size_t>(B) * static_cast<size_t>(seq), 0);

    model.zero_grads();
    LatentState<S> state = model.init_state(B, init_seed);
    std::vector<int> active(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) active[static_cast<size_t>(i)] = i;
    std::vector<int32_t> cur_inputs = batch.inputs;
    std::vector<int32_t> cur_targets = batch.targets;

    for (int m = 1; !active.empty(); ++m) {
        int A = static_cast<int>(active.size());
        Tape<S> tape;
        auto x = model.embed_input(tape, cur_inputs, A);
        auto outcome = model.recurrent_forward(tape, state, x);

        // bootstrap Q values from the next segment, gradient-free
        Tensor<S> q_next;
        {
            NoGradScope<S> ng(tape);
            auto out2 = model.recurrent_forward(tape, outcome.next_state, x);
            q_next = out2.q_logits;
        }

        auto preds = argmax_tokens(outcome.y_hat);
        std::vector<QTargets> targets(static_cast<size_t>(A));
        std::vector<uint8_t> halts(static_cast<size_t>(A));
        for (int i = 0; i < A; ++i) {
            bool exact = std::equal(preds.begin() + static_cast<ptrdiff_t>(i) * seq,
                                    preds.begin() + static_cast<ptrdiff_t>(i + 1) * seq,
                                    cur_targets.begin() + static_cast<ptrdiff_t>(i) * seq);
            targets[static_cast<size_t>(i)] =
                compute_q_targets(q_next.ptr()[2 * i], q_next.ptr()[2 * i + 1], exact, m, cfg.m_max);
            halts[static_cast<size_t>(i)] = train_halt_decision(outcome.q_halt(i), outcome.q_continue(i), m,
                                                                m_min[static_cast<size_t>(active[i])], cfg.m_max)
                                                ? 1
                                                : 0;
        }

        auto loss = segment_loss(tape, outcome.y_hat, cur_targets, outcome.q_logits, targets);
        res.summed_loss += static_cast<double>(loss.item());
        if (!std::isfinite(res.summed_loss)) throw RuntimeFailure("train_step: non-finite segment loss");
        tape.backward(loss);
        res.segments_executed = m;

        std::vector<int> still_active;
        std::vector<int> keep_rows;
        for (int i = 0; i < A; ++i) {
            int orig = active[static_cast<size_t>(i)];
            if (halts[static_cast<size_t>(i)]) {
                res.segments_used[static_cast<size_t>(orig)] = m;
                std::copy(preds.begin() + static_cast<ptrdiff_t>(i) * seq,
                          preds.begin() + static_cast<ptrdiff_t>(i + 1) * seq,
                          res.predictions.begin() + static_cast<ptrdiff_t>(orig) * seq);
            } else {
                still_active.push_back(orig);
                keep_rows.push_back(i);
            }
        }
        if (still_active.empty()) break;

        state = gather_state(outcome.next_state, keep_rows, seq, model.config().hidden_dim);
        std::vector<int32_t> nin(keep_rows.size() * static_cast<size_t>(seq));
        std::vector<int32_t> ntg(keep_rows.size() * static_cast<size_t>(seq));
        for (size_t i = 0; i < keep_rows.size(); ++i) {
            std::copy(cur_inputs.begin() + static_cast<ptrdiff_t>(keep_rows[i]) * seq,
                      cur_inputs.begin() + static_cast<ptrdiff_t>(keep_rows[i] + 1) * seq,
                      nin.begin() + static_cast<ptrdiff_t>(i) * seq);
            std::copy(cur_targets.begin() + static_cast<ptrdiff_t>(keep_rows[i]) * seq,
                      cur_targets.begin() + static_cast<ptrdiff_t>(keep_rows[i] + 1) * seq,
                      ntg.begin() + static_cast<ptrdiff_t>(i) * seq);
        }
        cur_inputs = std::move(nin);
        cur_targets = std::move(ntg);
        active = std::move(still_active);
    }

    optimizer.step();

    double tok = 0.0, ex = 0.0;
    for (int i = 0; i < B; ++i) {
        std::span<const int32_t> p(res.predictions.data() + static_cast<size_t>(i) * seq,
                                   static_cast<size_t>(seq));
        std::span<const int32_t> t(batch.targets.data() + static_cast<size_t>(i) * seq,
                                   static_cast<size_t>(seq));
        tok += sudoku::token_accuracy(p, t);
        ex += sudoku::exact_accuracy(p, t);
    }
    res.token_acc = tok / B;
    res.exact_acc = ex / B;
    return res;
}

template Tensor<float> segment_loss<float>(Tape<float>&, const Tensor<float>&, std::span<const int32_t>,
                                           const Tensor<float>&, const std::vector<QTargets>&);
template Tensor<double> segment_loss<double>(Tape<double>&, const Tensor<double>&, std::span<const int32_t>,
                                             const Tensor<double>&, const std::vector<QTargets>&);
template std::vector<int32_t> argmax_tokens<float>(const Tensor<float>&);
template std::vector<int32_t> argmax_tokens<double>(const Tensor<double>&);
template TrainStepResult train_step_deep_supervision<float>(const Batch&, HrmModel<float>&, const ActConfig&,
                                                            AdamW<float>&, Rng&, uint64_t);

} // namespace hrmlab
