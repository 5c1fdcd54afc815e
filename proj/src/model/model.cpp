#include "hrmlab/model/model.hpp"

#include <cmath>

namespace hrmlab {

namespace {

template <class S>
Tensor<S> trunc_normal_tensor(Shape shape, double stddev, Rng& rng) {
    auto t = Tensor<S>::zeros(std::move(shape));
    for (S& v : t.data()) v = static_cast<S>(truncated_normal(rng, stddev));
    return t;
}

template <class S>
BlockParams<S> make_block(int hidden, Rng& rng) {
    int ff = 4 * hidden;
    double wstd = 1.0 / std::sqrt(static_cast<double>(hidden));
    double fstd = 1.0 / std::sqrt(static_cast<double>(ff));
    BlockParams<S> b;
    b.wq = trunc_normal_tensor<S>({hidden, hidden}, wstd, rng);
    b.bq = Tensor<S>::zeros({hidden});
    b.wk = trunc_normal_tensor<S>({hidden, hidden}, wstd, rng);
    b.bk = Tensor<S>::zeros({hidden});
    b.wv = trunc_normal_tensor<S>({hidden, hidden}, wstd, rng);
    b.bv = Tensor<S>::zeros({hidden});
    b.wo = trunc_normal_tensor<S>({hidden, hidden}, wstd, rng);
    b.bo = Tensor<S>::zeros({hidden});
    b.w_gate = trunc_normal_tensor<S>({hidden, ff}, wstd, rng);
    b.b_gate = Tensor<S>::zeros({ff});
    b.w_up = trunc_normal_tensor<S>({hidden, ff}, wstd, rng);
    b.b_up = Tensor<S>::zeros({ff});
    b.w_down = trunc_normal_tensor<S>({ff, hidden}, fstd, rng);
    b.b_down = Tensor<S>::zeros({hidden});
    return b;
}

} // namespace

template <class S>
HrmModel<S>::HrmModel(const ModelConfig& cfg, uint64_t weight_seed) : cfg_(cfg) {
    cfg_.validate();
    rope_ = ops::RotaryTable<S>::build(cfg_.seq_len, cfg_.hidden_dim / cfg_.num_heads);
    Rng rng(weight_seed);
    double estd = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    embed_ = trunc_normal_tensor<S>({cfg_.vocab_size, cfg_.hidden_dim}, estd, rng);
    for (int i = 0; i < cfg_.l_layers; ++i) l_blocks_.push_back(make_block<S>(cfg_.hidden_dim, rng));
    for (int i = 0; i < cfg_.h_layers; ++i) h_blocks_.push_back(make_block<S>(cfg_.hidden_dim, rng));
    w_out_ = trunc_normal_tensor<S>({cfg_.hidden_dim, cfg_.vocab_size}, estd, rng);
    b_out_ = Tensor<S>::zeros({cfg_.vocab_size});
    w_q_ = trunc_normal_tensor<S>({cfg_.hidden_dim, 2}, estd, rng);
    b_q_ = Tensor<S>::zeros({2});
    register_params();
}

template <class S>
void HrmModel<S>::register_params() {
    auto reg = [this](std::string name, Tensor<S>& t) {
        t.set_requires_grad(true);
        params_.push_back({std::move(name), t});
    };
    reg("embed", embed_);
    auto reg_block = [&](const std::string& prefix, BlockParams<S>& b) {
        reg(prefix + ".attn.wq", b.wq);
        reg(prefix + ".attn.bq", b.bq);
        reg(prefix + ".attn.wk", b.wk);
        reg(prefix + ".attn.bk", b.bk);
        reg(prefix + ".attn.wv", b.wv);
        reg(prefix + ".attn.bv", b.bv);
        reg(prefix + ".attn.wo", b.wo);
        reg(prefix + ".attn.bo", b.bo);
        reg(prefix + ".mlp.w_gate", b.w_gate);
        reg(prefix + ".mlp.b_gate", b.b_gate);
        reg(prefix + ".mlp.w_up", b.w_up);
        reg(prefix + ".mlp.b_up", b.b_up);
        reg(prefix + ".mlp.w_down", b.w_down);
        reg(prefix + ".mlp.b_down", b.b_down);
    };
    for (size_t i = 0; i < l_blocks_.size(); ++i) reg_block(strcat("l.", i), l_blocks_[i]);
    for (size_t i = 0; i < h_blocks_.size(); ++i) reg_block(strcat("h.", i), h_blocks_[i]);
    reg("out.w", w_out_);
    reg("out.b", b_out_);
    reg("q.w", w_q_);
    reg("q.b", b_q_);
}

template <class S>
void HrmModel<S>::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <class S>
LatentState<S> HrmModel<S>::init_state(int batch, uint64_t seed) const {
    Rng rng(derive_seed(seed, "init_state"));
    int hidden = cfg_.hidden_dim;
    std::vector<S> row_l(static_cast<size_t>(hidden)), row_h(static_cast<size_t>(hidden));
    for (S& v : row_l) v = static_cast<S>(truncated_normal(rng));
    for (S& v : row_h) v = static_cast<S>(truncated_normal(rng));

    auto broadcast = [&](const std::vector<S>& row) {
        auto t = Tensor<S>::zeros({batch, cfg_.seq_len, hidden});
        for (int64_t r = 0; r < static_cast<int64_t>(batch) * cfg_.seq_len; ++r)
            std::copy(row.begin(), row.end(), t.ptr() + r * hidden);
        return t;
    };

    LatentState<S> st;
    st.z_l = broadcast(row_l);
    if (cfg_.h_layers > 0) st.z_h = broadcast(row_h);
    st.segment_index.assign(static_cast<size_t>(batch), 0);
    st.halted.assign(static_cast<size_t>(batch), 0);
    return st;
}

template <class S>
Tensor<S> HrmModel<S>::embed_input(Tape<S>& tape, std::span<const int32_t> tokens, int batch) const {
    if (tokens.size() != static_cast<size_t>(batch) * static_cast<size_t>(cfg_.seq_len))
        throw ShapeError(strcat("embed_input: ", tokens.size(), " tokens for batch ", batch, " x seq ",
                                cfg_.seq_len));
    std::vector<int32_t> ids(tokens.begin(), tokens.end());
    return ops::embedding(tape, embed_, ids, batch, cfg_.seq_len,
                          static_cast<S>(std::sqrt(static_cast<double>(cfg_.hidden_dim))));
}

template <class S>
Tensor<S> HrmModel<S>::block_forward(Tape<S>& tape, const BlockParams<S>& blk, Tensor<S> x) const {
    auto q = ops::linear(tape, x, blk.wq, blk.bq);
    auto k = ops::linear(tape, x, blk.wk, blk.bk);
    auto v = ops::linear(tape, x, blk.wv, blk.bv);
    auto attn = ops::attention(tape, q, k, v, cfg_.num_heads, &rope_);
    auto o = ops::linear(tape, attn, blk.wo, blk.bo);
    x = ops::rms_norm(tape, ops::add(tape, x, o));
    auto gate = ops::linear(tape, x, blk.w_gate, blk.b_gate);
    auto up = ops::linear(tape, x, blk.w_up, blk.b_up);
    auto m = ops::linear(tape, ops::silu_gate(tape, gate, up), blk.w_down, blk.b_down);
    return ops::rms_norm(tape, ops::add(tape, x, m));
}

template <class S>
Tensor<S> HrmModel<S>::apply_l_stack(Tape<S>& tape, const Tensor<S>& x) const {
    Tensor<S> h = x;
    for (const auto& blk : l_blocks_) h = block_forward(tape, blk, h);
    return h;
}

template <class S>
Tensor<S> HrmModel<S>::apply_h_stack(Tape<S>& tape, const Tensor<S>& x) const {
    Tensor<S> h = x;
    for (const auto& blk : h_blocks_) h = block_forward(tape, blk, h);
    return h;
}

template <class S>
Tensor<S> HrmModel<S>::output_logits(Tape<S>& tape, const Tensor<S>& z) const {
    return ops::linear(tape, z, w_out_, b_out_);
}

template <class S>
Tensor<S> HrmModel<S>::halt_logits(Tape<S>& tape, const Tensor<S>& z) const {
    return ops::linear(tape, ops::take_position(tape, z, 0), w_q_, b_q_);
}

template <class S>
SegmentOutcome<S> HrmModel<S>::recurrent_forward(Tape<S>& tape, const LatentState<S>& state,
                                                 const Tensor<S>& x_tilde, GradMode mode,
                                                 SegmentTrace* trace) const {
    int steps = cfg_.micro_steps();
    if (steps <= 0) throw ValidationError("recurrent_forward: cycles*t must be >= 1");
    bool has_h = cfg_.h_layers > 0;
    if (has_h && !state.z_h.defined()) throw ShapeError("recurrent_forward: state has no z_h");

    bool outer = tape.recording();
    Tensor<S> z_l = state.z_l;
    Tensor<S> z_h = state.z_h;
    for (int i = 1; i <= steps; ++i) {
        bool tracked = (mode == GradMode::FullBptt) || (i == steps);
        tape.set_recording(outer && tracked);
        // both updates read the step i-1 states
        Tensor<S> l_in = has_h ? ops::add(tape, ops::add(tape, z_l, z_h), x_tilde) : ops::add(tape, z_l, x_tilde);
        Tensor<S> new_z_l = apply_l_stack(tape, l_in);
        if (has_h && i % cfg_.t == 0) {
            z_h = apply_h_stack(tape, ops::add(tape, z_h, z_l));
            if (trace) trace->h_update_steps.push_back(i);
        }
        z_l = new_z_l;
    }
    tape.set_recording(outer);

    const Tensor<S>& read_from = has_h ? z_h : z_l;
    SegmentOutcome<S> out;
    out.y_hat = output_logits(tape, read_from);
    out.q_logits = halt_logits(tape, read_from);

    out.next_state.z_l = ops::detach(z_l);
    if (has_h) out.next_state.z_h = ops::detach(z_h);
    out.next_state.segment_index = state.segment_index;
    for (int& m : out.next_state.segment_index) ++m;
    out.next_state.halted = state.halted;
    return out;
}

template <class S>
GradientMap<S> segment_loss_gradients(HrmModel<S>& model, const LatentState<S>& state,
                                      std::span<const int32_t> tokens, std::span<const int32_t> targets,
                                      const Tensor<S>& q_targets, GradMode mode, size_t* tracked_nodes) {
    model.zero_grads();
    Tape<S> tape;
    int batch = state.batch();
    auto x = model.embed_input(tape, tokens, batch);
    auto outcome = model.recurrent_forward(tape, state, x, mode, nullptr);
    std::vector<int32_t> tgt(targets.begin(), targets.end());
    auto ce = ops::softmax_cross_entropy(tape, outcome.y_hat, tgt);
    auto bce = ops::bce_with_logits(tape, outcome.q_logits, q_targets);
    auto loss = ops::add(tape, ce, bce);
    if (tracked_nodes) *tracked_nodes = tape.node_count();
    tape.backward(loss);

    GradientMap<S> grads;
    for (const auto& p : model.parameters()) grads[p.name] = p.tensor.grad_or_zero();
    return grads;
}

template class HrmModel<float>;
template class HrmModel<double>;
template GradientMap<float> segment_loss_gradients<float>(HrmModel<float>&, const LatentState<float>&,
                                                          std::span<const int32_t>, std::span<const int32_t>,
                                                          const Tensor<float>&, GradMode, size_t*);
template GradientMap<double> segment_loss_gradients<double>(HrmModel<double>&, const LatentState<double>&,
                                                            std::span<const int32_t>, std::span<const int32_t>,
                                                            const Tensor<double>&, GradMode, size_t*);

} // namespace hrmlab
