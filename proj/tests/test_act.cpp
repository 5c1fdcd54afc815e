// ACT halting: M_min sampling statistics, the train/inference halt rules
// against brute-force re-implementations, bootstrap target semantics, the
// combined loss, and the deep-supervision training step.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hrmlab/act/act.hpp"
#include "hrmlab/tensor/gradcheck.hpp"

#include <cmath>
#include <random>

using namespace hrmlab;

namespace {

ModelConfig small_model_config(int m_max = 4) {
    ModelConfig c;
    c.vocab_size = 5;
    c.seq_len = 4;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.l_layers = 1;
    c.h_layers = 0;
    c.t = 1;
    c.cycles = 1;
    c.m_max = m_max;
    return c;
}

Batch small_batch(int b, int seq, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int32_t> in_d(0, vocab - 1), tg_d(1, vocab - 1);
    Batch batch;
    batch.batch = b;
    batch.seq = seq;
    batch.inputs.resize(static_cast<size_t>(b) * seq);
    batch.targets.resize(static_cast<size_t>(b) * seq);
    for (auto& v : batch.inputs) v = in_d(rng);
    for (auto& v : batch.targets) v = tg_d(rng);
    return batch;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

GradientMap<float> param_grads(const HrmModel<float>& model) {
    GradientMap<float> g;
    for (const auto& p : model.parameters()) g[p.name] = p.tensor.grad_or_zero();
    return g;
}

} // namespace

TEST_CASE("sample_m_min limits and statistics") {
    Rng rng(5);
    ActConfig cfg;
    cfg.m_max = 8;

    cfg.exploration_prob = 0.0;
    for (int i = 0; i < 100; ++i) CHECK(sample_m_min(cfg, rng) == 1);

    cfg.exploration_prob = 1.0;
    cfg.m_max = 2;
    for (int i = 0; i < 100; ++i) CHECK(sample_m_min(cfg, rng) == 2);

    cfg.exploration_prob = 0.1;
    cfg.m_max = 8;
    double total = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        int v = sample_m_min(cfg, rng);
        CHECK(v >= 1);
        CHECK(v <= 8);
        total += v;
    }
    CHECK(total / n == doctest::Approx(1.4).epsilon(0.02)); // 1 + 0.1*(5-1)

    cfg.m_max = 1;
    CHECK_THROWS_AS(sample_m_min(cfg, rng), ValidationError);
}

TEST_CASE("train halt decision cases") {
    CHECK(train_halt_decision(-5.0, 5.0, 4, 1, 4));     // horizon forces halt
    CHECK_FALSE(train_halt_decision(0.3, 0.1, 1, 3, 4)); // minimum not yet satisfied
    CHECK(train_halt_decision(0.3, 0.1, 3, 3, 4));
    CHECK_FALSE(train_halt_decision(0.1, 0.3, 3, 3, 4));
}

TEST_CASE("q-target hand cases") {
    auto t1 = compute_q_targets(0.2, 0.7, true, 2, 4);
    CHECK(t1.g_halt == 1.0);
    CHECK(t1.g_continue == doctest::Approx(sigmoid(0.7)).epsilon(1e-12)); // max branch, 0.6682

    auto t2 = compute_q_targets(0.2, 0.7, false, 4, 4);
    CHECK(t2.g_halt == 0.0);
    CHECK(t2.g_continue == doctest::Approx(sigmoid(0.2)).epsilon(1e-12)); // horizon branch, 0.5498
}

TEST_CASE("halt decision and q-targets match a brute-force unroll on 1000 cases") {
    // independent re-implementations, straight from the decision rules
    auto brute_halt = [](double qh, double qc, int m, int m_min, int m_max) {
        if (m >= m_max) return true;
        if (qh > qc && m >= m_min) return true;
        return false;
    };
    auto brute_targets = [&](double nqh, double nqc, bool exact, int m, int m_max) {
        QTargets t;
        t.g_halt = exact ? 1.0 : 0.0;
        double sh = 1.0 / (1.0 + std::exp(-nqh)), sc = 1.0 / (1.0 + std::exp(-nqc));
        t.g_continue = (m >= m_max) ? sh : (sh > sc ? sh : sc);
        return t;
    };

    Rng rng(77);
    std::uniform_real_distribution<double> logit(-4.0, 4.0);
    std::uniform_int_distribution<int> mm(1, 4), coin(0, 1);
    for (int i = 0; i < 1000; ++i) {
        int m_max = mm(rng);
        int m = std::uniform_int_distribution<int>(1, m_max)(rng);
        int m_min = mm(rng);
        double qh = logit(rng), qc = logit(rng), nqh = logit(rng), nqc = logit(rng);
        bool exact = coin(rng) == 1;
        CHECK(train_halt_decision(qh, qc, m, m_min, m_max) == brute_halt(qh, qc, m, m_min, m_max));
        auto got = compute_q_targets(nqh, nqc, exact, m, m_max);
        auto want = brute_targets(nqh, nqc, exact, m, m_max);
        CHECK(got.g_halt == want.g_halt);
        CHECK(got.g_continue == want.g_continue);
        CHECK((got.g_halt == 0.0 || got.g_halt == 1.0));
        CHECK(got.g_continue >= 0.0);
        CHECK(got.g_continue <= 1.0);
    }
}

TEST_CASE("inference halt rules per strategy") {
    ActConfig cfg;
    cfg.m_max = 8;
    cfg.fixed_steps = 3;

    cfg.halt_strategy = HaltStrategy::FixedSteps;
    CHECK_FALSE(infer_halt_decision(9.0, -9.0, cfg, 2));
    CHECK(infer_halt_decision(-9.0, 9.0, cfg, 3));

    cfg.halt_strategy = HaltStrategy::QHaltThreshold;
    cfg.threshold = 0.9;
    CHECK_FALSE(infer_halt_decision(0.0, 0.0, cfg, 1)); // sigmoid(0) = 0.5
    CHECK(infer_halt_decision(3.0, 0.0, cfg, 1));       // sigmoid(3) = 0.95
    CHECK(infer_halt_decision(0.0, 0.0, cfg, 8));       // horizon

    // strategy 2 at threshold 0.5 is exactly the argmax comparison
    cfg.halt_strategy = HaltStrategy::QDiffThreshold;
    cfg.threshold = 0.5;
    Rng rng(9);
    std::uniform_real_distribution<double> logit(-4.0, 4.0);
    for (int i = 0; i < 500; ++i) {
        double qh = logit(rng), qc = logit(rng);
        CHECK(infer_halt_decision(qh, qc, cfg, 1) == (qh > qc));
    }
}

TEST_CASE("per-sample halt step is monotone in the threshold on replayed trajectories") {
    Rng rng(13);
    std::uniform_real_distribution<double> logit(-3.0, 3.0);
    const int m_max = 8;
    for (HaltStrategy strat : {HaltStrategy::QHaltThreshold, HaltStrategy::QDiffThreshold}) {
        for (int traj = 0; traj < 50; ++traj) {
            std::vector<std::pair<double, double>> q(m_max);
            for (auto& p : q) p = {logit(rng), logit(rng)};
            auto halt_step = [&](double th) {
                ActConfig cfg;
                cfg.m_max = m_max;
                cfg.fixed_steps = m_max;
                cfg.halt_strategy = strat;
                cfg.threshold = th;
                for (int m = 1; m <= m_max; ++m)
                    if (infer_halt_decision(q[static_cast<size_t>(m - 1)].first,
                                            q[static_cast<size_t>(m - 1)].second, cfg, m))
                        return m;
                return m_max;
            };
            int prev = 0;
            for (double th : {0.1, 0.25, 0.4, 0.55, 0.7, 0.85, 0.97}) {
                int s = halt_step(th);
                CHECK(s >= prev);
                prev = s;
            }
        }
    }
}

TEST_CASE("segment_loss is the sum of its two published terms and is grad-checked") {
    Tape<double> tape;
    Rng rng(15);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    const int B = 2, T = 3, V = 4;
    auto y = Tensor<double>::zeros({B, T, V});
    for (auto& v : y.data()) v = d(rng);
    auto q = Tensor<double>::zeros({B, 2});
    for (auto& v : q.data()) v = d(rng);
    std::vector<int32_t> targets{1, 2, 3, 3, 2, 1};
    std::vector<QTargets> qt{{1.0, 0.4}, {0.0, 0.7}};

    auto total = segment_loss(tape, y, targets, q, qt);
    auto ce = ops::softmax_cross_entropy(tape, y, targets);
    auto gt = Tensor<double>::from_values({B, 2}, {1.0, 0.4, 0.0, 0.7});
    auto bce = ops::bce_with_logits(tape, q, gt);
    CHECK(total.item() == doctest::Approx(ce.item() + bce.item()).epsilon(1e-12)); // additivity

    // saturated-correct corner: perfect logits and q matching targets -> ~0
    auto y2 = Tensor<double>::zeros({1, 2, 3});
    std::vector<int32_t> t2{1, 2};
    y2.ptr()[1] = 50.0;
    y2.ptr()[5] = 50.0;
    auto q2 = Tensor<double>::from_values({1, 2}, {40.0, -40.0});
    std::vector<QTargets> qt2{{1.0, 0.0}};
    CHECK(segment_loss(tape, y2, t2, q2, qt2).item() == doctest::Approx(0.0).epsilon(1e-8));

    // finite differences through the whole combined loss
    GradCheckFn fn = [targets, qt](Tape<double>& t, std::vector<Tensor<double>>& in) {
        return segment_loss(t, in[0], targets, in[1], qt);
    };
    auto yc = y.clone();
    auto qc = q.clone();
    CHECK(finite_diff_check(fn, {yc, qc}, 1e-5) <= 1e-5);
}

TEST_CASE("deep supervision: m_max = 1 forces one segment") {
    ModelConfig mc = small_model_config(1);
    HrmModel<float> model(mc, 19);
    AdamW<float> opt(model.parameters(), OptimConfig{});
    ActConfig cfg;
    cfg.m_max = 1;
    cfg.exploration_prob = 0.0;
    cfg.fixed_steps = 1;
    Rng rng(3);
    auto batch = small_batch(4, mc.seq_len, mc.vocab_size, 21);
    auto res = train_step_deep_supervision(batch, model, cfg, opt, rng, 7);
    CHECK(res.segments_executed == 1);
    for (int s : res.segments_used) CHECK(s == 1);
}

TEST_CASE("deep supervision: fresh-model halts follow the q comparison at m_min = 1") {
    ModelConfig mc = small_model_config(4);
    HrmModel<float> model(mc, 19);
    ActConfig cfg;
    cfg.m_max = 4;
    cfg.exploration_prob = 0.0;
    Rng rng(3);

    auto batch = small_batch(3, mc.seq_len, mc.vocab_size, 23);
    Tape<float> tape;
    tape.set_recording(false);
    auto state = model.init_state(batch.batch, 7);
    auto out = model.recurrent_forward(tape, state, model.embed_input(tape, batch.inputs, batch.batch));

    AdamW<float> opt(model.parameters(), OptimConfig{});
    auto res = train_step_deep_supervision(batch, model, cfg, opt, rng, 7);
    for (int i = 0; i < batch.batch; ++i) {
        if (out.q_halt(i) > out.q_continue(i)) CHECK(res.segments_used[static_cast<size_t>(i)] == 1);
        CHECK(res.segments_used[static_cast<size_t>(i)] >= 1);
        CHECK(res.segments_used[static_cast<size_t>(i)] <= 4);
    }
}

TEST_CASE("gradient-free target forward leaves parameter gradients unchanged") {
    // gradients of one tracked segment forward + loss, with and without an
    // extra no-grad bootstrap forward in between, must be identical
    ModelConfig mc = small_model_config(2);
    HrmModel<float> model(mc, 29);
    auto batch = small_batch(2, mc.seq_len, mc.vocab_size, 31);
    auto state = model.init_state(batch.batch, 7);
    std::vector<QTargets> qt{{1.0, 0.25}, {0.0, 0.75}};

    auto run = [&](bool with_target_forward) {
        model.zero_grads();
        Tape<float> tape;
        auto x = model.embed_input(tape, batch.inputs, batch.batch);
        auto out = model.recurrent_forward(tape, state, x);
        if (with_target_forward) {
            NoGradScope<float> ng(tape);
            auto extra = model.recurrent_forward(tape, out.next_state, x);
            (void)extra;
        }
        auto loss = segment_loss(tape, out.y_hat, batch.targets, out.q_logits, qt);
        tape.backward(loss);
        return param_grads(model);
    };
    auto without = run(false);
    auto with = run(true);
    for (const auto& [name, g] : without) {
        const auto& g2 = with.at(name);
        CHECK(g == g2);
    }
}

TEST_CASE("bootstrap targets are detached from the graph") {
    ModelConfig mc = small_model_config(2);
    HrmModel<float> model(mc, 29);
    auto batch = small_batch(2, mc.seq_len, mc.vocab_size, 31);
    auto state = model.init_state(batch.batch, 7);

    model.zero_grads();
    Tape<float> tape;
    auto x = model.embed_input(tape, batch.inputs, batch.batch);
    auto out = model.recurrent_forward(tape, state, x);
    size_t nodes_after_segment = tape.node_count();
    std::vector<QTargets> qt;
    {
        NoGradScope<float> ng(tape);
        auto nxt = model.recurrent_forward(tape, out.next_state, x);
        for (int i = 0; i < batch.batch; ++i)
            qt.push_back(compute_q_targets(nxt.q_halt(i), nxt.q_continue(i), false, 1, 2));
    }
    // the bootstrap forward recorded nothing, so nothing in the graph can
    // receive gradient from the targets
    CHECK(tape.node_count() == nodes_after_segment);
    auto loss = segment_loss(tape, out.y_hat, batch.targets, out.q_logits, qt);
    tape.backward(loss);
    for (const auto& q : qt) {
        CHECK(q.g_continue >= 0.0);
        CHECK(q.g_continue <= 1.0);
    }
}

TEST_CASE("every sample halts within m_max segments and one optimizer update happens") {
    ModelConfig mc = small_model_config(3);
    HrmModel<float> model(mc, 37);
    AdamW<float> opt(model.parameters(), OptimConfig{});
    ActConfig cfg;
    cfg.m_max = 3;
    cfg.exploration_prob = 0.5;
    cfg.fixed_steps = 3;
    Rng rng(5);
    auto batch = small_batch(6, mc.seq_len, mc.vocab_size, 41);
    auto res = train_step_deep_supervision(batch, model, cfg, opt, rng, 7);
    CHECK(res.segments_executed <= 3);
    for (int s : res.segments_used) {
        CHECK(s >= 1);
        CHECK(s <= 3);
    }
    CHECK(opt.steps_taken() == 1);
    CHECK(std::isfinite(res.summed_loss));
    CHECK(res.summed_loss > 0.0);
}
