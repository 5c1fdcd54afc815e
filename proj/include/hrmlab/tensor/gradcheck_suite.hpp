#pragma once

// Randomized finite-difference sweep over every registered kernel plus the
// composite graphs (norm-linear chain, full attention block, segment loss).
// Shapes stay small (<= 8 per axis); everything runs in 64-bit.

#include "hrmlab/tensor/gradcheck.hpp"

#include <random>
#include <string>
#include <vector>

namespace hrmlab {

struct KernelCheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

namespace gradcheck_detail {

inline Tensor<double> rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.5, double hi = 1.5) {
    std::uniform_real_distribution<double> d(lo, hi);
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data()) v = d(rng);
    return t;
}

// scalar readout: sum(y * w) with fixed random weights, so every output
// coordinate affects the loss
inline Tensor<double> readout(Tape<double>& tape, const Tensor<double>& y, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    auto w = Tensor<double>::zeros(y.shape());
    for (auto& v : w.data()) v = d(rng);
    return ops::reduce_sum(tape, ops::mul(tape, y, w));
}

} // namespace gradcheck_detail

inline std::vector<KernelCheckResult> gradcheck_kernel_suite(int num_seeds, double epsilon = 1e-5) {
    using namespace gradcheck_detail;
    std::vector<KernelCheckResult> results;

    auto run = [&](const std::string& name, auto make_case) {
        double worst = 0.0;
        for (int seed = 0; seed < num_seeds; ++seed) {
            std::mt19937_64 rng(static_cast<uint64_t>(seed) * 7919 + 13);
            auto [fn, inputs] = make_case(rng);
            worst = std::max(worst, finite_diff_check(fn, std::move(inputs), epsilon));
        }
        results.push_back({name, worst});
    };

    auto dim = [](std::mt19937_64& rng, int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };

    run("add", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::add(t, in[0], in[1]), r);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng), rand_tensor(s, rng)}};
    });

    run("mul", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::mul(t, in[0], in[1]), r);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng), rand_tensor(s, rng)}};
    });

    run("matmul", [&](std::mt19937_64& rng) {
        int m = dim(rng, 1, 6), k = dim(rng, 1, 8), n = dim(rng, 1, 6);
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::matmul(t, in[0], in[1]), r);
        };
        return std::pair{fn, std::vector{rand_tensor({m, k}, rng), rand_tensor({k, n}, rng)}};
    });

    run("linear", [&](std::mt19937_64& rng) {
        int b = dim(rng, 1, 3), s = dim(rng, 1, 4), in_d = dim(rng, 1, 8), out_d = dim(rng, 1, 6);
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::linear(t, in[0], in[1], in[2]), r);
        };
        return std::pair{fn, std::vector{rand_tensor({b, s, in_d}, rng), rand_tensor({in_d, out_d}, rng),
                                         rand_tensor({out_d}, rng)}};
    });

    run("embedding", [&](std::mt19937_64& rng) {
        int vocab = dim(rng, 2, 8), width = dim(rng, 1, 8), b = dim(rng, 1, 2), s = dim(rng, 1, 6);
        std::vector<int32_t> ids(static_cast<size_t>(b) * static_cast<size_t>(s));
        for (auto& id : ids) id = static_cast<int32_t>(dim(rng, 0, vocab - 1));
        auto rng2 = rng;
        GradCheckFn fn = [rng2, ids, b, s](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::embedding(t, in[0], ids, b, s, 1.25), r);
        };
        return std::pair{fn, std::vector{rand_tensor({vocab, width}, rng)}};
    });

    run("softmax", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 6), dim(rng, 2, 8)};
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::softmax(t, in[0]), r);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng)}};
    });

    run("rms_norm", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 6), dim(rng, 2, 8)};
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::rms_norm(t, in[0]), r);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng)}};
    });

    run("silu_gate", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 6), dim(rng, 1, 8)};
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::silu_gate(t, in[0], in[1]), r);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng), rand_tensor(s, rng)}};
    });

    run("attention", [&](std::mt19937_64& rng) {
        int b = dim(rng, 1, 2), s = dim(rng, 1, 5), heads = dim(rng, 1, 2), dh = 2 * dim(rng, 1, 3);
        int width = heads * dh;
        auto rng2 = rng;
        GradCheckFn fn = [rng2, heads](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::attention(t, in[0], in[1], in[2], heads), r);
        };
        Shape sh{b, s, width};
        return std::pair{fn, std::vector{rand_tensor(sh, rng), rand_tensor(sh, rng), rand_tensor(sh, rng)}};
    });

    run("attention_rotary", [&](std::mt19937_64& rng) {
        int b = dim(rng, 1, 2), s = dim(rng, 2, 5), heads = dim(rng, 1, 2), dh = 2 * dim(rng, 1, 3);
        int width = heads * dh;
        auto rope = std::make_shared<ops::RotaryTable<double>>(ops::RotaryTable<double>::build(s, dh));
        auto rng2 = rng;
        GradCheckFn fn = [rng2, heads, rope](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::attention(t, in[0], in[1], in[2], heads, rope.get()), r);
        };
        Shape sh{b, s, width};
        return std::pair{fn, std::vector{rand_tensor(sh, rng), rand_tensor(sh, rng), rand_tensor(sh, rng)}};
    });

    run("concat", [&](std::mt19937_64& rng) {
        int r0 = dim(rng, 1, 6), na = dim(rng, 1, 5), nb = dim(rng, 1, 5);
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::concat_last(t, in[0], in[1]), r);
        };
        return std::pair{fn, std::vector{rand_tensor({r0, na}, rng), rand_tensor({r0, nb}, rng)}};
    });

    run("take_position", [&](std::mt19937_64& rng) {
        int b = dim(rng, 1, 3), s = dim(rng, 1, 6), w = dim(rng, 1, 8);
        int64_t pos = dim(rng, 0, s - 1);
        auto rng2 = rng;
        GradCheckFn fn = [rng2, pos](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::take_position(t, in[0], pos), r);
        };
        return std::pair{fn, std::vector{rand_tensor({b, s, w}, rng)}};
    });

    run("l2_norm", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
        GradCheckFn fn = [](Tape<double>& t, std::vector<Tensor<double>>& in) {
            return ops::l2_norm(t, in[0]);
        };
        // keep values away from the |x| = 0 kink
        auto x = rand_tensor(s, rng, 0.5, 1.5);
        return std::pair{fn, std::vector{x}};
    });

    run("reduce_sum", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 8), dim(rng, 1, 8)};
        GradCheckFn fn = [](Tape<double>& t, std::vector<Tensor<double>>& in) {
            return ops::reduce_sum(t, in[0]);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng)}};
    });

    run("softmax_cross_entropy", [&](std::mt19937_64& rng) {
        int rows = dim(rng, 1, 6), vocab = dim(rng, 2, 8);
        std::vector<int32_t> tgt(static_cast<size_t>(rows));
        for (size_t i = 0; i < tgt.size(); ++i) {
            tgt[i] = static_cast<int32_t>(dim(rng, 0, vocab - 1));
            if (i == 0 && rows > 1) tgt[i] = -1; // exercise the ignore path
        }
        GradCheckFn fn = [tgt](Tape<double>& t, std::vector<Tensor<double>>& in) {
            return ops::softmax_cross_entropy(t, in[0], tgt, -1);
        };
        return std::pair{fn, std::vector{rand_tensor({rows, vocab}, rng)}};
    });

    run("bce_with_logits", [&](std::mt19937_64& rng) {
        Shape s{dim(rng, 1, 6), dim(rng, 1, 4)};
        auto targets = rand_tensor(s, rng, 0.0, 1.0);
        GradCheckFn fn = [targets](Tape<double>& t, std::vector<Tensor<double>>& in) {
            return ops::bce_with_logits(t, in[0], targets);
        };
        return std::pair{fn, std::vector{rand_tensor(s, rng)}};
    });

    run("rms_norm_of_linear", [&](std::mt19937_64& rng) {
        int r0 = dim(rng, 1, 4), in_d = dim(rng, 1, 6), out_d = dim(rng, 2, 6);
        auto rng2 = rng;
        GradCheckFn fn = [rng2](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            return readout(t, ops::rms_norm(t, ops::linear(t, in[0], in[1], in[2])), r);
        };
        return std::pair{fn, std::vector{rand_tensor({r0, in_d}, rng), rand_tensor({in_d, out_d}, rng),
                                         rand_tensor({out_d}, rng)}};
    });

    // post-norm transformer block, the shape used by both stacks
    run("attention_block", [&](std::mt19937_64& rng) {
        int b = 1, s = dim(rng, 2, 4), heads = 2, dh = 2, width = heads * dh, ff = 2 * width;
        auto rope = std::make_shared<ops::RotaryTable<double>>(ops::RotaryTable<double>::build(s, dh));
        auto rng2 = rng;
        GradCheckFn fn = [rng2, heads, rope](Tape<double>& t, std::vector<Tensor<double>>& in) mutable {
            auto r = rng2;
            auto& x = in[0];
            auto q = ops::linear(t, x, in[1], in[2]);
            auto k = ops::linear(t, x, in[3], in[4]);
            auto v = ops::linear(t, x, in[5], in[6]);
            auto attn = ops::attention(t, q, k, v, heads, rope.get());
            auto o = ops::linear(t, attn, in[7], in[8]);
            auto h = ops::rms_norm(t, ops::add(t, x, o));
            auto gate = ops::linear(t, h, in[9], in[10]);
            auto up = ops::linear(t, h, in[11], in[12]);
            auto m = ops::linear(t, ops::silu_gate(t, gate, up), in[13], in[14]);
            return readout(t, ops::rms_norm(t, ops::add(t, h, m)), r);
        };
        std::vector<Tensor<double>> in;
        in.push_back(rand_tensor({b, s, width}, rng));
        for (int i = 0; i < 4; ++i) {
            in.push_back(rand_tensor({width, width}, rng));
            in.push_back(rand_tensor({width}, rng));
        }
        in.push_back(rand_tensor({width, ff}, rng));
        in.push_back(rand_tensor({ff}, rng));
        in.push_back(rand_tensor({width, ff}, rng));
        in.push_back(rand_tensor({ff}, rng));
        in.push_back(rand_tensor({ff, width}, rng));
        in.push_back(rand_tensor({width}, rng));
        return std::pair{fn, in};
    });

    // prediction cross-entropy + Q-pair BCE on top of shared features
    run("segment_loss_graph", [&](std::mt19937_64& rng) {
        int b = dim(rng, 1, 2), s = dim(rng, 2, 5), h = dim(rng, 2, 6), vocab = dim(rng, 2, 5);
        std::vector<int32_t> tgt(static_cast<size_t>(b) * static_cast<size_t>(s));
        for (auto& v : tgt) v = static_cast<int32_t>(dim(rng, 0, vocab - 1));
        auto q_targets = rand_tensor({b, 2}, rng, 0.0, 1.0);
        GradCheckFn fn = [tgt, q_targets](Tape<double>& t, std::vector<Tensor<double>>& in) {
            auto y = ops::linear(t, in[0], in[1], in[2]);
            auto q = ops::linear(t, ops::take_position(t, in[0], 0), in[3], in[4]);
            auto ce = ops::softmax_cross_entropy(t, y, tgt, -1);
            auto bce = ops::bce_with_logits(t, q, q_targets);
            return ops::add(t, ce, bce);
        };
        return std::pair{fn, std::vector{rand_tensor({b, s, h}, rng), rand_tensor({h, vocab}, rng),
                                         rand_tensor({vocab}, rng), rand_tensor({h, 2}, rng),
                                         rand_tensor({2}, rng)}};
    });

    return results;
}

} // namespace hrmlab
