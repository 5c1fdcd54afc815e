// Autodiff engine: forward values against hand-computed cases, backward
// semantics (accumulation, detach wall, linearity) and the finite-difference
// suite over every kernel.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hrmlab/tensor/gradcheck_suite.hpp"

#include <random>

using namespace hrmlab;

namespace {

template <class S>
Tensor<S> randn(Shape shape, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    auto t = Tensor<S>::zeros(std::move(shape));
    for (auto& v : t.data()) v = static_cast<S>(d(rng));
    return t;
}

} // namespace

TEST_CASE("tensor basics and shape errors") {
    auto t = TensorF::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS_AS(TensorF::from_values({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(TensorF::scalar(4.0f).item() == 4.0f);

    Tape<float> tape;
    auto b = TensorF::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(ops::add(tape, t, b), ShapeError);
}

TEST_CASE("rms_norm matches direct arithmetic") {
    Tape<float> tape;
    auto ones = ops::rms_norm(tape, TensorF::from_values({4}, {1, 1, 1, 1}));
    for (float v : ones.data()) CHECK(v == doctest::Approx(1.0f).epsilon(1e-6));

    auto pair = ops::rms_norm(tape, TensorF::from_values({2}, {3, 4}));
    CHECK(pair.data()[0] == doctest::Approx(0.84853f).epsilon(1e-4)); // rms = sqrt(12.5)
    CHECK(pair.data()[1] == doctest::Approx(1.13137f).epsilon(1e-4));
}

TEST_CASE("softmax rows are simplex points") {
    std::mt19937_64 rng(3);
    Tape<float> tape;
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> d(1, 8);
        auto x = randn<float>({d(rng), d(rng)}, 100 + static_cast<uint64_t>(trial));
        auto y = ops::softmax(tape, x);
        size_t n = static_cast<size_t>(y.dim(1));
        for (size_t r = 0; r < static_cast<size_t>(y.dim(0)); ++r) {
            double sum = 0;
            for (size_t j = 0; j < n; ++j) {
                CHECK(y.ptr()[r * n + j] >= 0.0f);
                sum += y.ptr()[r * n + j];
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("attention with one key/value returns that value row") {
    Tape<float> tape;
    auto q = randn<float>({1, 1, 4}, 1);
    auto k = randn<float>({1, 1, 4}, 2);
    auto v = randn<float>({1, 1, 4}, 3);
    auto out = ops::attention(tape, q, k, v, 2);
    for (int i = 0; i < 4; ++i) CHECK(out.ptr()[i] == doctest::Approx(v.ptr()[i]).epsilon(1e-6));
}

TEST_CASE("attention matches a naive softmax(QK^T/sqrt(d))V evaluation") {
    // brute-force oracle, single head, no rotary
    const int T = 3, D = 4;
    auto q = randn<double>({1, T, D}, 11);
    auto k = randn<double>({1, T, D}, 12);
    auto v = randn<double>({1, T, D}, 13);
    Tape<double> tape;
    auto out = ops::attention(tape, q, k, v, 1);

    double expected[T][D] = {};
    for (int i = 0; i < T; ++i) {
        double scores[T];
        double mx = -1e30;
        for (int j = 0; j < T; ++j) {
            double s = 0;
            for (int d = 0; d < D; ++d) s += q.ptr()[i * D + d] * k.ptr()[j * D + d];
            scores[j] = s / std::sqrt(static_cast<double>(D));
            mx = std::max(mx, scores[j]);
        }
        double z = 0;
        for (int j = 0; j < T; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            z += scores[j];
        }
        for (int j = 0; j < T; ++j)
            for (int d = 0; d < D; ++d) expected[i][d] += scores[j] / z * v.ptr()[j * D + d];
    }
    for (int i = 0; i < T; ++i)
        for (int d = 0; d < D; ++d)
            CHECK(out.ptr()[i * D + d] == doctest::Approx(expected[i][d]).epsilon(1e-10));
}

TEST_CASE("cross-entropy hand cases") {
    Tape<float> tape;

    auto uniform = TensorF::zeros({1, 1, 10});
    CHECK(ops::softmax_cross_entropy(tape, uniform, {3}).item() ==
          doctest::Approx(std::log(10.0)).epsilon(1e-6));

    auto peaked = TensorF::zeros({1, 1, 5});
    peaked.ptr()[2] = 1000.0f;
    CHECK(ops::softmax_cross_entropy(tape, peaked, {2}).item() == doctest::Approx(0.0).epsilon(1e-6));

    auto two = TensorF::from_values({1, 1, 2}, {0.0f, std::log(3.0f)});
    CHECK(ops::softmax_cross_entropy(tape, two, {0}).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6)); // -ln(0.25)

    CHECK_THROWS_AS(ops::softmax_cross_entropy(tape, two, {-1}, -1), ValueError); // all ignored
    CHECK_THROWS_AS(ops::softmax_cross_entropy(tape, two, {7}), ValueError);      // target out of range
}

TEST_CASE("bce hand cases") {
    Tape<float> tape;
    auto q0 = TensorF::scalar(0.0f);
    CHECK(ops::bce_with_logits(tape, q0, TensorF::scalar(0.5f)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(ops::bce_with_logits(tape, TensorF::scalar(20.0f), TensorF::scalar(1.0f)).item() ==
          doctest::Approx(0.0).epsilon(1e-6));
    CHECK(ops::bce_with_logits(tape, TensorF::scalar(-3.0f), TensorF::scalar(1.0f)).item() ==
          doctest::Approx(std::log1p(std::exp(3.0))).epsilon(1e-6)); // 3.048587
    CHECK_THROWS_AS(ops::bce_with_logits(tape, q0, TensorF::scalar(1.5f)), ValueError);
}

TEST_CASE("backward of x*x and the detach wall") {
    Tape<float> tape;
    auto x = TensorF::scalar(3.0f).set_requires_grad(true);
    auto y = ops::mul(tape, x, x);
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0f));

    Tape<float> tape2;
    auto x2 = TensorF::scalar(3.0f).set_requires_grad(true);
    auto y2 = ops::mul(tape2, ops::detach(x2), x2);
    tape2.backward(y2);
    CHECK(x2.grad()[0] == doctest::Approx(3.0f)); // no gradient through detach

    CHECK_THROWS_AS(tape.backward(TensorF::zeros({2})), ShapeError); // non-scalar loss
}

TEST_CASE("repeated backward accumulates, zero_grad clears") {
    Tape<float> tape;
    auto x = TensorF::scalar(2.0f).set_requires_grad(true);
    auto y = ops::mul(tape, x, x);
    tape.backward(y);
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(8.0f));
    x.zero_grad();
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0f));
}

TEST_CASE("detach inserted on an edge zeroes exactly that path's contribution") {
    // f(x) = x*x + detach(x)*x: analytic truncated gradient is 2x + x
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int trial = 0; trial < 10; ++trial) {
        float xv = static_cast<float>(d(rng));
        Tape<float> tape;
        auto x = TensorF::scalar(xv).set_requires_grad(true);
        auto f = ops::add(tape, ops::mul(tape, x, x), ops::mul(tape, ops::detach(x), x));
        tape.backward(f);
        CHECK(x.grad()[0] == doctest::Approx(2 * xv + xv).epsilon(1e-5));
    }
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
    auto x = randn<float>({3, 4}, 77);
    auto w1 = randn<float>({4, 2}, 78);
    auto w2 = randn<float>({4, 2}, 79);

    auto grad_of = [&](bool joint) {
        Tape<float> tape;
        auto xx = x.clone().set_requires_grad(true);
        auto l1 = ops::l2_norm(tape, ops::matmul(tape, xx, w1));
        auto l2 = ops::l2_norm(tape, ops::matmul(tape, xx, w2));
        if (joint) {
            tape.backward(ops::add(tape, l1, l2));
        } else {
            tape.backward(l1);
            tape.backward(l2);
        }
        return xx.grad_or_zero();
    };
    auto joint = grad_of(true);
    auto split = grad_of(false);
    for (size_t i = 0; i < joint.size(); ++i) CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-6));
}

TEST_CASE("no-grad scope suppresses node recording and restores state") {
    Tape<float> tape;
    auto x = TensorF::scalar(1.0f).set_requires_grad(true);
    {
        NoGradScope<float> ng(tape);
        auto y = ops::mul(tape, x, x);
        CHECK_FALSE(y.requires_grad());
        {
            NoGradScope<float> inner(tape);
            CHECK_FALSE(tape.recording());
        }
        CHECK_FALSE(tape.recording());
    }
    CHECK(tape.recording());
    CHECK(tape.node_count() == 0);
}

TEST_CASE("finite_diff_check validates epsilon and handles constants") {
    GradCheckFn constant = [](Tape<double>&, std::vector<Tensor<double>>&) {
        return Tensor<double>::scalar(2.5);
    };
    std::vector<Tensor<double>> inputs{Tensor<double>::from_values({2}, {1.0, 2.0})};
    CHECK(finite_diff_check(constant, inputs, 1e-5) == doctest::Approx(0.0));
    CHECK_THROWS_AS(finite_diff_check(constant, inputs, 0.0), ValueError);
}

TEST_CASE("linear layer finite differences are exact to 1e-6") {
    GradCheckFn fn = [](Tape<double>& t, std::vector<Tensor<double>>& in) {
        auto y = ops::linear(t, in[0], in[1], in[2]);
        return ops::l2_norm(t, y);
    };
    std::vector<Tensor<double>> inputs{randn<double>({3, 5}, 21), randn<double>({5, 4}, 22),
                                       randn<double>({4}, 23)};
    CHECK(finite_diff_check(fn, inputs, 1e-5) <= 1e-6);
}

TEST_CASE("every kernel passes the 64-bit finite-difference suite") {
    // >= 20 seeds per kernel, small shapes; the acceptance suite repeats this
    // with the full seed budget and a timer.
    for (const auto& r : gradcheck_kernel_suite(20)) {
        INFO(r.name);
        CHECK(r.max_rel_err <= 1e-5);
    }
}
