#pragma once

// Central finite differences against tape gradients, in 64-bit. The numeric
// side never touches the tape, so it stays an independent oracle for the
// analytic rules.

#include "hrmlab/tensor/ops.hpp"

#include <functional>

namespace hrmlab {

using GradCheckFn = std::function<Tensor<double>(Tape<double>&, std::vector<Tensor<double>>&)>;

// Returns the worst relative error over all coordinates of all inputs,
// where rel = |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double finite_diff_check(const GradCheckFn& f, std::vector<Tensor<double>> inputs, double epsilon) {
    if (epsilon <= 0) throw ValueError(strcat("finite_diff_check: epsilon must be positive, got ", epsilon));
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }

    Tape<double> tape;
    auto loss = f(tape, inputs);
    if (loss.numel() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
    tape.backward(loss);

    double worst = 0.0;
    for (auto& t : inputs) {
        auto analytic = t.grad_or_zero();
        for (int64_t c = 0; c < t.numel(); ++c) {
            double saved = t.ptr()[c];
            auto eval = [&](double v) {
                t.ptr()[c] = v;
                Tape<double> scratch;
                scratch.set_recording(false);
                return f(scratch, inputs).item();
            };
            double fp = eval(saved + epsilon);
            double fm = eval(saved - epsilon);
            t.ptr()[c] = saved;
            double numeric = (fp - fm) / (2.0 * epsilon);
            double a = analytic[static_cast<size_t>(c)];
            double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

} // namespace hrmlab
