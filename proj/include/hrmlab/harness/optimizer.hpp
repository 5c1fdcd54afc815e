#pragma once

// Adam with decoupled weight decay and bias correction. Parameters without an
// accumulated gradient this step are still decayed only if they saw one; a
// fully zero gradient leaves them untouched when decay is zero.

#include "hrmlab/model/model.hpp"

#include <cmath>
#include <vector>

namespace hrmlab {

struct OptimConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.1;
    double epsilon = 1e-8;
    int warmup_steps = 100;
    int total_steps = 2000;

    void validate() const {
        if (learning_rate <= 0) throw ValidationError("optimizer.learning_rate must be > 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ValidationError("optimizer betas must lie in [0,1)");
        if (weight_decay < 0) throw ValidationError("optimizer.weight_decay must be >= 0");
        if (warmup_steps < 0) throw ValidationError("optimizer.warmup_steps must be >= 0");
        if (total_steps < warmup_steps)
            throw ValidationError("optimizer.total_steps must be >= warmup_steps");
    }

    // Linear warmup, then constant.
    double lr_at(int step) const {
        if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
        return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
};

template <class S>
class AdamW {
public:
    AdamW(std::vector<NamedParam<S>>& params, OptimConfig cfg) : params_(params), cfg_(cfg), lr_(cfg.learning_rate) {
        slots_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            size_t n = static_cast<size_t>(params[i].tensor.numel());
            slots_[i].m.assign(n, S(0));
            slots_[i].v.assign(n, S(0));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    int steps_taken() const { return t_; }

    // One update from the gradients currently accumulated on the parameters;
    // clears them afterwards.
    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].tensor;
            auto g = p.grad_or_zero();
            auto& slot = slots_[i];
            S* w = p.ptr();
            for (size_t j = 0; j < g.size(); ++j) {
                double gj = static_cast<double>(g[j]);
                double m = cfg_.beta1 * static_cast<double>(slot.m[j]) + (1.0 - cfg_.beta1) * gj;
                double v = cfg_.beta2 * static_cast<double>(slot.v[j]) + (1.0 - cfg_.beta2) * gj * gj;
                slot.m[j] = static_cast<S>(m);
                slot.v[j] = static_cast<S>(v);
                double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.epsilon);
                double wj = static_cast<double>(w[j]);
                wj -= lr_ * (update + cfg_.weight_decay * wj);
                w[j] = static_cast<S>(wj);
            }
            p.zero_grad();
        }
    }

private:
    struct Slot {
        std::vector<S> m, v;
    };
    std::vector<NamedParam<S>>& params_;
    OptimConfig cfg_;
    std::vector<Slot> slots_;
    double lr_ = 0.0;
    int t_ = 0;
};

} // namespace hrmlab
