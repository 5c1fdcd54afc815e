#pragma once

#include "hrmlab/common.hpp"

#include <string>

namespace hrmlab {

enum class GradMode { OneStep, FullBptt };

inline std::string to_string(GradMode m) { return m == GradMode::OneStep ? "one_step" : "full_bptt"; }

inline GradMode grad_mode_from_string(const std::string& s) {
    if (s == "one_step") return GradMode::OneStep;
    if (s == "full_bptt") return GradMode::FullBptt;
    throw ValidationError(strcat("unknown grad_mode '", s, "' (one_step|full_bptt)"));
}

struct ModelConfig {
    int vocab_size = 5;
    int seq_len = 16;
    int hidden_dim = 64;
    int num_heads = 4;
    int l_layers = 4;
    int h_layers = 0;  // 0 disables the slow module entirely
    int t = 1;         // L micro-steps per H update
    int cycles = 1;    // H updates per segment
    int m_max = 4;     // maximum ACT segments
    GradMode grad_mode = GradMode::OneStep;

    int micro_steps() const { return cycles * t; }

    void validate() const {
        if (vocab_size < 2) throw ValidationError("model.vocab_size must be >= 2");
        if (seq_len < 1) throw ValidationError("model.seq_len must be >= 1");
        if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0)
            throw ValidationError(strcat("model.hidden_dim ", hidden_dim, " must be divisible by num_heads ",
                                         num_heads));
        if ((hidden_dim / num_heads) % 2 != 0)
            throw ValidationError("model head_dim must be even (rotary pairs)");
        if (l_layers < 1) throw ValidationError("model.l_layers must be >= 1");
        if (h_layers < 0) throw ValidationError("model.h_layers must be >= 0");
        if (t < 1) throw ValidationError("model.t must be >= 1");
        if (cycles < 1) throw ValidationError("model.cycles must be >= 1");
        if (m_max < 1) throw ValidationError("model.m_max must be >= 1");
        if (h_layers == 0 && cycles != 1)
            throw ValidationError("model.h_layers = 0 requires cycles = 1 (no slow loop exists)");
    }
};

} // namespace hrmlab
