#include "hrmlab/kernels/kernels.hpp"

#include "hrmlab/common.hpp"

#include <cstdlib>
#include <cstring>

namespace hrmlab::kernels {

namespace scalar {
template <class S> OpTable<S> make_table();
}
namespace avx2 {
bool built();
template <class S> OpTable<S> make_table();
}

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

struct State {
    Backend backend;
    OpTable<float> f32;
    OpTable<double> f64;

    void install(Backend b) {
        backend = b;
        if (b == Backend::Avx2) {
            f32 = avx2::make_table<float>();
            f64 = avx2::make_table<double>();
        } else {
            f32 = scalar::make_table<float>();
            f64 = scalar::make_table<double>();
        }
    }

    State() { install(auto_select()); }

    static Backend auto_select() {
        if (const char* env = std::getenv("HRMLAB_BACKEND")) {
            if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
            if (std::strcmp(env, "avx2") == 0 && supported(Backend::Avx2)) return Backend::Avx2;
        }
        return supported(Backend::Avx2) ? Backend::Avx2 : Backend::Scalar;
    }
};

State& state() {
    static State s;
    return s;
}

} // namespace

bool supported(Backend b) {
    switch (b) {
    case Backend::Scalar: return true;
    case Backend::Avx2: return avx2::built() && cpu_has_avx2();
    }
    return false;
}

Backend active() { return state().backend; }

void force(Backend b) {
    if (!supported(b)) throw ValueError(strcat("kernel backend not supported here: ", name(b)));
    state().install(b);
}

void reset() { state().install(State::auto_select()); }

std::string_view name(Backend b) {
    switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    }
    return "?";
}

template <> const OpTable<float>& table<float>() { return state().f32; }
template <> const OpTable<double>& table<double>() { return state().f64; }

} // namespace hrmlab::kernels
