// Scalar reference implementations. These define the semantics the SIMD
// variants are tested against.

#include "hrmlab/kernels/kernels.hpp"

#include <limits>

namespace hrmlab::kernels::scalar {

namespace {

template <class S>
void add_(const S* a, const S* b, S* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class S>
void sub_(const S* a, const S* b, S* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class S>
void mul_(const S* a, const S* b, S* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class S>
void scale_(const S* a, S s, S* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <class S>
void axpy_(S alpha, const S* x, S* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class S>
S dot_(const S* a, const S* b, size_t n) {
    S acc = S(0);
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <class S>
S sum_(const S* a, size_t n) {
    S acc = S(0);
    for (size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <class S>
S max_(const S* a, size_t n) {
    S m = -std::numeric_limits<S>::infinity();
    for (size_t i = 0; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

} // namespace

template <class S>
OpTable<S> make_table() {
    OpTable<S> t;
    t.add = add_<S>;
    t.sub = sub_<S>;
    t.mul = mul_<S>;
    t.scale = scale_<S>;
    t.axpy = axpy_<S>;
    t.dot = dot_<S>;
    t.sum = sum_<S>;
    t.max = max_<S>;
    return t;
}

template OpTable<float> make_table<float>();
template OpTable<double> make_table<double>();

} // namespace hrmlab::kernels::scalar
