#pragma once

// Vector primitives behind all tensor math. Each primitive has a scalar
// reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant. The backend is selected once at startup (cpuid, overridable via
// HRMLAB_BACKEND=scalar|avx2 or force()) and every variant pair is
// equivalence-tested against the scalar reference.

#include <cstddef>
#include <string_view>

namespace hrmlab::kernels {

enum class Backend { Scalar, Avx2 };

bool supported(Backend b);
Backend active();
void force(Backend b); // throws ValueError if unsupported on this CPU/build
void reset();          // re-run auto selection (honors HRMLAB_BACKEND)
std::string_view name(Backend b);

template <class S>
struct OpTable {
    void (*add)(const S*, const S*, S*, size_t);
    void (*sub)(const S*, const S*, S*, size_t);
    void (*mul)(const S*, const S*, S*, size_t);
    void (*scale)(const S*, S, S*, size_t);
    void (*axpy)(S, const S*, S*, size_t); // y += a*x
    S (*dot)(const S*, const S*, size_t);
    S (*sum)(const S*, size_t);
    S (*max)(const S*, size_t); // -inf on empty input
};

template <class S> const OpTable<S>& table();

template <class S> inline void add(const S* a, const S* b, S* out, size_t n) { table<S>().add(a, b, out, n); }
template <class S> inline void sub(const S* a, const S* b, S* out, size_t n) { table<S>().sub(a, b, out, n); }
template <class S> inline void mul(const S* a, const S* b, S* out, size_t n) { table<S>().mul(a, b, out, n); }
template <class S> inline void scale(const S* a, S s, S* out, size_t n) { table<S>().scale(a, s, out, n); }
template <class S> inline void axpy(S alpha, const S* x, S* y, size_t n) { table<S>().axpy(alpha, x, y, n); }
template <class S> inline S dot(const S* a, const S* b, size_t n) { return table<S>().dot(a, b, n); }
template <class S> inline S sum(const S* a, size_t n) { return table<S>().sum(a, n); }
template <class S> inline S max(const S* a, size_t n) { return table<S>().max(a, n); }

// Row-major matrix products built on the dispatched axpy/dot primitives.
// C is [m,n] unless noted; set accumulate to add into existing C.

// C (+)= A[m,k] * B[k,n]
template <class S>
void matmul_nn(const S* a, const S* b, S* c, size_t m, size_t k, size_t n, bool accumulate = false) {
    for (size_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        if (!accumulate)
            for (size_t j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            if (arow[p] != S(0)) axpy(arow[p], b + p * n, crow, n);
        }
    }
}

// C (+)= A[m,k] * B^T with B given as [n,k]
template <class S>
void matmul_nt(const S* a, const S* bt, S* c, size_t m, size_t k, size_t n, bool accumulate = false) {
    for (size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            S v = dot(arow, bt + j * k, k);
            crow[j] = accumulate ? crow[j] + v : v;
        }
    }
}

// C[k,n] (+)= A^T * B with A given as [m,k], B as [m,n]
template <class S>
void matmul_tn(const S* a, const S* b, S* c, size_t m, size_t k, size_t n, bool accumulate = false) {
    if (!accumulate)
        for (size_t idx = 0; idx < k * n; ++idx) c[idx] = S(0);
    for (size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        const S* brow = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            if (arow[p] != S(0)) axpy(arow[p], brow, c + p * n, n);
        }
    }
}

} // namespace hrmlab::kernels
