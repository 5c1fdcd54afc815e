#pragma once

// Differentiable primitives. Forward values go through the dispatched vector
// kernels; every op registers a backward rule on the tape when recording is
// on and at least one input is tracked.

#include "hrmlab/kernels/kernels.hpp"
#include "hrmlab/tensor/tape.hpp"
#include "hrmlab/tensor/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace hrmlab::ops {

namespace detail {

template <class S>
void check_finite(const char* op, const Tensor<S>& t) {
#ifndef NDEBUG
    for (S v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw ValueError(strcat(op, ": non-finite input value"));
#else
    (void)op;
    (void)t;
#endif
}

template <class S>
bool track(const Tape<S>& tape, const Tensor<S>& a) {
    return tape.recording() && a.requires_grad();
}

template <class S>
bool track(const Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    return tape.recording() && (a.requires_grad() || b.requires_grad());
}

template <class S>
bool track(const Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& c) {
    return tape.recording() && (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strcat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

template <class S>
inline S sigmoid(S x) {
    if (x >= S(0)) {
        S e = std::exp(-x);
        return S(1) / (S(1) + e);
    }
    S e = std::exp(x);
    return e / (S(1) + e);
}

} // namespace detail

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape("add", a, b);
    detail::check_finite("add", a);
    detail::check_finite("add", b);
    auto out = Tensor<S>::zeros(a.shape());
    kernels::add(a.ptr(), b.ptr(), out.ptr(), static_cast<size_t>(a.numel()));
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        tape.push_node([ad = a.raw(), bd = b.raw(), od = out.raw()](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (ad->requires_grad) kernels::axpy(S(1), g->data(), adj.accum(ad).data(), g->size());
            if (bd->requires_grad) kernels::axpy(S(1), g->data(), adj.accum(bd).data(), g->size());
        });
    }
    return out;
}

template <class S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape("mul", a, b);
    detail::check_finite("mul", a);
    detail::check_finite("mul", b);
    auto out = Tensor<S>::zeros(a.shape());
    kernels::mul(a.ptr(), b.ptr(), out.ptr(), static_cast<size_t>(a.numel()));
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        tape.push_node([ad = a.raw(), bd = b.raw(), od = out.raw()](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            size_t n = g->size();
            std::vector<S> tmp(n);
            if (ad->requires_grad) {
                kernels::mul(g->data(), bd->values.data(), tmp.data(), n);
                kernels::axpy(S(1), tmp.data(), adj.accum(ad).data(), n);
            }
            if (bd->requires_grad) {
                kernels::mul(g->data(), ad->values.data(), tmp.data(), n);
                kernels::axpy(S(1), tmp.data(), adj.accum(bd).data(), n);
            }
        });
    }
    return out;
}

// a: [..., m, k] (leading dims collapsed into rows), b: [k, n]
template <class S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.dim(a.rank() - 1) != b.dim(0))
        throw ShapeError(strcat("matmul: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
    detail::check_finite("matmul", a);
    detail::check_finite("matmul", b);
    size_t k = static_cast<size_t>(b.dim(0));
    size_t n = static_cast<size_t>(b.dim(1));
    size_t rows = static_cast<size_t>(a.numel()) / k;
    Shape out_shape = a.shape();
    out_shape.back() = static_cast<int64_t>(n);
    auto out = Tensor<S>::zeros(out_shape);
    kernels::matmul_nn(a.ptr(), b.ptr(), out.ptr(), rows, k, n);
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        tape.push_node([ad = a.raw(), bd = b.raw(), od = out.raw(), rows, k, n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (ad->requires_grad)
                kernels::matmul_nt(g->data(), bd->values.data(), adj.accum(ad).data(), rows, n, k, true);
            if (bd->requires_grad)
                kernels::matmul_tn(ad->values.data(), g->data(), adj.accum(bd).data(), rows, k, n, true);
        });
    }
    return out;
}

// x: [..., in], w: [in, out], bias: [out] or undefined
template <class S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias) {
    if (x.rank() < 1 || w.rank() != 2 || x.dim(x.rank() - 1) != w.dim(0))
        throw ShapeError(strcat("linear: shape mismatch ", shape_str(x.shape()), " vs ", shape_str(w.shape())));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(1)))
        throw ShapeError(strcat("linear: bias shape ", shape_str(bias.shape()), " vs weight ", shape_str(w.shape())));
    detail::check_finite("linear", x);
    detail::check_finite("linear", w);
    size_t in = static_cast<size_t>(w.dim(0));
    size_t outn = static_cast<size_t>(w.dim(1));
    size_t rows = static_cast<size_t>(x.numel()) / in;
    Shape out_shape = x.shape();
    out_shape.back() = static_cast<int64_t>(outn);
    auto out = Tensor<S>::zeros(out_shape);
    kernels::matmul_nn(x.ptr(), w.ptr(), out.ptr(), rows, in, outn);
    if (bias.defined())
        for (size_t r = 0; r < rows; ++r)
            kernels::add(out.ptr() + r * outn, bias.ptr(), out.ptr() + r * outn, outn);
    bool tracked = tape.recording() &&
                   (x.requires_grad() || w.requires_grad() || (bias.defined() && bias.requires_grad()));
    if (tracked) {
        out.set_requires_grad(true);
        auto biasd = bias.defined() ? bias.raw() : nullptr;
        tape.push_node([xd = x.raw(), wd = w.raw(), biasd, od = out.raw(), rows, in, outn](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (xd->requires_grad)
                kernels::matmul_nt(g->data(), wd->values.data(), adj.accum(xd).data(), rows, outn, in, true);
            if (wd->requires_grad)
                kernels::matmul_tn(xd->values.data(), g->data(), adj.accum(wd).data(), rows, in, outn, true);
            if (biasd && biasd->requires_grad) {
                auto& gb = adj.accum(biasd);
                for (size_t r = 0; r < rows; ++r) kernels::axpy(S(1), g->data() + r * outn, gb.data(), outn);
            }
        });
    }
    return out;
}

// ids indexes rows of table [vocab, width]; output [batch, seq, width],
// each row scaled by `scale`.
template <class S>
Tensor<S> embedding(Tape<S>& tape, const Tensor<S>& table, const std::vector<int32_t>& ids, int64_t batch,
                    int64_t seq, S scale) {
    if (table.rank() != 2) throw ShapeError(strcat("embedding: table must be 2-d, got ", shape_str(table.shape())));
    if (static_cast<int64_t>(ids.size()) != batch * seq)
        throw ShapeError(strcat("embedding: ", ids.size(), " ids for batch*seq=", batch * seq));
    int64_t vocab = table.dim(0);
    int64_t width = table.dim(1);
    for (int32_t id : ids)
        if (id < 0 || id >= vocab) throw ValueError(strcat("embedding: token id ", id, " outside vocab ", vocab));
    auto out = Tensor<S>::zeros({batch, seq, width});
    size_t w = static_cast<size_t>(width);
    for (size_t r = 0; r < ids.size(); ++r)
        kernels::scale(table.ptr() + static_cast<size_t>(ids[r]) * w, scale, out.ptr() + r * w, w);
    if (detail::track(tape, table)) {
        out.set_requires_grad(true);
        tape.push_node([td = table.raw(), od = out.raw(), ids, w, scale](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            auto& gt = adj.accum(td);
            for (size_t r = 0; r < ids.size(); ++r)
                kernels::axpy(scale, g->data() + r * w, gt.data() + static_cast<size_t>(ids[r]) * w, w);
        });
    }
    return out;
}

// softmax over the last axis
template <class S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& x) {
    if (x.rank() < 1) throw ShapeError("softmax: rank-0 input");
    detail::check_finite("softmax", x);
    size_t n = static_cast<size_t>(x.dim(x.rank() - 1));
    size_t rows = static_cast<size_t>(x.numel()) / n;
    auto out = Tensor<S>::zeros(x.shape());
    for (size_t r = 0; r < rows; ++r) {
        const S* xi = x.ptr() + r * n;
        S* yi = out.ptr() + r * n;
        S m = kernels::max(xi, n);
        S z = S(0);
        for (size_t j = 0; j < n; ++j) {
            yi[j] = std::exp(xi[j] - m);
            z += yi[j];
        }
        kernels::scale(yi, S(1) / z, yi, n);
    }
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        tape.push_node([xd = x.raw(), od = out.raw(), rows, n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad) return;
            auto& gx = adj.accum(xd);
            for (size_t r = 0; r < rows; ++r) {
                const S* yi = od->values.data() + r * n;
                const S* gi = g->data() + r * n;
                S inner = kernels::dot(gi, yi, n);
                for (size_t j = 0; j < n; ++j) gx[r * n + j] += yi[j] * (gi[j] - inner);
            }
        });
    }
    return out;
}

// x / sqrt(mean(x^2) + eps) over the last axis
template <class S>
Tensor<S> rms_norm(Tape<S>& tape, const Tensor<S>& x, S eps = S(1e-6)) {
    if (x.rank() < 1) throw ShapeError("rms_norm: rank-0 input");
    detail::check_finite("rms_norm", x);
    size_t n = static_cast<size_t>(x.dim(x.rank() - 1));
    size_t rows = static_cast<size_t>(x.numel()) / n;
    auto out = Tensor<S>::zeros(x.shape());
    std::vector<S> inv_rms(rows);
    for (size_t r = 0; r < rows; ++r) {
        const S* xi = x.ptr() + r * n;
        S ms = kernels::dot(xi, xi, n) / static_cast<S>(n);
        inv_rms[r] = S(1) / std::sqrt(ms + eps);
        kernels::scale(xi, inv_rms[r], out.ptr() + r * n, n);
    }
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        tape.push_node([xd = x.raw(), od = out.raw(), inv_rms = std::move(inv_rms), rows, n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad) return;
            auto& gx = adj.accum(xd);
            for (size_t r = 0; r < rows; ++r) {
                const S* xi = xd->values.data() + r * n;
                const S* gi = g->data() + r * n;
                S ir = inv_rms[r];
                // d/dx_j = ir*g_j - x_j * ir^3 * dot(g,x)/n
                S c = kernels::dot(gi, xi, n) * ir * ir * ir / static_cast<S>(n);
                for (size_t j = 0; j < n; ++j) gx[r * n + j] += ir * gi[j] - c * xi[j];
            }
        });
    }
    return out;
}

// silu(gate) * up
template <class S>
Tensor<S> silu_gate(Tape<S>& tape, const Tensor<S>& gate, const Tensor<S>& up) {
    detail::require_same_shape("silu_gate", gate, up);
    detail::check_finite("silu_gate", gate);
    detail::check_finite("silu_gate", up);
    size_t n = static_cast<size_t>(gate.numel());
    auto out = Tensor<S>::zeros(gate.shape());
    std::vector<S> sig(n);
    for (size_t i = 0; i < n; ++i) {
        sig[i] = detail::sigmoid(gate.ptr()[i]);
        out.ptr()[i] = gate.ptr()[i] * sig[i] * up.ptr()[i];
    }
    if (detail::track(tape, gate, up)) {
        out.set_requires_grad(true);
        tape.push_node([gd = gate.raw(), ud = up.raw(), od = out.raw(), sig = std::move(sig), n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (gd->requires_grad) {
                auto& gg = adj.accum(gd);
                for (size_t i = 0; i < n; ++i) {
                    S x = gd->values[i];
                    S s = sig[i];
                    S dsilu = s * (S(1) + x * (S(1) - s));
                    gg[i] += (*g)[i] * ud->values[i] * dsilu;
                }
            }
            if (ud->requires_grad) {
                auto& gu = adj.accum(ud);
                for (size_t i = 0; i < n; ++i) gu[i] += (*g)[i] * gd->values[i] * sig[i];
            }
        });
    }
    return out;
}

// Position table for rotary attention: cos/sin of t * base^(-2j/head_dim)
// for pair index j < head_dim/2, applied half-split (x1 = first half of the
// head vector, x2 = second half).
template <class S>
struct RotaryTable {
    int64_t seq = 0;
    int64_t half = 0;
    std::vector<S> cos_t, sin_t; // [seq, half]

    static RotaryTable build(int64_t seq, int64_t head_dim, double base = 10000.0) {
        if (head_dim % 2 != 0) throw ShapeError(strcat("rotary: head_dim must be even, got ", head_dim));
        RotaryTable r;
        r.seq = seq;
        r.half = head_dim / 2;
        r.cos_t.resize(static_cast<size_t>(seq * r.half));
        r.sin_t.resize(static_cast<size_t>(seq * r.half));
        for (int64_t t = 0; t < seq; ++t)
            for (int64_t j = 0; j < r.half; ++j) {
                double theta = static_cast<double>(t) *
                               std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
                r.cos_t[static_cast<size_t>(t * r.half + j)] = static_cast<S>(std::cos(theta));
                r.sin_t[static_cast<size_t>(t * r.half + j)] = static_cast<S>(std::sin(theta));
            }
        return r;
    }

    void rotate(S* row, int64_t t) const {
        const S* c = cos_t.data() + static_cast<size_t>(t * half);
        const S* s = sin_t.data() + static_cast<size_t>(t * half);
        for (int64_t j = 0; j < half; ++j) {
            S x1 = row[j], x2 = row[half + j];
            row[j] = x1 * c[j] - x2 * s[j];
            row[half + j] = x1 * s[j] + x2 * c[j];
        }
    }

    void rotate_back(S* row, int64_t t) const {
        const S* c = cos_t.data() + static_cast<size_t>(t * half);
        const S* s = sin_t.data() + static_cast<size_t>(t * half);
        for (int64_t j = 0; j < half; ++j) {
            S g1 = row[j], g2 = row[half + j];
            row[j] = g1 * c[j] + g2 * s[j];
            row[half + j] = g2 * c[j] - g1 * s[j];
        }
    }
};

// Bidirectional scaled dot-product attention over [batch, seq, width] inputs,
// split into `heads` heads. No causal mask. Rotary position information is
// applied to q and k when a table is given.
template <class S>
Tensor<S> attention(Tape<S>& tape, const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads,
                    const RotaryTable<S>* rope = nullptr) {
    if (q.rank() != 3) throw ShapeError(strcat("attention: expected rank-3 q, got ", shape_str(q.shape())));
    detail::require_same_shape("attention", q, k);
    detail::require_same_shape("attention", q, v);
    int64_t batch = q.dim(0), seq = q.dim(1), width = q.dim(2);
    if (heads <= 0 || width % heads != 0)
        throw ShapeError(strcat("attention: width ", width, " not divisible by heads ", heads));
    int64_t dh = width / heads;
    if (rope && (rope->half * 2 != dh || rope->seq < seq))
        throw ShapeError("attention: rotary table does not match head_dim/seq");
    detail::check_finite("attention", q);
    detail::check_finite("attention", k);
    detail::check_finite("attention", v);

    size_t st = static_cast<size_t>(seq), sdh = static_cast<size_t>(dh);
    size_t per_bh = st * sdh;
    size_t nbh = static_cast<size_t>(batch) * static_cast<size_t>(heads);
    std::vector<S> qr(nbh * per_bh), kr(nbh * per_bh), vt(nbh * per_bh);
    std::vector<S> probs(nbh * st * st);
    S scale = S(1) / std::sqrt(static_cast<S>(dh));
    auto out = Tensor<S>::zeros(q.shape());

    auto gather = [&](const Tensor<S>& src, std::vector<S>& dst, bool rot) {
        for (int64_t b = 0; b < batch; ++b)
            for (int h = 0; h < heads; ++h) {
                size_t bh = static_cast<size_t>(b) * heads + static_cast<size_t>(h);
                for (int64_t t = 0; t < seq; ++t) {
                    const S* s0 = src.ptr() + (static_cast<size_t>(b) * st + static_cast<size_t>(t)) *
                                                  static_cast<size_t>(width) +
                                  static_cast<size_t>(h) * sdh;
                    S* d0 = dst.data() + bh * per_bh + static_cast<size_t>(t) * sdh;
                    std::copy(s0, s0 + sdh, d0);
                    if (rot && rope) rope->rotate(d0, t);
                }
            }
    };
    gather(q, qr, true);
    gather(k, kr, true);
    gather(v, vt, false);

    std::vector<S> srow(st);
    for (size_t bh = 0; bh < nbh; ++bh) {
        const S* qb = qr.data() + bh * per_bh;
        const S* kb = kr.data() + bh * per_bh;
        const S* vb = vt.data() + bh * per_bh;
        S* pb = probs.data() + bh * st * st;
        for (size_t i = 0; i < st; ++i) {
            for (size_t j = 0; j < st; ++j) srow[j] = scale * kernels::dot(qb + i * sdh, kb + j * sdh, sdh);
            S m = kernels::max(srow.data(), st);
            S z = S(0);
            for (size_t j = 0; j < st; ++j) {
                srow[j] = std::exp(srow[j] - m);
                z += srow[j];
            }
            kernels::scale(srow.data(), S(1) / z, pb + i * st, st);
        }
        // out rows for this (b, head)
        size_t b = bh / static_cast<size_t>(heads);
        size_t h = bh % static_cast<size_t>(heads);
        for (size_t i = 0; i < st; ++i) {
            S* orow = out.ptr() + (b * st + i) * static_cast<size_t>(width) + h * sdh;
            for (size_t j = 0; j < st; ++j)
                if (pb[i * st + j] != S(0)) kernels::axpy(pb[i * st + j], vb + j * sdh, orow, sdh);
        }
    }

    if (detail::track(tape, q, k, v)) {
        out.set_requires_grad(true);
        RotaryTable<S> rope_copy = rope ? *rope : RotaryTable<S>{};
        bool has_rope = rope != nullptr;
        tape.push_node([qd = q.raw(), kd = k.raw(), vd = v.raw(), od = out.raw(), qr = std::move(qr),
                        kr = std::move(kr), vt = std::move(vt), probs = std::move(probs), rope_copy, has_rope,
                        batch, heads, st, sdh, per_bh, width, scale](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            size_t nbh = static_cast<size_t>(batch) * static_cast<size_t>(heads);
            std::vector<S> dout(per_bh), dv(per_bh), dp(st * st), dqr(per_bh), dkr(per_bh);
            std::vector<S>* gq = qd->requires_grad ? &adj.accum(qd) : nullptr;
            std::vector<S>* gk = kd->requires_grad ? &adj.accum(kd) : nullptr;
            std::vector<S>* gv = vd->requires_grad ? &adj.accum(vd) : nullptr;
            for (size_t bh = 0; bh < nbh; ++bh) {
                size_t b = bh / static_cast<size_t>(heads);
                size_t h = bh % static_cast<size_t>(heads);
                const S* pb = probs.data() + bh * st * st;
                const S* qb = qr.data() + bh * per_bh;
                const S* kb = kr.data() + bh * per_bh;
                const S* vb = vt.data() + bh * per_bh;
                for (size_t i = 0; i < st; ++i) {
                    const S* grow = g->data() + (b * st + i) * static_cast<size_t>(width) + h * sdh;
                    std::copy(grow, grow + sdh, dout.data() + i * sdh);
                }
                if (gv) {
                    kernels::matmul_tn(pb, dout.data(), dv.data(), st, st, sdh);
                    for (size_t j = 0; j < st; ++j)
                        kernels::axpy(S(1), dv.data() + j * sdh,
                                      gv->data() + (b * st + j) * static_cast<size_t>(width) + h * sdh, sdh);
                }
                if (gq || gk) {
                    kernels::matmul_nt(dout.data(), vb, dp.data(), st, sdh, st);
                    for (size_t i = 0; i < st; ++i) {
                        const S* pi = pb + i * st;
                        S* dpi = dp.data() + i * st;
                        S inner = kernels::dot(dpi, pi, st);
                        for (size_t j = 0; j < st; ++j) dpi[j] = pi[j] * (dpi[j] - inner) * scale;
                    }
                    if (gq) {
                        kernels::matmul_nn(dp.data(), kb, dqr.data(), st, st, sdh);
                        for (size_t i = 0; i < st; ++i) {
                            S* row = dqr.data() + i * sdh;
                            if (has_rope) rope_copy.rotate_back(row, static_cast<int64_t>(i));
                            kernels::axpy(S(1), row,
                                          gq->data() + (b * st + i) * static_cast<size_t>(width) + h * sdh, sdh);
                        }
                    }
                    if (gk) {
                        kernels::matmul_tn(dp.data(), qb, dkr.data(), st, st, sdh);
                        for (size_t j = 0; j < st; ++j) {
                            S* row = dkr.data() + j * sdh;
                            if (has_rope) rope_copy.rotate_back(row, static_cast<int64_t>(j));
                            kernels::axpy(S(1), row,
                                          gk->data() + (b * st + j) * static_cast<size_t>(width) + h * sdh, sdh);
                        }
                    }
                }
            }
        });
    }
    return out;
}

// concatenate along the last axis
template <class S>
Tensor<S> concat_last(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError(strcat("concat: rank mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
    for (int i = 0; i + 1 < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError(strcat("concat: shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
    size_t na = static_cast<size_t>(a.dim(a.rank() - 1));
    size_t nb = static_cast<size_t>(b.dim(b.rank() - 1));
    size_t rows = static_cast<size_t>(a.numel()) / na;
    Shape out_shape = a.shape();
    out_shape.back() = static_cast<int64_t>(na + nb);
    auto out = Tensor<S>::zeros(out_shape);
    for (size_t r = 0; r < rows; ++r) {
        std::copy(a.ptr() + r * na, a.ptr() + (r + 1) * na, out.ptr() + r * (na + nb));
        std::copy(b.ptr() + r * nb, b.ptr() + (r + 1) * nb, out.ptr() + r * (na + nb) + na);
    }
    if (detail::track(tape, a, b)) {
        out.set_requires_grad(true);
        tape.push_node([ad = a.raw(), bd = b.raw(), od = out.raw(), rows, na, nb](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (ad->requires_grad) {
                auto& ga = adj.accum(ad);
                for (size_t r = 0; r < rows; ++r)
                    kernels::axpy(S(1), g->data() + r * (na + nb), ga.data() + r * na, na);
            }
            if (bd->requires_grad) {
                auto& gb = adj.accum(bd);
                for (size_t r = 0; r < rows; ++r)
                    kernels::axpy(S(1), g->data() + r * (na + nb) + na, gb.data() + r * nb, nb);
            }
        });
    }
    return out;
}

// Gradient wall: value copy with no producer link.
template <class S>
Tensor<S> detach(const Tensor<S>& x) {
    return x.clone();
}

// x[:, t, :] from [batch, seq, width]
template <class S>
Tensor<S> take_position(Tape<S>& tape, const Tensor<S>& x, int64_t t) {
    if (x.rank() != 3) throw ShapeError(strcat("take_position: expected rank-3, got ", shape_str(x.shape())));
    if (t < 0 || t >= x.dim(1)) throw ShapeError(strcat("take_position: index ", t, " outside seq ", x.dim(1)));
    int64_t batch = x.dim(0), seq = x.dim(1), width = x.dim(2);
    auto out = Tensor<S>::zeros({batch, width});
    size_t w = static_cast<size_t>(width);
    for (int64_t b = 0; b < batch; ++b) {
        const S* src = x.ptr() + (static_cast<size_t>(b * seq + t)) * w;
        std::copy(src, src + w, out.ptr() + static_cast<size_t>(b) * w);
    }
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        tape.push_node([xd = x.raw(), od = out.raw(), batch, seq, t, w](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad) return;
            auto& gx = adj.accum(xd);
            for (int64_t b = 0; b < batch; ++b)
                kernels::axpy(S(1), g->data() + static_cast<size_t>(b) * w,
                              gx.data() + static_cast<size_t>(b * seq + t) * w, w);
        });
    }
    return out;
}

// sqrt(sum(x^2)) of the whole tensor, as a scalar
template <class S>
Tensor<S> l2_norm(Tape<S>& tape, const Tensor<S>& x) {
    detail::check_finite("l2_norm", x);
    size_t n = static_cast<size_t>(x.numel());
    S norm = std::sqrt(kernels::dot(x.ptr(), x.ptr(), n));
    auto out = Tensor<S>::scalar(norm);
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        tape.push_node([xd = x.raw(), od = out.raw(), norm, n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad || norm == S(0)) return;
            kernels::axpy((*g)[0] / norm, xd->values.data(), adj.accum(xd).data(), n);
        });
    }
    return out;
}

template <class S>
Tensor<S> reduce_sum(Tape<S>& tape, const Tensor<S>& x) {
    size_t n = static_cast<size_t>(x.numel());
    auto out = Tensor<S>::scalar(kernels::sum(x.ptr(), n));
    if (detail::track(tape, x)) {
        out.set_requires_grad(true);
        tape.push_node([xd = x.raw(), od = out.raw(), n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad) return;
            auto& gx = adj.accum(xd);
            for (size_t i = 0; i < n; ++i) gx[i] += (*g)[0];
        });
    }
    return out;
}

// Mean negative log-likelihood over positions whose target != ignore_id.
// logits: [..., vocab]; targets: one id per leading position.
template <class S>
Tensor<S> softmax_cross_entropy(Tape<S>& tape, const Tensor<S>& logits, const std::vector<int32_t>& targets,
                                int32_t ignore_id = -1) {
    if (logits.rank() < 1) throw ShapeError("cross_entropy: rank-0 logits");
    detail::check_finite("cross_entropy", logits);
    size_t vocab = static_cast<size_t>(logits.dim(logits.rank() - 1));
    size_t rows = static_cast<size_t>(logits.numel()) / vocab;
    if (targets.size() != rows)
        throw ShapeError(strcat("cross_entropy: ", targets.size(), " targets for ", rows, " positions"));
    std::vector<S> probs(rows * vocab);
    size_t counted = 0;
    double loss = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        int32_t t = targets[r];
        const S* xi = logits.ptr() + r * vocab;
        S* pi = probs.data() + r * vocab;
        S m = kernels::max(xi, vocab);
        S z = S(0);
        for (size_t j = 0; j < vocab; ++j) {
            pi[j] = std::exp(xi[j] - m);
            z += pi[j];
        }
        kernels::scale(pi, S(1) / z, pi, vocab);
        if (t == ignore_id) continue;
        if (t < 0 || static_cast<size_t>(t) >= vocab)
            throw ValueError(strcat("cross_entropy: target ", t, " outside vocab ", vocab));
        loss += std::log(static_cast<double>(z)) + static_cast<double>(m) - static_cast<double>(xi[t]);
        ++counted;
    }
    if (counted == 0) throw ValueError("cross_entropy: every position ignored, mean undefined");
    auto out = Tensor<S>::scalar(static_cast<S>(loss / static_cast<double>(counted)));
    if (detail::track(tape, logits)) {
        out.set_requires_grad(true);
        tape.push_node([xd = logits.raw(), od = out.raw(), probs = std::move(probs), targets, ignore_id, rows,
                        vocab, counted](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!xd->requires_grad) return;
            auto& gx = adj.accum(xd);
            S w = (*g)[0] / static_cast<S>(counted);
            for (size_t r = 0; r < rows; ++r) {
                if (targets[r] == ignore_id) continue;
                kernels::axpy(w, probs.data() + r * vocab, gx.data() + r * vocab, vocab);
                gx[r * vocab + static_cast<size_t>(targets[r])] -= w;
            }
        });
    }
    return out;
}

// Mean binary cross-entropy of logits against [0,1] targets, in the
// log-sum-exp stable form. Gradient flows to logits only.
template <class S>
Tensor<S> bce_with_logits(Tape<S>& tape, const Tensor<S>& logits, const Tensor<S>& targets) {
    detail::require_same_shape("bce_with_logits", logits, targets);
    detail::check_finite("bce_with_logits", logits);
    size_t n = static_cast<size_t>(logits.numel());
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(targets.ptr()[i]);
        if (t < 0.0 || t > 1.0) throw ValueError(strcat("bce_with_logits: target ", t, " outside [0,1]"));
        double q = static_cast<double>(logits.ptr()[i]);
        loss += std::max(q, 0.0) - q * t + std::log1p(std::exp(-std::abs(q)));
    }
    auto out = Tensor<S>::scalar(static_cast<S>(loss / static_cast<double>(n)));
    if (detail::track(tape, logits)) {
        out.set_requires_grad(true);
        tape.push_node([qd = logits.raw(), td = targets.raw(), od = out.raw(), n](AdjointMap<S>& adj) {
            auto* g = adj.lookup(od.get());
            if (!g) return;
            if (!qd->requires_grad) return;
            auto& gq = adj.accum(qd);
            S w = (*g)[0] / static_cast<S>(n);
            for (size_t i = 0; i < n; ++i)
                gq[i] += w * (detail::sigmoid(qd->values[i]) - td->values[i]);
        });
    }
    return out;
}

} // namespace hrmlab::ops
