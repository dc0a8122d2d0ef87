#pragma once

// sLSTM-style recurrent cell: exponential input gate, normalizer state,
// sigmoid or exponential forget gate.
//
//   z_t = tanh(a_z)      i_t = exp(a_i)      o_t = sigmoid(a_o)
//   f_t = sigmoid(a_f) or exp(a_f)
//   c_t = f_t c_{t-1} + i_t z_t
//   n_t = f_t n_{t-1} + i_t
//   h_t = o_t (c_t / n_t)
//
// Raw exponentials overflow, so the state is kept rescaled by exp(-m_t)
// with m_t = max(log f_t + m_{t-1}, a_i):
//
//   i'_t = exp(a_i - m_t)            f'_t = exp(log f_t + m_{t-1} - m_t)
//   c'_t = f'_t c'_{t-1} + i'_t z_t  n'_t = f'_t n'_{t-1} + i'_t
//
// h_t is invariant to the rescaling because c and n carry the same factor,
// so m may be treated as a constant in the backward pass; the gradients of
// the stabilized path equal those of the naive recurrence.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dama/tensor.hpp"

namespace dama {

enum class ForgetMode { Sigmoid, Exponential };

struct GateParams {
    Tensor w; // [input_dim x hidden]
    Tensor r; // [hidden x hidden]
    Tensor b; // [hidden]

    GateParams() = default;
    GateParams(std::size_t input_dim, std::size_t hidden, RngStream& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(input_dim + hidden));
        w = uniform_init(rng, {input_dim, hidden}, -s, s);
        r = uniform_init(rng, {hidden, hidden}, -s, s);
        b = Tensor({hidden});
    }
};

struct SLstmParams {
    GateParams z, i, f, o;
    ForgetMode forget_mode = ForgetMode::Sigmoid;

    SLstmParams() = default;
    SLstmParams(std::size_t input_dim, std::size_t hidden, RngStream& rng,
                ForgetMode mode = ForgetMode::Sigmoid)
        : z(input_dim, hidden, rng), i(input_dim, hidden, rng), f(input_dim, hidden, rng),
          o(input_dim, hidden, rng), forget_mode(mode) {}

    std::size_t input_dim() const { return z.w.rows(); }
    std::size_t hidden() const { return z.w.cols(); }
};

struct SLstmState {
    Tensor c; // cell state (rescaled by exp(-m))
    Tensor n; // normalizer state (rescaled by exp(-m))
    Tensor h;
    Tensor m; // log-scale running max

    explicit SLstmState(std::size_t hidden = 0)
        : c({hidden}), n({hidden}), h({hidden}), m({hidden}) {}
};

namespace detail {

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// a = W^T x + R^T h_prev + b
inline void gate_preact(const GateParams& g, const double* x, std::size_t input_dim,
                        const double* h_prev, std::size_t hidden, double* a) {
    for (std::size_t j = 0; j < hidden; ++j) a[j] = g.b[j];
    for (std::size_t k = 0; k < input_dim; ++k) {
        const double xv = x[k];
        if (xv == 0.0) continue;
        const double* wk = g.w.row(k);
        for (std::size_t j = 0; j < hidden; ++j) a[j] += xv * wk[j];
    }
    for (std::size_t k = 0; k < hidden; ++k) {
        const double hv = h_prev[k];
        if (hv == 0.0) continue;
        const double* rk = g.r.row(k);
        for (std::size_t j = 0; j < hidden; ++j) a[j] += hv * rk[j];
    }
}

} // namespace detail

// Everything the backward pass needs about one step.
struct SLstmStepCache {
    std::vector<double> a_z, a_i, a_f, a_o; // pre-activations
    std::vector<double> z, o, ip, fp;       // activations (stabilized gates)
    std::vector<double> c_prev, n_prev, h_prev;
    std::vector<double> c, n;
};

inline SLstmState slstm_step(const SLstmParams& p, const SLstmState& prev, const double* x,
                             SLstmStepCache* cache = nullptr) {
    const std::size_t H = p.hidden(), D = p.input_dim();
    SLstmState next(H);
    std::vector<double> a_z(H), a_i(H), a_f(H), a_o(H);
    detail::gate_preact(p.z, x, D, prev.h.data.data(), H, a_z.data());
    detail::gate_preact(p.i, x, D, prev.h.data.data(), H, a_i.data());
    detail::gate_preact(p.f, x, D, prev.h.data.data(), H, a_f.data());
    detail::gate_preact(p.o, x, D, prev.h.data.data(), H, a_o.data());

    if (cache) {
        cache->a_z = a_z;
        cache->a_i = a_i;
        cache->a_f = a_f;
        cache->a_o = a_o;
        cache->c_prev.assign(prev.c.data.begin(), prev.c.data.end());
        cache->n_prev.assign(prev.n.data.begin(), prev.n.data.end());
        cache->h_prev.assign(prev.h.data.begin(), prev.h.data.end());
        cache->z.resize(H);
        cache->o.resize(H);
        cache->ip.resize(H);
        cache->fp.resize(H);
        cache->c.resize(H);
        cache->n.resize(H);
    }

    for (std::size_t j = 0; j < H; ++j) {
        const double z = std::tanh(a_z[j]);
        const double o = detail::sigmoid(a_o[j]);
        const double log_f =
            p.forget_mode == ForgetMode::Sigmoid ? detail::log_sigmoid(a_f[j]) : a_f[j];
        const double m = std::max(log_f + prev.m[j], a_i[j]);
        const double ip = std::exp(a_i[j] - m);
        const double fp = std::exp(log_f + prev.m[j] - m);
        const double c = fp * prev.c[j] + ip * z;
        const double n = fp * prev.n[j] + ip;
        next.c[j] = c;
        next.n[j] = n;
        next.m[j] = m;
        next.h[j] = o * (c / n);
        if (cache) {
            cache->z[j] = z;
            cache->o[j] = o;
            cache->ip[j] = ip;
            cache->fp[j] = fp;
            cache->c[j] = c;
            cache->n[j] = n;
        }
    }
    return next;
}

// Unstabilized reference recurrence. Only safe for small pre-activations;
// kept public so tests can compare the two paths.
struct SLstmNaiveState {
    Tensor c, n, h;
    explicit SLstmNaiveState(std::size_t hidden = 0) : c({hidden}), n({hidden}), h({hidden}) {}
};

inline SLstmNaiveState slstm_step_naive(const SLstmParams& p, const SLstmNaiveState& prev,
                                        const double* x) {
    const std::size_t H = p.hidden(), D = p.input_dim();
    SLstmNaiveState next(H);
    std::vector<double> a_z(H), a_i(H), a_f(H), a_o(H);
    detail::gate_preact(p.z, x, D, prev.h.data.data(), H, a_z.data());
    detail::gate_preact(p.i, x, D, prev.h.data.data(), H, a_i.data());
    detail::gate_preact(p.f, x, D, prev.h.data.data(), H, a_f.data());
    detail::gate_preact(p.o, x, D, prev.h.data.data(), H, a_o.data());
    for (std::size_t j = 0; j < H; ++j) {
        const double z = std::tanh(a_z[j]);
        const double i = std::exp(a_i[j]);
        const double f = p.forget_mode == ForgetMode::Sigmoid ? detail::sigmoid(a_f[j])
                                                              : std::exp(a_f[j]);
        const double o = detail::sigmoid(a_o[j]);
        next.c[j] = f * prev.c[j] + i * z;
        next.n[j] = f * prev.n[j] + i;
        next.h[j] = o * (next.c[j] / next.n[j]);
    }
    return next;
}

struct SLstmTrace {
    Tensor H; // [n x hidden]; PAD rows repeat the last real hidden state
    std::vector<SLstmStepCache> steps;
    std::vector<std::uint8_t> mask;
};

// Unrolls the cell from the zero state. mask[t] == 0 marks a PAD step: the
// state is carried through unchanged and H[t] repeats the previous h.
inline SLstmTrace slstm_forward_traced(const SLstmParams& p, const Tensor& X,
                                       const std::vector<std::uint8_t>& mask) {
    const std::size_t n = X.rows();
    if (n == 0) throw std::invalid_argument("slstm_forward: empty sequence");
    if (mask.size() != n) throw std::invalid_argument("slstm_forward: mask length mismatch");
    const std::size_t H = p.hidden();
    SLstmTrace trace;
    trace.H = Tensor({n, H});
    trace.steps.resize(n);
    trace.mask = mask;
    SLstmState state(H);
    for (std::size_t t = 0; t < n; ++t) {
        if (mask[t]) {
            state = slstm_step(p, state, X.row(t), &trace.steps[t]);
        }
        std::copy(state.h.data.begin(), state.h.data.end(), trace.H.row(t));
    }
    return trace;
}

inline Tensor slstm_forward(const SLstmParams& p, const Tensor& X,
                            const std::vector<std::uint8_t>& mask) {
    return slstm_forward_traced(p, X, mask).H;
}

struct SLstmGrads {
    Tensor dw_z, dr_z, db_z;
    Tensor dw_i, dr_i, db_i;
    Tensor dw_f, dr_f, db_f;
    Tensor dw_o, dr_o, db_o;

    SLstmGrads() = default;
    explicit SLstmGrads(const SLstmParams& p)
        : dw_z(p.z.w.shape), dr_z(p.z.r.shape), db_z(p.z.b.shape), dw_i(p.i.w.shape),
          dr_i(p.i.r.shape), db_i(p.i.b.shape), dw_f(p.f.w.shape), dr_f(p.f.r.shape),
          db_f(p.f.b.shape), dw_o(p.o.w.shape), dr_o(p.o.r.shape), db_o(p.o.b.shape) {}
};

namespace detail {

inline void gate_backward(const GateParams& g, const double* x, std::size_t input_dim,
                          const double* h_prev, std::size_t hidden, const double* da, Tensor& dw,
                          Tensor& dr, Tensor& db, double* dx, double* dh_prev) {
    for (std::size_t j = 0; j < hidden; ++j) db[j] += da[j];
    for (std::size_t k = 0; k < input_dim; ++k) {
        double* dwk = dw.row(k);
        const double* wk = g.w.row(k);
        const double xv = x[k];
        double acc = 0.0;
        for (std::size_t j = 0; j < hidden; ++j) {
            dwk[j] += xv * da[j];
            acc += wk[j] * da[j];
        }
        if (dx) dx[k] += acc;
    }
    for (std::size_t k = 0; k < hidden; ++k) {
        double* drk = dr.row(k);
        const double* rk = g.r.row(k);
        const double hv = h_prev[k];
        double acc = 0.0;
        for (std::size_t j = 0; j < hidden; ++j) {
            drk[j] += hv * da[j];
            acc += rk[j] * da[j];
        }
        dh_prev[k] += acc;
    }
}

} // namespace detail

// Reverse pass over a traced forward. dH is the upstream gradient on every
// hidden-state row; grads accumulate in place and dX (same shape as the
// input sequence) receives the input gradient when non-null.
inline void slstm_backward(const SLstmParams& p, const Tensor& X, const SLstmTrace& trace,
                           const Tensor& dH, SLstmGrads& grads, Tensor* dX) {
    const std::size_t n = X.rows(), Hn = p.hidden(), D = p.input_dim();
    std::vector<double> dh(Hn, 0.0), dc(Hn, 0.0), dn(Hn, 0.0);
    std::vector<double> da_z(Hn), da_i(Hn), da_f(Hn), da_o(Hn), dh_prev(Hn);
    for (std::size_t ti = n; ti-- > 0;) {
        for (std::size_t j = 0; j < Hn; ++j) dh[j] += dH.at(ti, j);
        if (!trace.mask[ti]) continue; // PAD: state passed through unchanged
        const SLstmStepCache& s = trace.steps[ti];
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        for (std::size_t j = 0; j < Hn; ++j) {
            const double inv_n = 1.0 / s.n[j];
            const double ratio = s.c[j] * inv_n;
            const double d_o = dh[j] * ratio;
            const double d_ratio = dh[j] * s.o[j];
            const double dcj = dc[j] + d_ratio * inv_n;
            const double dnj = dn[j] - d_ratio * ratio * inv_n;
            const double dfp = dcj * s.c_prev[j] + dnj * s.n_prev[j];
            const double dip = dcj * s.z[j] + dnj;
            const double dz = dcj * s.ip[j];
            dc[j] = dcj * s.fp[j];
            dn[j] = dnj * s.fp[j];
            da_z[j] = dz * (1.0 - s.z[j] * s.z[j]);
            da_i[j] = dip * s.ip[j]; // m treated as constant
            const double dlog_f = dfp * s.fp[j];
            da_f[j] = p.forget_mode == ForgetMode::Sigmoid
                          ? dlog_f * detail::sigmoid(-s.a_f[j])
                          : dlog_f;
            da_o[j] = d_o * s.o[j] * (1.0 - s.o[j]);
        }
        double* dx = dX ? dX->row(ti) : nullptr;
        detail::gate_backward(p.z, X.row(ti), D, s.h_prev.data(), Hn, da_z.data(), grads.dw_z,
                              grads.dr_z, grads.db_z, dx, dh_prev.data());
        detail::gate_backward(p.i, X.row(ti), D, s.h_prev.data(), Hn, da_i.data(), grads.dw_i,
                              grads.dr_i, grads.db_i, dx, dh_prev.data());
        detail::gate_backward(p.f, X.row(ti), D, s.h_prev.data(), Hn, da_f.data(), grads.dw_f,
                              grads.dr_f, grads.db_f, dx, dh_prev.data());
        detail::gate_backward(p.o, X.row(ti), D, s.h_prev.data(), Hn, da_o.data(), grads.dw_o,
                              grads.dr_o, grads.db_o, dx, dh_prev.data());
        dh = dh_prev;
    }
}

} // namespace dama
