#pragma once

// Trainable primitives. Each forward has a matching analytic backward;
// grad_check compares any of them against the finite-difference oracle.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dama/tensor.hpp"

namespace dama {

constexpr std::int32_t kPadId = 0;
constexpr std::int32_t kUnkId = 1;

// ---------------------------------------------------------------- embedding

struct EmbeddingTable {
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    Tensor weights; // [vocab_size x dim]

    EmbeddingTable() = default;
    EmbeddingTable(std::size_t vocab, std::size_t d, RngStream& rng, double scale = 0.1)
        : vocab_size(vocab), dim(d), weights(uniform_init(rng, {vocab, d}, -scale, scale)) {}
};

inline Tensor embed(const EmbeddingTable& table, const std::vector<std::int32_t>& ids) {
    Tensor out({ids.size(), table.dim});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const std::int32_t id = ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= table.vocab_size) {
            throw std::out_of_range("embed: token id " + std::to_string(id) +
                                    " outside vocabulary of size " +
                                    std::to_string(table.vocab_size));
        }
        const double* src = table.weights.row(static_cast<std::size_t>(id));
        std::copy(src, src + table.dim, out.row(t));
    }
    return out;
}

// Accumulates d_out rows into the table gradient at the looked-up rows.
inline void embed_backward(const std::vector<std::int32_t>& ids, const Tensor& d_out,
                           Tensor& d_table) {
    for (std::size_t t = 0; t < ids.size(); ++t) {
        double* dst = d_table.row(static_cast<std::size_t>(ids[t]));
        const double* src = d_out.row(t);
        for (std::size_t k = 0; k < d_out.cols(); ++k) dst[k] += src[k];
    }
}

// ------------------------------------------------------------------- linear

struct LinearParams {
    Tensor W; // [in x out]
    Tensor b; // [out]

    LinearParams() = default;
    LinearParams(std::size_t in, std::size_t out, RngStream& rng)
        : W(uniform_init(rng, {in, out}, -1.0 / std::sqrt(static_cast<double>(in)),
                         1.0 / std::sqrt(static_cast<double>(in)))),
          b(Tensor({out})) {}

    std::size_t in_dim() const { return W.rows(); }
    std::size_t out_dim() const { return W.cols(); }
};

// y = x W + b, row-wise over the leading dimension of x.
inline Tensor linear(const LinearParams& p, const Tensor& x) {
    const bool vec = x.rank() == 1;
    const std::size_t rows = vec ? 1 : x.rows();
    const std::size_t in = vec ? x.size() : x.cols();
    if (in != p.in_dim()) {
        throw std::invalid_argument("linear: input " + x.shape_str() + " does not match weight " +
                                    p.W.shape_str());
    }
    const std::size_t out = p.out_dim();
    Tensor y(vec ? std::vector<std::size_t>{out} : std::vector<std::size_t>{rows, out});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * in;
        double* yr = y.data.data() + r * out;
        for (std::size_t j = 0; j < out; ++j) yr[j] = p.b[j];
        for (std::size_t k = 0; k < in; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            const double* wk = p.W.row(k);
            for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
        }
    }
    return y;
}

struct LinearGrads {
    Tensor W;
    Tensor b;

    LinearGrads() = default;
    explicit LinearGrads(const LinearParams& p) : W(p.W.shape), b(p.b.shape) {}
};

// Accumulates parameter grads; dx may be null when the input gradient is not needed.
inline void linear_backward(const LinearParams& p, const Tensor& x, const Tensor& dy,
                            LinearGrads& g, Tensor* dx) {
    const bool vec = x.rank() == 1;
    const std::size_t rows = vec ? 1 : x.rows();
    const std::size_t in = p.in_dim(), out = p.out_dim();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data.data() + r * in;
        const double* dyr = dy.data.data() + r * out;
        for (std::size_t j = 0; j < out; ++j) g.b[j] += dyr[j];
        for (std::size_t k = 0; k < in; ++k) {
            double* gw = g.W.row(k);
            const double xv = xr[k];
            for (std::size_t j = 0; j < out; ++j) gw[j] += xv * dyr[j];
            if (dx) {
                const double* wk = p.W.row(k);
                double acc = 0.0;
                for (std::size_t j = 0; j < out; ++j) acc += wk[j] * dyr[j];
                dx->data[r * in + k] += acc;
            }
        }
    }
}

// ------------------------------------------------------------------ dropout

enum class Mode { Train, Eval };

struct DropoutSpec {
    double p = 0.0;
    Mode mode = Mode::Eval;
};

// Inverted dropout. The returned mask holds the per-entry scale applied
// (0 or 1/(1-p)); backward is an elementwise product with it.
inline Tensor dropout(const Tensor& x, const DropoutSpec& spec, RngStream& rng,
                      Tensor* mask_out = nullptr) {
    if (spec.p >= 1.0 || spec.p < 0.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (spec.mode == Mode::Eval) {
        if (mask_out) *mask_out = Tensor(x.shape, 1.0);
        return x;
    }
    Tensor y(x.shape);
    Tensor mask(x.shape);
    const double keep_scale = 1.0 / (1.0 - spec.p);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool keep = rng.next_double() >= spec.p;
        mask.data[i] = keep ? keep_scale : 0.0;
        y.data[i] = keep ? (spec.p == 0.0 ? x.data[i] : x.data[i] * keep_scale) : 0.0;
    }
    if (mask_out) *mask_out = std::move(mask);
    return y;
}

// ------------------------------------------------------------ cross-entropy

// -log softmax(logits)[label] via log-sum-exp.
inline double cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t k = logits.size();
    if (label >= k) {
        throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(k) + " classes");
    }
    double mx = logits[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(logits[i] - mx);
    return std::log(sum) - (logits[label] - mx);
}

// d loss / d logits = softmax(logits) - onehot(label)
inline Tensor cross_entropy_grad(const Tensor& logits, std::size_t label) {
    Tensor g = softmax(logits);
    g.data[label] -= 1.0;
    return g;
}

// --------------------------------------------------------------------- adam

struct AdamState {
    Tensor m;
    Tensor v;
    long t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    AdamState() = default;
    AdamState(const std::vector<std::size_t>& shape, double lr_, double wd = 0.0)
        : m(shape), v(shape), lr(lr_), weight_decay(wd) {}
};

// Classic Adam with bias correction; weight decay enters as an L2 term
// added to the gradient before the moment updates.
inline void adam_step(AdamState& st, Tensor& param, const Tensor& grad) {
    require_same_shape(param, grad, "adam_step");
    if (!grad.all_finite()) throw std::runtime_error("adam_step: non-finite gradient");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.data[i] + st.weight_decay * param.data[i];
        st.m.data[i] = st.beta1 * st.m.data[i] + (1.0 - st.beta1) * g;
        st.v.data[i] = st.beta2 * st.v.data[i] + (1.0 - st.beta2) * g * g;
        const double mhat = st.m.data[i] / bc1;
        const double vhat = st.v.data[i] / bc2;
        param.data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

// --------------------------------------------------------------- grad check

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_index = 0;
    bool pass = true;
};

// Compares an analytic gradient against finite_diff of f at x. A coordinate
// passes when |analytic - numeric| <= abs_floor or the relative error is
// within rel_tol. The reported max_rel_err uses an abs_floor-clamped
// denominator so near-zero coordinates do not dominate it.
inline GradCheckReport grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  const Tensor& analytic, double rel_tol = 1e-4,
                                  double abs_floor = 1e-7, double h = 1e-5) {
    require_same_shape(x, analytic, "grad_check");
    const Tensor numeric = finite_diff(f, x, h);
    GradCheckReport rep;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = analytic.data[i];
        const double n = numeric.data[i];
        const double abs_err = std::abs(a - n);
        const double denom = std::max({std::abs(a), std::abs(n), abs_floor});
        const double rel = abs_err / denom;
        rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
        if (abs_err > abs_floor && rel > rel_tol) rep.pass = false;
    }
    return rep;
}

} // namespace dama
