#pragma once

// Dense row-major tensors of 64-bit floats plus the handful of kernels
// the model needs. 64-bit is deliberate: gradient checking at 1e-4
// relative tolerance is not reliable in 32-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dama/rng.hpp"

namespace dama {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)) {
        data.assign(count(shape), fill);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str() + " does not match " +
                                        std::to_string(data.size()) + " values");
        }
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols(); }
    double* row(std::size_t r) { return data.data() + r * cols(); }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t k = 0; k < shape.size(); ++k) {
            if (k) os << "x";
            os << shape[k];
        }
        os << "]";
        return os.str();
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

// y += a * x, elementwise.
inline void axpy(double a, const Tensor& x, Tensor& y) {
    require_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y.data[i] += a * x.data[i];
}

inline double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " and " +
                                    b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a.row(i);
        double* ci = c.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b.row(p);
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
    return c;
}

// Max-shifted softmax over a contiguous span; writes into out.
inline void softmax_span(const double* v, std::size_t n, double* out) {
    if (n == 0) throw std::invalid_argument("softmax: empty input");
    double mx = v[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(v[i] - mx);
        denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
}

inline Tensor softmax(const Tensor& v) {
    Tensor out(v.shape);
    softmax_span(v.data.data(), v.size(), out.data.data());
    return out;
}

inline Tensor uniform_init(RngStream& rng, std::vector<std::size_t> shape, double lo, double hi) {
    if (shape.empty()) throw std::invalid_argument("uniform_init: empty shape");
    if (!(lo < hi)) throw std::invalid_argument("uniform_init: requires lo < hi");
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Central-difference gradient estimate of a scalar function. This is the
// independent oracle every analytic gradient in the repository is checked
// against; keep it free of any model code.
inline Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff: h must be positive");
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double fp = f(probe);
        probe.data[i] = orig - h;
        const double fm = f(probe);
        probe.data[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::runtime_error("finite_diff: non-finite function value at coordinate " +
                                     std::to_string(i));
        }
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

} // namespace dama
