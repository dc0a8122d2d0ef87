#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dama/layers.hpp"
#include "dama/xlstm.hpp"

using namespace dama;

namespace {

SLstmParams zero_params(std::size_t input, std::size_t hidden, ForgetMode mode) {
    RngStream rng(0);
    SLstmParams p(input, hidden, rng, mode);
    for (Tensor* t : {&p.z.w, &p.z.r, &p.z.b, &p.i.w, &p.i.r, &p.i.b, &p.f.w, &p.f.r, &p.f.b,
                      &p.o.w, &p.o.r, &p.o.b}) {
        t->fill(0.0);
    }
    return p;
}

SLstmParams random_params(std::size_t input, std::size_t hidden, std::uint64_t seed,
                          ForgetMode mode = ForgetMode::Sigmoid, double scale = 0.4) {
    RngStream rng(seed);
    SLstmParams p(input, hidden, rng, mode);
    for (Tensor* t : {&p.z.w, &p.z.r, &p.z.b, &p.i.w, &p.i.r, &p.i.b, &p.f.w, &p.f.r, &p.f.b,
                      &p.o.w, &p.o.r, &p.o.b}) {
        *t = uniform_init(rng, t->shape, -scale, scale);
    }
    return p;
}

std::vector<std::uint8_t> ones_mask(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

Tensor naive_sequence(const SLstmParams& p, const Tensor& X) {
    SLstmNaiveState st(p.hidden());
    Tensor H({X.rows(), p.hidden()});
    for (std::size_t t = 0; t < X.rows(); ++t) {
        st = slstm_step_naive(p, st, X.row(t));
        std::copy(st.h.data.begin(), st.h.data.end(), H.row(t));
    }
    return H;
}

} // namespace

TEST(SLstmStep, ZeroParamsZeroState) {
    SLstmParams p = zero_params(2, 3, ForgetMode::Sigmoid);
    SLstmState st(3);
    const double x[2] = {0.7, -0.3};
    SLstmStepCache cache;
    SLstmState next = slstm_step(p, st, x, &cache);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(cache.z[j], 0.0);
        EXPECT_DOUBLE_EQ(cache.ip[j], 1.0); // i = exp(0), m = max(log 0.5, 0) = 0
        EXPECT_DOUBLE_EQ(cache.fp[j], 0.5);
        EXPECT_DOUBLE_EQ(cache.o[j], 0.5);
        EXPECT_DOUBLE_EQ(next.c[j], 0.0);
        EXPECT_DOUBLE_EQ(next.n[j], 1.0);
        EXPECT_DOUBLE_EQ(next.h[j], 0.0);
    }
}

TEST(SLstmStep, SaturatedCellInputRecursion) {
    // b_z large => z ≈ 1 while i = 1, f = 0.5, o = 0.5 stay constant.
    SLstmParams p = zero_params(1, 1, ForgetMode::Sigmoid);
    p.z.b.fill(30.0);
    SLstmState st(1);
    const double x = 0.0;
    st = slstm_step(p, st, &x);
    EXPECT_NEAR(st.c[0], 1.0, 1e-12);
    EXPECT_NEAR(st.n[0], 1.0, 1e-12);
    EXPECT_NEAR(st.h[0], 0.5, 1e-12);
    st = slstm_step(p, st, &x);
    EXPECT_NEAR(st.c[0], 1.5, 1e-12);
    EXPECT_NEAR(st.n[0], 1.5, 1e-12);
    EXPECT_NEAR(st.h[0], 0.5, 1e-12);
}

TEST(SLstm, StabilizedMatchesNaiveInSafeRegime) {
    for (ForgetMode mode : {ForgetMode::Sigmoid, ForgetMode::Exponential}) {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            SLstmParams p = random_params(3, 4, seed, mode);
            RngStream rng(seed * 31 + 1);
            Tensor X = uniform_init(rng, {12, 3}, -1, 1);
            Tensor H = slstm_forward(p, X, ones_mask(12));
            Tensor Hn = naive_sequence(p, X);
            for (std::size_t i = 0; i < H.size(); ++i) {
                const double denom = std::max({std::abs(H[i]), std::abs(Hn[i]), 1e-300});
                EXPECT_LT(std::abs(H[i] - Hn[i]) / denom, 1e-10)
                    << "seed " << seed << " idx " << i;
            }
        }
    }
}

TEST(SLstm, WeightedAverageExpansion) {
    // c_t / n_t must equal sum_k w_k z_k with w_k = i_k prod_{j>k} f_j / n_t,
    // all w_k >= 0 summing to 1.
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SLstmParams p = random_params(2, 3, seed);
        RngStream rng(seed + 100);
        Tensor X = uniform_init(rng, {8, 2}, -1, 1);

        SLstmNaiveState st(3);
        std::vector<std::vector<double>> all_i, all_f, all_z;
        for (std::size_t t = 0; t < 8; ++t) {
            SLstmNaiveState next = slstm_step_naive(p, st, X.row(t));
            std::vector<double> iv(3), fv(3), zv(3);
            std::vector<double> az(3), ai(3), af(3);
            detail::gate_preact(p.z, X.row(t), 2, st.h.data.data(), 3, az.data());
            detail::gate_preact(p.i, X.row(t), 2, st.h.data.data(), 3, ai.data());
            detail::gate_preact(p.f, X.row(t), 2, st.h.data.data(), 3, af.data());
            for (std::size_t j = 0; j < 3; ++j) {
                zv[j] = std::tanh(az[j]);
                iv[j] = std::exp(ai[j]);
                fv[j] = detail::sigmoid(af[j]);
            }
            all_i.push_back(iv);
            all_f.push_back(fv);
            all_z.push_back(zv);
            st = next;

            for (std::size_t j = 0; j < 3; ++j) {
                double n_t = 0.0, weighted = 0.0;
                for (std::size_t k = 0; k <= t; ++k) {
                    double w = all_i[k][j];
                    for (std::size_t u = k + 1; u <= t; ++u) w *= all_f[u][j];
                    EXPECT_GE(w, 0.0);
                    n_t += w;
                    weighted += w * all_z[k][j];
                }
                const double ratio = st.c[j] / st.n[j];
                EXPECT_NEAR(ratio, weighted / n_t, 1e-9);
                EXPECT_LE(std::abs(ratio), 1.0 + 1e-12);
            }
        }
    }
}

TEST(SLstm, HiddenStateBoundedByOne) {
    RngStream meta(2024);
    for (int rep = 0; rep < 100; ++rep) {
        const ForgetMode mode = rep % 2 ? ForgetMode::Exponential : ForgetMode::Sigmoid;
        SLstmParams p = random_params(3, 5, meta.next_u64(), mode, 1.5);
        RngStream rng(meta.next_u64());
        Tensor X = uniform_init(rng, {32, 3}, -2, 2);
        Tensor H = slstm_forward(p, X, ones_mask(32));
        for (double v : H.data) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_LE(std::abs(v), 1.0);
        }
    }
}

TEST(SLstm, ExponentialForgetStressStaysFinite) {
    SLstmParams p = zero_params(1, 2, ForgetMode::Exponential);
    p.f.b.fill(50.0);
    p.i.b.fill(50.0);
    p.z.b.fill(0.3);
    SLstmState st(2);
    const double x = 1.0;
    for (int t = 0; t < 100; ++t) {
        st = slstm_step(p, st, &x);
        for (std::size_t j = 0; j < 2; ++j) {
            ASSERT_TRUE(std::isfinite(st.c[j]));
            ASSERT_TRUE(std::isfinite(st.n[j]));
            ASSERT_TRUE(std::isfinite(st.h[j]));
            ASSERT_GT(st.n[j], 0.0);
        }
    }
}

TEST(SLstm, SingleStepForwardEqualsStep) {
    SLstmParams p = random_params(3, 4, 55);
    RngStream rng(56);
    Tensor X = uniform_init(rng, {1, 3}, -1, 1);
    Tensor H = slstm_forward(p, X, ones_mask(1));
    SLstmState st(4);
    SLstmState next = slstm_step(p, st, X.row(0));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(H.at(0, j), next.h[j]);
}

TEST(SLstm, PadStepsCarryStateThrough) {
    SLstmParams p = random_params(3, 4, 77);
    RngStream rng(78);
    Tensor X = uniform_init(rng, {5, 3}, -1, 1);
    Tensor Xp({8, 3});
    std::copy(X.data.begin(), X.data.end(), Xp.data.begin());
    std::vector<std::uint8_t> mask(8, 0);
    for (int t = 0; t < 5; ++t) mask[t] = 1;

    Tensor H = slstm_forward(p, X, ones_mask(5));
    Tensor Hp = slstm_forward(p, Xp, mask);
    for (std::size_t t = 0; t < 5; ++t) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(H.at(t, j), Hp.at(t, j));
    }
    for (std::size_t t = 5; t < 8; ++t) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(Hp.at(t, j), H.at(4, j));
    }
}

TEST(SLstm, GradCheckAllParametersAndInput) {
    for (ForgetMode mode : {ForgetMode::Sigmoid, ForgetMode::Exponential}) {
        SLstmParams p = random_params(3, 4, 313, mode);
        RngStream rng(314);
        Tensor X = uniform_init(rng, {6, 3}, -1, 1);
        const auto mask = ones_mask(6);

        auto loss_with = [&](const SLstmParams& q, const Tensor& Xq) {
            Tensor H = slstm_forward(q, Xq, mask);
            double s = 0.0;
            for (double v : H.data) s += v;
            return s;
        };

        SLstmTrace trace = slstm_forward_traced(p, X, mask);
        SLstmGrads grads(p);
        Tensor dX(X.shape);
        Tensor dH(trace.H.shape, 1.0);
        slstm_backward(p, X, trace, dH, grads, &dX);

        std::vector<std::pair<Tensor*, Tensor*>> pairs = {
            {&p.z.w, &grads.dw_z}, {&p.z.r, &grads.dr_z}, {&p.z.b, &grads.db_z},
            {&p.i.w, &grads.dw_i}, {&p.i.r, &grads.dr_i}, {&p.i.b, &grads.db_i},
            {&p.f.w, &grads.dw_f}, {&p.f.r, &grads.dr_f}, {&p.f.b, &grads.db_f},
            {&p.o.w, &grads.dw_o}, {&p.o.r, &grads.dr_o}, {&p.o.b, &grads.db_o},
        };
        for (auto [param, grad] : pairs) {
            auto f = [&](const Tensor& v) {
                const Tensor saved = *param;
                *param = v;
                const double out = loss_with(p, X);
                *param = saved;
                return out;
            };
            GradCheckReport rep = grad_check(f, *param, *grad);
            EXPECT_TRUE(rep.pass) << "param grad failed, max rel err " << rep.max_rel_err;
        }
        auto fx = [&](const Tensor& v) { return loss_with(p, v); };
        GradCheckReport rep = grad_check(fx, X, dX);
        EXPECT_TRUE(rep.pass) << "input grad failed, max rel err " << rep.max_rel_err;
    }
}
