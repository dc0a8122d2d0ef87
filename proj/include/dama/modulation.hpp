#pragma once

// Stage 2: per-sample input modulation delta = lambda * grad_X(domain CE)
// with a per-domain scalar step size lambda. lambda is learned by one
// Adam epoch against the domain's sentiment loss, then adjusted by the
// validation-driven scaling strategy:
//
//   improve  (a+ > a)  stop, keep lambda
//   degrade  (a+ < a)  revert to the first previously tried lambda whose
//                      accuracy equals a, else divide |lambda| by alpha
//   equal    (a+ = a)  grow |lambda| by beta until t results are on record;
//                      once the window is full and accuracies stay equal,
//                      pick the min-loss lambda if the losses moved, else
//                      keep growing; a mixed window stops
//
// Growth that would push |lambda| past the bound keeps it unchanged and
// stops. The evaluator is called at most n_t times. A final safeguard
// returns 0 whenever the chosen lambda scores below the unmodulated
// accuracy, which makes stage 2 non-degrading by construction.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dama/data.hpp"
#include "dama/net.hpp"

namespace dama {

struct ModulationConfig {
    double bound = 100.0; // current b; run_domain_stage2 sweeps the grid
    double alpha = 2.0;   // shrink divisor
    double beta = 1.5;    // growth multiplier
    int t_window = 3;
    int n_t = 10;
    double lambda_lr = 1e-3;
    int epochs = 1;
    std::size_t batch_size = 64;

    void validate() const {
        if (!(alpha > 1.0)) throw std::invalid_argument("modulation: alpha must be > 1");
        if (!(beta > 1.0)) throw std::invalid_argument("modulation: beta must be > 1");
        if (alpha == beta) throw std::invalid_argument("modulation: alpha and beta must differ");
        if (!(bound > 0.0)) throw std::invalid_argument("modulation: bound must be > 0");
        if (t_window < 2) throw std::invalid_argument("modulation: t_window must be >= 2");
        if (n_t < 1) throw std::invalid_argument("modulation: n_t must be >= 1");
    }
};

struct LambdaState {
    double lam = 0.0;
    std::vector<double> S;       // tried lambdas
    std::vector<double> A_xplus; // modulated validation accuracies
    std::vector<double> L_xplus; // modulated validation losses
    int count = 0;               // evaluator calls spent
};

struct ModulationEffect {
    double delta_loss = 0.0; // domain CE change on the validation set
    double a_x = 0.0, a_xplus = 0.0;
    double l_x = 0.0, l_xplus = 0.0;
};

// X' = X + lam * g
inline Tensor modulate(const Tensor& X, const Tensor& g, double lam) {
    require_same_shape(X, g, "modulate");
    Tensor out = X;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += lam * g.data[i];
    return out;
}

// Per-example cache of g = input_grad_domain: g does not depend on lambda,
// so one backward pass per example serves the whole stage.
struct GradCache {
    std::vector<Tensor> X;    // embeddings at delta = 0
    std::vector<Tensor> g;    // domain-loss input gradients
    std::vector<std::vector<std::uint8_t>> mask;
};

inline GradCache build_grad_cache(const DamNet& net, const std::vector<Example>& examples) {
    GradCache cache;
    RngStream unused(0);
    for (const Example& ex : examples) {
        ForwardTrace tr = forward_example(net, ex.ids, Mode::Eval, unused);
        cache.X.push_back(tr.X);
        cache.mask.push_back(tr.mask);
        cache.g.push_back(input_grad_domain(net, ex.ids, ex.y_d));
    }
    return cache;
}

// dL_s/dlambda = <grad_{X'} L_s(X'), g> with X' = X + lam*g and g held
// constant (no second-order term through the gradient computation).
inline double lambda_grad(const DamNet& net, const Example& ex, const Tensor& X, const Tensor& g,
                          const std::vector<std::uint8_t>& mask, double lam) {
    const Tensor modulated = modulate(X, g, lam);
    const Tensor gs = input_grad_sentiment(net, modulated, mask, ex.y_s);
    return dot(gs, g);
}

// One Adam pass over the domain's training batches, lambda clamped to
// [-bound, +bound] after every update. The net stays frozen.
inline double learn_lambda(const DamNet& net, const std::vector<Example>& domain_train,
                           const GradCache& cache, const ModulationConfig& cfg, RngStream& rng) {
    if (domain_train.empty()) throw std::invalid_argument("learn_lambda: empty train split");
    cfg.validate();
    Tensor lam({1}, {0.0});
    AdamState adam({1}, cfg.lambda_lr);
    std::vector<std::size_t> order(domain_train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            double grad = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t k = order[i];
                grad += lambda_grad(net, domain_train[k], cache.X[k], cache.g[k], cache.mask[k],
                                    lam[0]);
            }
            grad /= static_cast<double>(end - start);
            adam_step(adam, lam, Tensor({1}, {grad}));
            lam[0] = std::clamp(lam[0], -cfg.bound, cfg.bound);
        }
    }
    return lam[0];
}

struct EvalModulated {
    double accuracy = 0.0;       // sentiment accuracy on X + lam*g
    double loss = 0.0;           // mean sentiment CE
    double domain_accuracy = 0.0;
    double domain_loss = 0.0;    // mean domain CE
};

inline EvalModulated eval_modulated(const DamNet& net, double lam,
                                    const std::vector<Example>& examples, const GradCache& cache) {
    if (examples.empty()) throw std::invalid_argument("eval_modulated: empty dataset");
    EvalModulated out;
    RngStream unused(0);
    std::size_t correct_s = 0, correct_d = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Tensor modulated = modulate(cache.X[i], cache.g[i], lam);
        ForwardTrace tr = forward_from_embeddings(net, modulated, cache.mask[i], Mode::Eval, unused);
        if (predict(tr.p) == examples[i].y_s) ++correct_s;
        if (predict(tr.q) == examples[i].y_d) ++correct_d;
        out.loss += cross_entropy(tr.logits_s, examples[i].y_s);
        out.domain_loss += cross_entropy(tr.logits_d, examples[i].y_d);
    }
    const double n = static_cast<double>(examples.size());
    out.accuracy = static_cast<double>(correct_s) / n;
    out.domain_accuracy = static_cast<double>(correct_d) / n;
    out.loss /= n;
    out.domain_loss /= n;
    return out;
}

struct ScaleResult {
    double lam = 0.0;
    LambdaState history;
};

// The scaling strategy over an arbitrary (deterministic) evaluator
// returning (accuracy, loss) for a lambda. Results are cached so a
// previously tried lambda costs no extra call.
inline ScaleResult scale_lambda(double lam0, double a_x,
                                const std::function<std::pair<double, double>(double)>& evaluator,
                                const ModulationConfig& cfg) {
    cfg.validate();
    LambdaState st;
    std::map<double, std::pair<double, double>> cache;
    auto evaluate = [&](double lam) {
        auto it = cache.find(lam);
        if (it != cache.end()) return it->second;
        const auto res = evaluator(lam);
        st.count += 1;
        cache.emplace(lam, res);
        return res;
    };
    auto record = [&](double lam) {
        const auto [a, l] = evaluate(lam);
        st.S.push_back(lam);
        st.A_xplus.push_back(a);
        st.L_xplus.push_back(l);
    };

    double lam = lam0;
    record(lam0);
    double chosen = lam0;
    for (int iter = 0; iter < cfg.n_t; ++iter) {
        const double last_a = st.A_xplus.back();
        double next_lam = lam;
        bool grew = false;
        if (last_a > a_x) { // improve: no adjustment needed
            chosen = lam;
            break;
        } else if (last_a < a_x) { // degrade
            std::size_t first_match = st.A_xplus.size();
            for (std::size_t i = 0; i < st.A_xplus.size(); ++i) {
                if (st.A_xplus[i] == a_x) {
                    first_match = i;
                    break;
                }
            }
            if (first_match < st.A_xplus.size()) {
                chosen = st.S[first_match];
                break;
            }
            next_lam = st.S.back() / cfg.alpha;
        } else { // equal
            const std::size_t len = st.A_xplus.size();
            const std::size_t t = static_cast<std::size_t>(cfg.t_window);
            if (len >= t) {
                bool acc_equal = true, loss_equal = true;
                for (std::size_t i = len - t + 1; i < len; ++i) {
                    if (st.A_xplus[i] != st.A_xplus[len - t]) acc_equal = false;
                    if (st.L_xplus[i] != st.L_xplus[len - t]) loss_equal = false;
                }
                if (acc_equal) {
                    if (!loss_equal) {
                        std::size_t best = len - t;
                        for (std::size_t i = len - t; i < len; ++i) {
                            if (st.L_xplus[i] < st.L_xplus[best]) best = i;
                        }
                        chosen = st.S[best];
                        break;
                    }
                    next_lam = lam * cfg.beta;
                    grew = true;
                } else {
                    chosen = lam;
                    break;
                }
            } else { // window not full yet: keep exploring
                next_lam = lam * cfg.beta;
                grew = true;
            }
        }
        if (grew && std::abs(next_lam) > cfg.bound) {
            chosen = lam; // growth would leave the search range
            break;
        }
        if (next_lam == lam) {
            chosen = lam; // fixed point (lambda = 0): re-evaluating cannot move
            break;
        }
        if (st.count >= cfg.n_t) {
            chosen = lam;
            break;
        }
        lam = next_lam;
        record(lam);
        chosen = lam;
    }

    // Safeguard: every candidate above was evaluated, so the lookup is free.
    if (evaluate(chosen).first < a_x) chosen = 0.0;
    st.lam = chosen;
    return {chosen, st};
}

struct DomainStage2Result {
    std::string domain;
    double b = 0.0;
    double lambda_learned = 0.0;
    double lambda_final = 0.0;
    double a_x = 0.0, a_xplus = 0.0;
    double l_x = 0.0, l_xplus = 0.0;
    double d_x = 0.0, d_xplus = 0.0;
    ModulationEffect effect;
    LambdaState history;
};

// Full stage-2 run for one domain: for every bound b in the grid, learn
// lambda, scale it on the validation evaluator, and keep the b with the
// best modulated validation accuracy (ties: lower loss, then smaller b).
inline DomainStage2Result run_domain_stage2(const DamNet& net, const DomainCorpus& domain,
                                            const std::vector<double>& b_grid,
                                            const ModulationConfig& cfg_base,
                                            std::uint64_t domain_seed) {
    if (b_grid.empty()) throw std::invalid_argument("run_domain_stage2: empty b grid");
    const GradCache train_cache = build_grad_cache(net, domain.train);
    const GradCache val_cache = build_grad_cache(net, domain.val);
    const EvalModulated base = eval_modulated(net, 0.0, domain.val, val_cache);

    DomainStage2Result best;
    best.domain = domain.name;
    best.a_x = base.accuracy;
    best.l_x = base.loss;
    best.d_x = base.domain_accuracy;
    bool have_best = false;

    for (std::size_t bi = 0; bi < b_grid.size(); ++bi) {
        ModulationConfig cfg = cfg_base;
        cfg.bound = b_grid[bi];
        RngStream rng = derive_stream(domain_seed, "stage2/b/" + std::to_string(bi));
        const double learned = learn_lambda(net, domain.train, train_cache, cfg, rng);
        auto evaluator = [&](double lam) {
            const EvalModulated r = eval_modulated(net, lam, domain.val, val_cache);
            return std::make_pair(r.accuracy, r.loss);
        };
        const ScaleResult scaled = scale_lambda(learned, base.accuracy, evaluator, cfg);
        const EvalModulated val = eval_modulated(net, scaled.lam, domain.val, val_cache);

        const bool better =
            !have_best || val.accuracy > best.a_xplus ||
            (val.accuracy == best.a_xplus && val.loss < best.l_xplus);
        if (better) {
            best.b = cfg.bound;
            best.lambda_learned = learned;
            best.lambda_final = scaled.lam;
            best.a_xplus = val.accuracy;
            best.l_xplus = val.loss;
            best.d_xplus = val.domain_accuracy;
            best.history = scaled.history;
            best.effect = {val.domain_loss - base.domain_loss, base.accuracy, val.accuracy,
                           base.loss, val.loss};
            have_best = true;
        }
    }
    return best;
}

inline std::string lambda_csv_header() {
    return "domain,b,lambda_learned,lambda_final,a_x,a_xplus,l_x,l_xplus,d_x,d_xplus";
}

// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string lambda_csv_row(const DomainStage2Result& r) {
    std::string out = r.domain;
    for (double v : {r.b, r.lambda_learned, r.lambda_final, r.a_x, r.a_xplus, r.l_x, r.l_xplus,
                     r.d_x, r.d_xplus}) {
        out += ',';
        out += format_double(v);
    }
    return out;
}

} // namespace dama
