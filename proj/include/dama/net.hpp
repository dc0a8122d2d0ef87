#pragma once

// Domain-attention network. Two recurrent encoders share the embedded
// input: the domain encoder mean-pools into a domain vector V_d, the
// sentiment encoder runs over [H_d | X] and is pooled with an attention
// distribution queried by V_d. Each branch ends in ReLU projection ->
// dropout -> linear head. Training minimizes sentiment CE plus gamma
// times domain CE, both batch-averaged.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dama/layers.hpp"
#include "dama/xlstm.hpp"

namespace dama {

struct NetConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 32;
    std::size_t hidden_dim = 32;
    std::size_t proj_dim = 64;
    std::size_t num_domains = 0;
    double gamma = 0.02;
    double dropout_p = 0.5;
    ForgetMode forget_mode = ForgetMode::Sigmoid;
};

struct DamNet {
    NetConfig cfg;
    EmbeddingTable embedding;
    SLstmParams xlstm_d; // input: embeddings
    SLstmParams xlstm_s; // input: [H_d | X]
    LinearParams attention; // (hidden + hidden) -> 1
    LinearParams proj_d, proj_s; // hidden -> proj_dim
    LinearParams head_d; // proj_dim -> num_domains
    LinearParams head_s; // proj_dim -> 2

    DamNet() = default;
    DamNet(const NetConfig& c, RngStream& rng)
        : cfg(c), embedding(c.vocab_size, c.embed_dim, rng),
          xlstm_d(c.embed_dim, c.hidden_dim, rng, c.forget_mode),
          xlstm_s(c.embed_dim + c.hidden_dim, c.hidden_dim, rng, c.forget_mode),
          attention(2 * c.hidden_dim, 1, rng), proj_d(c.hidden_dim, c.proj_dim, rng),
          proj_s(c.hidden_dim, c.proj_dim, rng), head_d(c.proj_dim, c.num_domains, rng),
          head_s(c.proj_dim, 2, rng) {}

    // Fixed parameter order shared by gradients, Adam states and checkpoints.
    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        out.emplace_back("embedding", &embedding.weights);
        auto add_cell = [&out](const std::string& prefix, SLstmParams& p) {
            const char* gates = "zifo";
            GateParams* gp[4] = {&p.z, &p.i, &p.f, &p.o};
            for (int g = 0; g < 4; ++g) {
                const std::string base = prefix + "." + gates[g];
                out.emplace_back(base + ".w", &gp[g]->w);
                out.emplace_back(base + ".r", &gp[g]->r);
                out.emplace_back(base + ".b", &gp[g]->b);
            }
        };
        add_cell("xlstm_d", xlstm_d);
        add_cell("xlstm_s", xlstm_s);
        auto add_linear = [&out](const std::string& name, LinearParams& p) {
            out.emplace_back(name + ".W", &p.W);
            out.emplace_back(name + ".b", &p.b);
        };
        add_linear("attention", attention);
        add_linear("proj_d", proj_d);
        add_linear("proj_s", proj_s);
        add_linear("head_d", head_d);
        add_linear("head_s", head_s);
        return out;
    }

    std::vector<std::pair<std::string, const Tensor*>> named_params() const {
        auto mutable_list = const_cast<DamNet*>(this)->named_params();
        std::vector<std::pair<std::string, const Tensor*>> out;
        out.reserve(mutable_list.size());
        for (auto& [name, tensor] : mutable_list) out.emplace_back(name, tensor);
        return out;
    }
};

struct NetGrads {
    Tensor embedding;
    SLstmGrads xlstm_d, xlstm_s;
    LinearGrads attention, proj_d, proj_s, head_d, head_s;

    NetGrads() = default;
    explicit NetGrads(DamNet& net)
        : embedding(net.embedding.weights.shape), xlstm_d(net.xlstm_d), xlstm_s(net.xlstm_s),
          attention(net.attention), proj_d(net.proj_d), proj_s(net.proj_s), head_d(net.head_d),
          head_s(net.head_s) {}

    std::vector<Tensor*> param_order() {
        return {&embedding,
                &xlstm_d.dw_z, &xlstm_d.dr_z, &xlstm_d.db_z,
                &xlstm_d.dw_i, &xlstm_d.dr_i, &xlstm_d.db_i,
                &xlstm_d.dw_f, &xlstm_d.dr_f, &xlstm_d.db_f,
                &xlstm_d.dw_o, &xlstm_d.dr_o, &xlstm_d.db_o,
                &xlstm_s.dw_z, &xlstm_s.dr_z, &xlstm_s.db_z,
                &xlstm_s.dw_i, &xlstm_s.dr_i, &xlstm_s.db_i,
                &xlstm_s.dw_f, &xlstm_s.dr_f, &xlstm_s.db_f,
                &xlstm_s.dw_o, &xlstm_s.dr_o, &xlstm_s.db_o,
                &attention.W, &attention.b,
                &proj_d.W, &proj_d.b,
                &proj_s.W, &proj_s.b,
                &head_d.W, &head_d.b,
                &head_s.W, &head_s.b};
    }
};

struct Labels {
    std::size_t y_s = 0; // sentiment: negative=0, positive=1
    std::size_t y_d = 0; // domain index
};

struct ForwardTrace {
    Tensor X;                       // [n x embed]
    std::vector<std::uint8_t> mask; // 1 = real token
    SLstmTrace domain_trace;        // H_d in domain_trace.H
    Tensor V_d;
    Tensor H_ds;                    // [n x (hidden + embed)]
    SLstmTrace sent_trace;          // H_s in sent_trace.H
    std::vector<double> attn_pre;   // pre-ReLU scores
    Tensor A_ttn;                   // attention distribution; 0 at PAD
    Tensor V_s;
    Tensor proj_d_out, u_d, drop_mask_d, logits_d, q;
    Tensor proj_s_out, u_s, drop_mask_s, logits_s, p;
};

namespace detail {

inline std::size_t real_count(const std::vector<std::uint8_t>& mask) {
    std::size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
}

inline void relu_inplace(Tensor& t) {
    for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

} // namespace detail

// H_d and its masked mean pooling.
inline void encode_domain(const DamNet& net, const Tensor& X, const std::vector<std::uint8_t>& mask,
                          SLstmTrace& domain_trace, Tensor& V_d) {
    const std::size_t n_real = detail::real_count(mask);
    if (n_real == 0) throw std::invalid_argument("encode_domain: all-PAD sequence");
    domain_trace = slstm_forward_traced(net.xlstm_d, X, mask);
    V_d = Tensor({net.cfg.hidden_dim});
    for (std::size_t t = 0; t < X.rows(); ++t) {
        if (!mask[t]) continue;
        for (std::size_t j = 0; j < V_d.size(); ++j) V_d[j] += domain_trace.H.at(t, j);
    }
    for (double& v : V_d.data) v /= static_cast<double>(n_real);
}

// H_s over the concatenation [H_d | X].
inline void encode_sentiment(const DamNet& net, const Tensor& X, const Tensor& H_d,
                             const std::vector<std::uint8_t>& mask, Tensor& H_ds,
                             SLstmTrace& sent_trace) {
    if (X.rows() != H_d.rows()) {
        throw std::invalid_argument("encode_sentiment: step count mismatch " + X.shape_str() +
                                    " vs " + H_d.shape_str());
    }
    const std::size_t n = X.rows(), H = H_d.cols(), E = X.cols();
    H_ds = Tensor({n, H + E});
    for (std::size_t t = 0; t < n; ++t) {
        double* dst = H_ds.row(t);
        std::copy(H_d.row(t), H_d.row(t) + H, dst);
        std::copy(X.row(t), X.row(t) + E, dst + H);
    }
    sent_trace = slstm_forward_traced(net.xlstm_s, H_ds, mask);
}

// Attention over H_s with V_d as the query: one ReLU'd linear score per
// step, softmax over non-PAD steps, weighted sum.
inline void attend(const DamNet& net, const Tensor& V_d, const Tensor& H_s,
                   const std::vector<std::uint8_t>& mask, std::vector<double>& attn_pre,
                   Tensor& A_ttn, Tensor& V_s) {
    const std::size_t n = H_s.rows(), H = H_s.cols();
    attn_pre.assign(n, 0.0);
    std::vector<double> scores;
    std::vector<std::size_t> positions;
    Tensor it({2 * H});
    std::copy(V_d.data.begin(), V_d.data.end(), it.data.begin());
    for (std::size_t t = 0; t < n; ++t) {
        if (!mask[t]) continue;
        std::copy(H_s.row(t), H_s.row(t) + H, it.data.begin() + H);
        const double pre = linear(net.attention, it)[0];
        attn_pre[t] = pre;
        scores.push_back(pre > 0.0 ? pre : 0.0);
        positions.push_back(t);
    }
    std::vector<double> probs(scores.size());
    softmax_span(scores.data(), scores.size(), probs.data());
    A_ttn = Tensor({n});
    V_s = Tensor({H});
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const std::size_t t = positions[k];
        A_ttn[t] = probs[k];
        for (std::size_t j = 0; j < H; ++j) V_s[j] += probs[k] * H_s.at(t, j);
    }
}

// ReLU projection -> dropout -> head. Shared by both classifiers.
inline void classify_branch(const LinearParams& proj, const LinearParams& head, const Tensor& v,
                            const DropoutSpec& drop, RngStream& rng, Tensor& proj_out, Tensor& u,
                            Tensor& drop_mask, Tensor& logits, Tensor& prob) {
    proj_out = linear(proj, v);
    u = proj_out;
    detail::relu_inplace(u);
    const Tensor dropped = dropout(u, drop, rng, &drop_mask);
    logits = linear(head, dropped);
    prob = softmax(logits);
}

inline ForwardTrace forward_from_embeddings(const DamNet& net, Tensor X,
                                            std::vector<std::uint8_t> mask, Mode mode,
                                            RngStream& rng) {
    ForwardTrace tr;
    tr.X = std::move(X);
    tr.mask = std::move(mask);
    encode_domain(net, tr.X, tr.mask, tr.domain_trace, tr.V_d);
    encode_sentiment(net, tr.X, tr.domain_trace.H, tr.mask, tr.H_ds, tr.sent_trace);
    attend(net, tr.V_d, tr.sent_trace.H, tr.mask, tr.attn_pre, tr.A_ttn, tr.V_s);
    const DropoutSpec drop{net.cfg.dropout_p, mode};
    classify_branch(net.proj_d, net.head_d, tr.V_d, drop, rng, tr.proj_d_out, tr.u_d,
                    tr.drop_mask_d, tr.logits_d, tr.q);
    classify_branch(net.proj_s, net.head_s, tr.V_s, drop, rng, tr.proj_s_out, tr.u_s,
                    tr.drop_mask_s, tr.logits_s, tr.p);
    return tr;
}

inline ForwardTrace forward_example(const DamNet& net, const std::vector<std::int32_t>& ids,
                                    Mode mode, RngStream& rng) {
    std::vector<std::uint8_t> mask(ids.size());
    for (std::size_t t = 0; t < ids.size(); ++t) mask[t] = ids[t] != kPadId;
    return forward_from_embeddings(net, embed(net.embedding, ids), std::move(mask), mode, rng);
}

// Argmax with ties broken toward class 0.
inline std::size_t predict(const Tensor& prob) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < prob.size(); ++i) {
        if (prob[i] > prob[best]) best = i;
    }
    return best;
}

// Eq-16 style scalarized objective, each term batch-averaged.
inline double joint_loss(const std::vector<ForwardTrace>& traces, const std::vector<Labels>& labels,
                         double gamma) {
    if (traces.size() != labels.size()) {
        throw std::invalid_argument("joint_loss: traces and labels misaligned");
    }
    double ls = 0.0, ld = 0.0;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        ls += cross_entropy(traces[i].logits_s, labels[i].y_s);
        ld += cross_entropy(traces[i].logits_d, labels[i].y_d);
    }
    const double inv = 1.0 / static_cast<double>(traces.size());
    return ls * inv + gamma * ld * inv;
}

// Reverse pass for one example. w_s and w_d scale the sentiment and domain
// CE gradients (batch averaging goes in through them). When grads is null
// only the input gradient is produced; when d_X is null only parameter
// gradients are produced. The sentiment branch is skipped entirely when
// w_s == 0 (the domain loss does not touch it).
inline void backward_example(const DamNet& net, const ForwardTrace& tr, const Labels& lab,
                             double w_s, double w_d, NetGrads* grads, Tensor* d_X) {
    const std::size_t n = tr.X.rows(), H = net.cfg.hidden_dim, E = net.cfg.embed_dim;
    const std::size_t n_real = detail::real_count(tr.mask);
    Tensor d_V_d({H});
    Tensor d_H_s({n, H});
    Tensor d_H_d({n, H});
    Tensor dX_local({n, E});

    auto branch_backward = [&](const LinearParams& proj, const LinearParams& head,
                               const Tensor& v_in, const Tensor& proj_out, const Tensor& drop_mask,
                               const Tensor& logits, std::size_t label, double weight,
                               LinearGrads* g_proj, LinearGrads* g_head, Tensor& d_v) {
        Tensor d_logits = cross_entropy_grad(logits, label);
        for (double& g : d_logits.data) g *= weight;
        // head input was dropout(relu(proj_out))
        Tensor dropped(proj_out.shape);
        for (std::size_t i = 0; i < dropped.size(); ++i) {
            const double relu = proj_out[i] > 0.0 ? proj_out[i] : 0.0;
            dropped.data[i] = relu * drop_mask[i];
        }
        Tensor d_dropped(proj_out.shape);
        if (g_head) {
            linear_backward(head, dropped, d_logits, *g_head, &d_dropped);
        } else {
            LinearGrads scratch(head);
            linear_backward(head, dropped, d_logits, scratch, &d_dropped);
        }
        Tensor d_proj_out(proj_out.shape);
        for (std::size_t i = 0; i < d_proj_out.size(); ++i) {
            d_proj_out.data[i] =
                proj_out[i] > 0.0 ? d_dropped.data[i] * drop_mask[i] : 0.0;
        }
        if (g_proj) {
            linear_backward(proj, v_in, d_proj_out, *g_proj, &d_v);
        } else {
            LinearGrads scratch(proj);
            linear_backward(proj, v_in, d_proj_out, scratch, &d_v);
        }
    };

    if (w_d != 0.0) {
        branch_backward(net.proj_d, net.head_d, tr.V_d, tr.proj_d_out, tr.drop_mask_d, tr.logits_d,
                        lab.y_d, w_d, grads ? &grads->proj_d : nullptr,
                        grads ? &grads->head_d : nullptr, d_V_d);
    }

    if (w_s != 0.0) {
        Tensor d_V_s({H});
        branch_backward(net.proj_s, net.head_s, tr.V_s, tr.proj_s_out, tr.drop_mask_s, tr.logits_s,
                        lab.y_s, w_s, grads ? &grads->proj_s : nullptr,
                        grads ? &grads->head_s : nullptr, d_V_s);

        // attention: V_s = sum_t A[t] H_s[t]
        std::vector<double> dA(n, 0.0), ds(n, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            if (!tr.mask[t]) continue;
            double acc = 0.0;
            for (std::size_t j = 0; j < H; ++j) {
                acc += d_V_s[j] * tr.sent_trace.H.at(t, j);
                d_H_s.at(t, j) += tr.A_ttn[t] * d_V_s[j];
            }
            dA[t] = acc;
        }
        double dot_a = 0.0;
        for (std::size_t t = 0; t < n; ++t) dot_a += tr.A_ttn[t] * dA[t];
        Tensor it({2 * H});
        std::copy(tr.V_d.data.begin(), tr.V_d.data.end(), it.data.begin());
        for (std::size_t t = 0; t < n; ++t) {
            if (!tr.mask[t]) continue;
            ds[t] = tr.A_ttn[t] * (dA[t] - dot_a);
            const double d_pre = tr.attn_pre[t] > 0.0 ? ds[t] : 0.0;
            if (d_pre == 0.0) continue;
            std::copy(tr.sent_trace.H.row(t), tr.sent_trace.H.row(t) + H, it.data.begin() + H);
            if (grads) {
                Tensor d_score({1}, {d_pre});
                linear_backward(net.attention, it, d_score, grads->attention, nullptr);
            }
            for (std::size_t j = 0; j < H; ++j) {
                d_V_d[j] += d_pre * net.attention.W.at(j, 0);
                d_H_s.at(t, j) += d_pre * net.attention.W.at(H + j, 0);
            }
        }

        // sentiment encoder
        Tensor d_H_ds({n, H + E});
        SLstmGrads scratch_s(net.xlstm_s);
        slstm_backward(net.xlstm_s, tr.H_ds, tr.sent_trace, d_H_s,
                       grads ? grads->xlstm_s : scratch_s, &d_H_ds);
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t j = 0; j < H; ++j) d_H_d.at(t, j) += d_H_ds.at(t, j);
            for (std::size_t k = 0; k < E; ++k) dX_local.at(t, k) += d_H_ds.at(t, H + k);
        }
    }

    // mean pooling: V_d = mean over non-PAD rows of H_d
    const double inv_real = 1.0 / static_cast<double>(n_real);
    for (std::size_t t = 0; t < n; ++t) {
        if (!tr.mask[t]) continue;
        for (std::size_t j = 0; j < H; ++j) d_H_d.at(t, j) += d_V_d[j] * inv_real;
    }

    SLstmGrads scratch_d(net.xlstm_d);
    slstm_backward(net.xlstm_d, tr.X, tr.domain_trace, d_H_d, grads ? grads->xlstm_d : scratch_d,
                   &dX_local);

    if (d_X) {
        for (std::size_t t = 0; t < n; ++t) {
            if (!tr.mask[t]) continue; // PAD rows stay zero
            for (std::size_t k = 0; k < E; ++k) d_X->at(t, k) += dX_local.at(t, k);
        }
    }
}

struct BatchExample {
    std::vector<std::int32_t> ids;
    Labels labels;
};

// Joint loss and exact gradients for a batch. Examples are processed in
// order; dropout draws come from rng sequentially, so the result is a pure
// function of (net, batch, mode, rng state).
inline double param_grads(const DamNet& net, const std::vector<BatchExample>& batch, double gamma,
                          Mode mode, RngStream& rng, NetGrads& grads) {
    if (batch.empty()) throw std::invalid_argument("param_grads: empty batch");
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss_s = 0.0, loss_d = 0.0;
    for (const BatchExample& ex : batch) {
        ForwardTrace tr = forward_example(net, ex.ids, mode, rng);
        loss_s += cross_entropy(tr.logits_s, ex.labels.y_s);
        loss_d += cross_entropy(tr.logits_d, ex.labels.y_d);
        Tensor d_X({tr.X.rows(), net.cfg.embed_dim});
        backward_example(net, tr, ex.labels, inv, gamma * inv, &grads, &d_X);
        // PAD rows of d_X are exact zeros, so this only touches real tokens.
        embed_backward(ex.ids, d_X, grads.embedding);
    }
    const double loss = (loss_s + gamma * loss_d) * inv;
    if (!std::isfinite(loss)) {
        throw std::runtime_error("param_grads: non-finite loss (sentiment " +
                                 std::to_string(loss_s * inv) + ", domain " +
                                 std::to_string(loss_d * inv) + ")");
    }
    return loss;
}

// Gradient of the unweighted domain cross-entropy w.r.t. this example's
// embedding matrix, at delta = 0, eval mode. PAD rows are zero.
inline Tensor input_grad_domain(const DamNet& net, const std::vector<std::int32_t>& ids,
                                std::size_t y_d) {
    RngStream rng(0); // eval mode draws nothing
    ForwardTrace tr = forward_example(net, ids, Mode::Eval, rng);
    Tensor g({tr.X.rows(), net.cfg.embed_dim});
    backward_example(net, tr, Labels{0, y_d}, 0.0, 1.0, nullptr, &g);
    return g;
}

// Gradient of the sentiment cross-entropy w.r.t. the (possibly modulated)
// embeddings X, eval mode.
inline Tensor input_grad_sentiment(const DamNet& net, const Tensor& X,
                                   const std::vector<std::uint8_t>& mask, std::size_t y_s) {
    RngStream rng(0);
    ForwardTrace tr = forward_from_embeddings(net, X, mask, Mode::Eval, rng);
    Tensor g({X.rows(), X.cols()});
    backward_example(net, tr, Labels{y_s, 0}, 1.0, 0.0, nullptr, &g);
    return g;
}

} // namespace dama
