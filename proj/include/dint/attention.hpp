#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dint/nn_ops.hpp"
#include "dint/rng.hpp"

namespace dint {

enum class Arch { vanilla, diff, dint };

inline const char* arch_name(Arch a) {
    switch (a) {
        case Arch::vanilla: return "vanilla";
        case Arch::diff: return "diff";
        case Arch::dint: return "dint";
    }
    return "?";
}

inline Arch arch_from_string(const std::string& s) {
    if (s == "vanilla") return Arch::vanilla;
    if (s == "diff") return Arch::diff;
    if (s == "dint") return Arch::dint;
    throw ConfigError("unknown arch '" + s + "' (expected vanilla, diff, or dint)");
}

inline const char* g_mode_name(GMode m) {
    return m == GMode::paper_literal ? "paper_literal" : "causal_prefix";
}

inline GMode g_mode_from_string(const std::string& s) {
    if (s == "paper_literal") return GMode::paper_literal;
    if (s == "causal_prefix") return GMode::causal_prefix;
    throw ConfigError("unknown g_mode '" + s + "' (expected paper_literal or causal_prefix)");
}

// Depth schedule for the subtraction weight's starting point. layer is
// 1-based; the first layer gets 0.2 and deeper layers approach 0.8.
inline double lambda_init_for_layer(size_t layer) {
    return 0.8 - 0.6 * std::exp(-0.3 * (static_cast<double>(layer) - 1.0));
}

struct AttentionConfig {
    Arch arch = Arch::dint;
    size_t d_model = 64;
    size_t d = 8;      // per-map head dim; every head projects to width 2d
    size_t heads = 4;  // must equal d_model / (2 d)
    double lambda_init = 0.8;
    bool tie_gamma = true;       // dint: reuse lambda as the importance weight
    bool headwise_norm = true;   // per-head RMS norm before the output proj
    GMode g_mode = GMode::causal_prefix;
    bool use_rope = true;
    bool causal = true;

    void validate() const {
        if (d == 0 || heads == 0 || d_model == 0)
            throw ConfigError("attention: d_model, d, heads must be positive");
        if (heads * 2 * d != d_model)
            throw ConfigError("attention: heads * 2d must equal d_model exactly, got " +
                              std::to_string(heads) + " * " + std::to_string(2 * d) +
                              " != " + std::to_string(d_model));
        if (use_rope && arch != Arch::vanilla && d % 2 != 0)
            throw ConfigError("attention: rotary embedding needs even d, got " +
                              std::to_string(d));
    }
};

// Parameter initializers. Each tensor draws from its own stream keyed by its
// name, so adding or reordering parameters never shifts other tensors' values.
template <typename T>
Tensor<T> init_trunc_normal(Rng& master, const std::string& name, std::vector<size_t> shape,
                            double stddev) {
    Rng r = master.fork(fnv1a(name));
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(r.trunc_normal(stddev));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> init_const(std::vector<size_t> shape, double v) {
    Tensor<T> t = Tensor<T>::full(std::move(shape), static_cast<T>(v));
    t.set_requires_grad(true);
    return t;
}

// lambda = exp(lq1 . lk1) - exp(lq2 . lk2) + lambda_init, as a graph scalar
// so its parameters train through the attention map.
template <typename T>
Tensor<T> compute_lambda(Graph<T>* g, const Tensor<T>& lq1, const Tensor<T>& lk1,
                         const Tensor<T>& lq2, const Tensor<T>& lk2, double lambda_init) {
    auto e1 = exp(g, sum_all(g, mul(g, lq1, lk1)));
    auto e2 = exp(g, sum_all(g, mul(g, lq2, lk2)));
    return add_const(g, sub(g, e1, e2), lambda_init);
}

// Value snapshots of one head's attention maps, for inspection after a
// forward pass. Tensors here share storage with the forward activations.
template <typename T>
struct HeadDiag {
    Tensor<T> a1;       // first softmax map
    Tensor<T> a2;       // second softmax map (empty for vanilla)
    Tensor<T> gi;       // expanded global importance (dint only)
    Tensor<T> a_final;  // map actually multiplied with V
    Tensor<T> out;      // head output A_final . V, before any head norm
};

template <typename T>
struct AttnDiag {
    std::vector<HeadDiag<T>> heads;
    double lambda_value = 0.0;
    double gamma_value = 0.0;
};

// ---------------------------------------------------------------------------
// Single-head cores. q/k/v are already projected (and rotated, if enabled).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> vanilla_head(Graph<T>* g, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const Mask* mask, HeadDiag<T>* diag = nullptr) {
    double inv = 1.0 / std::sqrt(static_cast<double>(q.extent(1)));
    auto a = softmax_lastdim(g, scale(g, matmul_nt(g, q, k), inv), mask);
    auto out = matmul(g, a, v);
    if (diag) {
        diag->a1 = a;
        diag->a_final = a;
        diag->out = out;
    }
    return out;
}

template <typename T>
Tensor<T> diff_head(Graph<T>* g, const Tensor<T>& q1, const Tensor<T>& k1, const Tensor<T>& q2,
                    const Tensor<T>& k2, const Tensor<T>& v, const Tensor<T>& lambda,
                    const Mask* mask, HeadDiag<T>* diag = nullptr) {
    double inv = 1.0 / std::sqrt(static_cast<double>(q1.extent(1)));
    auto a1 = softmax_lastdim(g, scale(g, matmul_nt(g, q1, k1), inv), mask);
    auto a2 = softmax_lastdim(g, scale(g, matmul_nt(g, q2, k2), inv), mask);
    auto a = sub(g, a1, mul(g, a2, lambda));
    auto out = matmul(g, a, v);
    if (diag) {
        diag->a1 = a1;
        diag->a2 = a2;
        diag->a_final = a;
        diag->out = out;
    }
    return out;
}

template <typename T>
Tensor<T> dint_head(Graph<T>* g, const Tensor<T>& q1, const Tensor<T>& k1, const Tensor<T>& q2,
                    const Tensor<T>& k2, const Tensor<T>& v, const Tensor<T>& lambda,
                    const Tensor<T>& gamma, GMode mode, const Mask* mask,
                    HeadDiag<T>* diag = nullptr) {
    double inv = 1.0 / std::sqrt(static_cast<double>(q1.extent(1)));
    auto a1 = softmax_lastdim(g, scale(g, matmul_nt(g, q1, k1), inv), mask);
    auto a2 = softmax_lastdim(g, scale(g, matmul_nt(g, q2, k2), inv), mask);
    auto gi = global_importance(g, a1, mode);
    auto a = add(g, sub(g, a1, mul(g, a2, lambda)), mul(g, gi, gamma));
    auto out = matmul(g, a, v);
    if (diag) {
        diag->a1 = a1;
        diag->a2 = a2;
        diag->gi = gi;
        diag->a_final = a;
        diag->out = out;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-head block: per-head projections to width 2d, the head core above,
// optional per-head RMS norm, concat, output projection. The subtraction
// weight is one scalar per layer, shared by all heads.
// ---------------------------------------------------------------------------
template <typename T>
struct MultiHeadAttention {
    AttentionConfig cfg;
    std::vector<Tensor<T>> wq, wk, wv;  // per head, [d_model, 2d]
    Tensor<T> wo;                       // [d_model, d_model]
    std::vector<Tensor<T>> norm_gain;   // per head, [2d]; only if headwise_norm
    Tensor<T> lq1, lk1, lq2, lk2;       // [d]; only for diff/dint
    Tensor<T> gamma_raw;                // [1]; only for dint with tie_gamma off

    static MultiHeadAttention init(const AttentionConfig& cfg, Rng& master,
                                   const std::string& prefix) {
        cfg.validate();
        MultiHeadAttention m;
        m.cfg = cfg;
        size_t width = 2 * cfg.d;
        double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        for (size_t h = 0; h < cfg.heads; ++h) {
            std::string hp = prefix + ".h" + std::to_string(h);
            m.wq.push_back(init_trunc_normal<T>(master, hp + ".wq", {cfg.d_model, width}, stddev));
            m.wk.push_back(init_trunc_normal<T>(master, hp + ".wk", {cfg.d_model, width}, stddev));
            m.wv.push_back(init_trunc_normal<T>(master, hp + ".wv", {cfg.d_model, width}, stddev));
            if (cfg.headwise_norm) m.norm_gain.push_back(init_const<T>({width}, 1.0));
        }
        m.wo = init_trunc_normal<T>(master, prefix + ".wo", {cfg.d_model, cfg.d_model}, stddev);
        if (cfg.arch != Arch::vanilla) {
            // Zero-initialized so the subtraction weight starts exactly at
            // lambda_init.
            m.lq1 = init_const<T>({cfg.d}, 0.0);
            m.lk1 = init_const<T>({cfg.d}, 0.0);
            m.lq2 = init_const<T>({cfg.d}, 0.0);
            m.lk2 = init_const<T>({cfg.d}, 0.0);
        }
        if (cfg.arch == Arch::dint && !cfg.tie_gamma)
            m.gamma_raw = init_const<T>({1}, cfg.lambda_init);
        return m;
    }

    void collect_params(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor<T>>>& out) const {
        for (size_t h = 0; h < cfg.heads; ++h) {
            std::string hp = prefix + ".h" + std::to_string(h);
            out.emplace_back(hp + ".wq", wq[h]);
            out.emplace_back(hp + ".wk", wk[h]);
            out.emplace_back(hp + ".wv", wv[h]);
            if (cfg.headwise_norm) out.emplace_back(hp + ".norm_gain", norm_gain[h]);
        }
        out.emplace_back(prefix + ".wo", wo);
        if (cfg.arch != Arch::vanilla) {
            out.emplace_back(prefix + ".lq1", lq1);
            out.emplace_back(prefix + ".lk1", lk1);
            out.emplace_back(prefix + ".lq2", lq2);
            out.emplace_back(prefix + ".lk2", lk2);
        }
        if (cfg.arch == Arch::dint && !cfg.tie_gamma)
            out.emplace_back(prefix + ".gamma", gamma_raw);
    }

    // Current scalar value of the subtraction weight (0 for vanilla).
    double lambda_value() const {
        if (cfg.arch == Arch::vanilla) return 0.0;
        double d1 = 0, d2 = 0;
        for (size_t i = 0; i < cfg.d; ++i) {
            d1 += static_cast<double>(lq1.at(i)) * static_cast<double>(lk1.at(i));
            d2 += static_cast<double>(lq2.at(i)) * static_cast<double>(lk2.at(i));
        }
        return std::exp(d1) - std::exp(d2) + cfg.lambda_init;
    }

    double gamma_value() const {
        if (cfg.arch != Arch::dint) return 0.0;
        return cfg.tie_gamma ? lambda_value() : static_cast<double>(gamma_raw.at(0));
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, const Mask* mask,
                      AttnDiag<T>* diag = nullptr) const {
        Tensor<T> lambda, gamma;
        if (cfg.arch != Arch::vanilla)
            lambda = compute_lambda(g, lq1, lk1, lq2, lk2, cfg.lambda_init);
        if (cfg.arch == Arch::dint) gamma = cfg.tie_gamma ? lambda : gamma_raw;
        if (diag) {
            diag->heads.assign(cfg.heads, HeadDiag<T>{});
            diag->lambda_value = lambda_value();
            diag->gamma_value = gamma_value();
        }
        std::vector<Tensor<T>> outs;
        outs.reserve(cfg.heads);
        for (size_t h = 0; h < cfg.heads; ++h) {
            auto q = matmul(g, x, wq[h]);
            auto k = matmul(g, x, wk[h]);
            auto v = matmul(g, x, wv[h]);
            HeadDiag<T>* hd = diag ? &diag->heads[h] : nullptr;
            Tensor<T> o;
            if (cfg.arch == Arch::vanilla) {
                if (cfg.use_rope) {
                    q = rope(g, q);
                    k = rope(g, k);
                }
                o = vanilla_head(g, q, k, v, mask, hd);
            } else {
                auto q1 = slice_cols(g, q, 0, cfg.d);
                auto q2 = slice_cols(g, q, cfg.d, cfg.d);
                auto k1 = slice_cols(g, k, 0, cfg.d);
                auto k2 = slice_cols(g, k, cfg.d, cfg.d);
                if (cfg.use_rope) {
                    q1 = rope(g, q1);
                    q2 = rope(g, q2);
                    k1 = rope(g, k1);
                    k2 = rope(g, k2);
                }
                if (cfg.arch == Arch::diff)
                    o = diff_head(g, q1, k1, q2, k2, v, lambda, mask, hd);
                else
                    o = dint_head(g, q1, k1, q2, k2, v, lambda, gamma, cfg.g_mode, mask, hd);
            }
            if (cfg.headwise_norm) o = rmsnorm(g, o, norm_gain[h]);
            outs.push_back(o);
        }
        return matmul(g, concat_cols(g, outs), wo);
    }
};

}  // namespace dint
