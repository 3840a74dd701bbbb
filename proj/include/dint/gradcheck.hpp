#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dint/model.hpp"

namespace dint {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0;
    size_t probes = 0;
};

// Relative error with a unit floor: tiny gradients are judged absolutely,
// which matches the f64 central-difference noise floor.
inline double grad_rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) /
           std::max({1.0, std::abs(analytic), std::abs(fd)});
}

// Probes randomly chosen parameter elements of a scalar-loss builder against
// central finite differences. The builder must be a pure function of the
// given tensors: build(&graph) for the recorded pass, build(nullptr) for the
// two perturbed re-evaluations per probe.
template <typename Build>
GradCheckEntry fd_check(const std::string& name, std::vector<Tensor<double>> params,
                        Build build, Rng& rng, size_t probes = 50, double eps = 1e-5) {
    for (auto& p : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    Graph<double> g;
    g.backward(build(&g));

    size_t total = 0;
    for (const auto& p : params) total += p.numel();
    GradCheckEntry e{name, 0, 0};
    for (size_t k = 0; k < probes; ++k) {
        size_t flat = rng.below(total);
        size_t which = 0;
        while (flat >= params[which].numel()) flat -= params[which++].numel();
        Tensor<double>& p = params[which];
        double saved = p.at(flat);
        p.at(flat) = saved + eps;
        double lp = build(nullptr).at(0);
        p.at(flat) = saved - eps;
        double lm = build(nullptr).at(0);
        p.at(flat) = saved;
        double fd = (lp - lm) / (2 * eps);
        e.max_rel_err = std::max(e.max_rel_err, grad_rel_err(p.grad_view()[flat], fd));
        ++e.probes;
    }
    return e;
}

namespace detail {

inline Tensor<double> rand_tensor(Rng& rng, std::vector<size_t> shape, double s = 1.0,
                                  bool grad = true) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(-s, s);
    t.set_requires_grad(grad);
    return t;
}

// Reduces a tensor to a scalar through fixed random weights, so every output
// element influences the loss with a distinct coefficient.
inline Tensor<double> weighted_sum(Graph<double>* g, const Tensor<double>& t,
                                   const Tensor<double>& w) {
    return sum_all(g, mul(g, t, w));
}

}  // namespace detail

// Finite-difference sweep over every operation with learnable inputs, each
// probed at random elements of fresh random instances.
inline std::vector<GradCheckEntry> standard_op_checks(uint64_t seed, size_t probes = 50,
                                                      double eps = 1e-5) {
    using detail::rand_tensor;
    using detail::weighted_sum;
    std::vector<GradCheckEntry> out;
    Rng master(seed);

    auto run = [&](const std::string& name, auto make) {
        Rng rng = master.fork(fnv1a(name));
        out.push_back(make(rng));
    };

    run("matmul", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 5}), b = rand_tensor(rng, {5, 3});
        auto w = rand_tensor(rng, {4, 3}, 1.0, false);
        return fd_check(
            "matmul", {a, b},
            [&](Graph<double>* g) { return weighted_sum(g, matmul(g, a, b), w); }, rng, probes,
            eps);
    });
    run("matmul_nt", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 5}), b = rand_tensor(rng, {6, 5});
        auto w = rand_tensor(rng, {4, 6}, 1.0, false);
        return fd_check(
            "matmul_nt", {a, b},
            [&](Graph<double>* g) { return weighted_sum(g, matmul_nt(g, a, b), w); }, rng,
            probes, eps);
    });
    run("add", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 6}), b = rand_tensor(rng, {6});
        auto w = rand_tensor(rng, {4, 6}, 1.0, false);
        return fd_check(
            "add", {a, b}, [&](Graph<double>* g) { return weighted_sum(g, add(g, a, b), w); },
            rng, probes, eps);
    });
    run("sub", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 6}), b = rand_tensor(rng, {6});
        auto w = rand_tensor(rng, {4, 6}, 1.0, false);
        return fd_check(
            "sub", {a, b}, [&](Graph<double>* g) { return weighted_sum(g, sub(g, a, b), w); },
            rng, probes, eps);
    });
    run("mul", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 6}), b = rand_tensor(rng, {1});
        auto w = rand_tensor(rng, {4, 6}, 1.0, false);
        return fd_check(
            "mul", {a, b}, [&](Graph<double>* g) { return weighted_sum(g, mul(g, a, b), w); },
            rng, probes, eps);
    });
    run("scale", [&](Rng& rng) {
        auto a = rand_tensor(rng, {5, 3});
        auto w = rand_tensor(rng, {5, 3}, 1.0, false);
        return fd_check(
            "scale", {a},
            [&](Graph<double>* g) { return weighted_sum(g, scale(g, a, 0.37), w); }, rng,
            probes, eps);
    });
    run("add_const", [&](Rng& rng) {
        auto a = rand_tensor(rng, {5, 3});
        auto w = rand_tensor(rng, {5, 3}, 1.0, false);
        return fd_check(
            "add_const", {a},
            [&](Graph<double>* g) { return weighted_sum(g, add_const(g, a, -0.81), w); }, rng,
            probes, eps);
    });
    run("exp", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 4});
        auto w = rand_tensor(rng, {4, 4}, 1.0, false);
        return fd_check(
            "exp", {a}, [&](Graph<double>* g) { return weighted_sum(g, exp(g, a), w); }, rng,
            probes, eps);
    });
    run("swish", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 4}, 3.0);
        auto w = rand_tensor(rng, {4, 4}, 1.0, false);
        return fd_check(
            "swish", {a}, [&](Graph<double>* g) { return weighted_sum(g, swish(g, a), w); },
            rng, probes, eps);
    });
    run("mean_axis", [&](Rng& rng) {
        auto a = rand_tensor(rng, {5, 7});
        auto w0 = rand_tensor(rng, {7}, 1.0, false), w1 = rand_tensor(rng, {5}, 1.0, false);
        return fd_check(
            "mean_axis", {a},
            [&](Graph<double>* g) {
                return add(g, weighted_sum(g, mean_axis(g, a, 0), w0),
                           weighted_sum(g, mean_axis(g, a, 1), w1));
            },
            rng, probes, eps);
    });
    run("sum_all", [&](Rng& rng) {
        auto a = rand_tensor(rng, {3, 5});
        return fd_check(
            "sum_all", {a}, [&](Graph<double>* g) { return sum_all(g, a); }, rng, probes, eps);
    });
    run("softmax_lastdim", [&](Rng& rng) {
        auto a = rand_tensor(rng, {6, 6}, 2.0);
        auto w = rand_tensor(rng, {6, 6}, 1.0, false);
        return fd_check(
            "softmax_lastdim", {a},
            [&](Graph<double>* g) { return weighted_sum(g, softmax_lastdim(g, a), w); }, rng,
            probes, eps);
    });
    run("softmax_lastdim_masked", [&](Rng& rng) {
        auto a = rand_tensor(rng, {6, 6}, 2.0);
        auto w = rand_tensor(rng, {6, 6}, 1.0, false);
        static const Mask mask = Mask::causal(6);
        return fd_check(
            "softmax_lastdim_masked", {a},
            [&](Graph<double>* g) { return weighted_sum(g, softmax_lastdim(g, a, &mask), w); },
            rng, probes, eps);
    });
    run("slice_cols", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 8});
        auto w = rand_tensor(rng, {4, 3}, 1.0, false);
        return fd_check(
            "slice_cols", {a},
            [&](Graph<double>* g) { return weighted_sum(g, slice_cols(g, a, 2, 3), w); }, rng,
            probes, eps);
    });
    run("concat_cols", [&](Rng& rng) {
        auto a = rand_tensor(rng, {4, 3}), b = rand_tensor(rng, {4, 5});
        auto w = rand_tensor(rng, {4, 8}, 1.0, false);
        return fd_check(
            "concat_cols", {a, b},
            [&](Graph<double>* g) { return weighted_sum(g, concat_cols(g, {a, b}), w); }, rng,
            probes, eps);
    });
    run("rmsnorm", [&](Rng& rng) {
        auto x = rand_tensor(rng, {5, 8}), gain = rand_tensor(rng, {8});
        auto w = rand_tensor(rng, {5, 8}, 1.0, false);
        return fd_check(
            "rmsnorm", {x, gain},
            [&](Graph<double>* g) { return weighted_sum(g, rmsnorm(g, x, gain), w); }, rng,
            probes, eps);
    });
    run("rope", [&](Rng& rng) {
        auto x = rand_tensor(rng, {6, 8});
        auto w = rand_tensor(rng, {6, 8}, 1.0, false);
        return fd_check(
            "rope", {x}, [&](Graph<double>* g) { return weighted_sum(g, rope(g, x, 3), w); },
            rng, probes, eps);
    });
    run("embed", [&](Rng& rng) {
        auto table = rand_tensor(rng, {10, 6});
        std::vector<int> ids{3, 1, 4, 1, 5, 9, 2, 6};
        auto w = rand_tensor(rng, {8, 6}, 1.0, false);
        return fd_check(
            "embed", {table},
            [&](Graph<double>* g) { return weighted_sum(g, embed(g, table, ids), w); }, rng,
            probes, eps);
    });
    run("cross_entropy", [&](Rng& rng) {
        auto logits = rand_tensor(rng, {7, 11}, 2.0);
        std::vector<int> targets{1, 0, 10, 4, 4, 7, 2};
        std::vector<double> weights{1, 0.5, 0, 1, 2, 1, 0.25};
        return fd_check(
            "cross_entropy", {logits},
            [&](Graph<double>* g) { return cross_entropy(g, logits, targets, &weights); }, rng,
            probes, eps);
    });
    run("global_importance_full", [&](Rng& rng) {
        auto a = rand_tensor(rng, {6, 6});
        auto w = rand_tensor(rng, {6, 6}, 1.0, false);
        return fd_check(
            "global_importance_full", {a},
            [&](Graph<double>* g) {
                return weighted_sum(g, global_importance(g, a, GMode::paper_literal), w);
            },
            rng, probes, eps);
    });
    run("global_importance_prefix", [&](Rng& rng) {
        auto a = rand_tensor(rng, {6, 6});
        auto w = rand_tensor(rng, {6, 6}, 1.0, false);
        return fd_check(
            "global_importance_prefix", {a},
            [&](Graph<double>* g) {
                return weighted_sum(g, global_importance(g, a, GMode::causal_prefix), w);
            },
            rng, probes, eps);
    });
    run("compute_lambda", [&](Rng& rng) {
        auto q1 = rand_tensor(rng, {5}, 0.5), k1 = rand_tensor(rng, {5}, 0.5);
        auto q2 = rand_tensor(rng, {5}, 0.5), k2 = rand_tensor(rng, {5}, 0.5);
        return fd_check(
            "compute_lambda", {q1, k1, q2, k2},
            [&](Graph<double>* g) { return compute_lambda(g, q1, k1, q2, k2, 0.3); }, rng,
            probes, eps);
    });
    run("dint_head", [&](Rng& rng) {
        size_t n = 7, d = 4;
        auto q1 = rand_tensor(rng, {n, d}), k1 = rand_tensor(rng, {n, d});
        auto q2 = rand_tensor(rng, {n, d}), k2 = rand_tensor(rng, {n, d});
        auto v = rand_tensor(rng, {n, 2 * d});
        auto lq1 = rand_tensor(rng, {d}, 0.3), lk1 = rand_tensor(rng, {d}, 0.3);
        auto lq2 = rand_tensor(rng, {d}, 0.3), lk2 = rand_tensor(rng, {d}, 0.3);
        auto w = rand_tensor(rng, {n, 2 * d}, 1.0, false);
        static const Mask mask = Mask::causal(7);
        return fd_check(
            "dint_head", {q1, k1, q2, k2, v, lq1, lk1, lq2, lk2},
            [&](Graph<double>* g) {
                auto lambda = compute_lambda(g, lq1, lk1, lq2, lk2, 0.4);
                return weighted_sum(
                    g,
                    dint_head(g, q1, k1, q2, k2, v, lambda, lambda, GMode::causal_prefix, &mask),
                    w);
            },
            rng, probes, eps);
    });
    run("diff_head", [&](Rng& rng) {
        size_t n = 7, d = 4;
        auto q1 = rand_tensor(rng, {n, d}), k1 = rand_tensor(rng, {n, d});
        auto q2 = rand_tensor(rng, {n, d}), k2 = rand_tensor(rng, {n, d});
        auto v = rand_tensor(rng, {n, 2 * d});
        auto lam = rand_tensor(rng, {1}, 0.5);
        auto w = rand_tensor(rng, {n, 2 * d}, 1.0, false);
        return fd_check(
            "diff_head", {q1, k1, q2, k2, v, lam},
            [&](Graph<double>* g) {
                return weighted_sum(g, diff_head(g, q1, k1, q2, k2, v, lam, nullptr), w);
            },
            rng, probes, eps);
    });
    run("vanilla_head", [&](Rng& rng) {
        size_t n = 7, d = 8;
        auto q = rand_tensor(rng, {n, d}), k = rand_tensor(rng, {n, d});
        auto v = rand_tensor(rng, {n, d});
        auto w = rand_tensor(rng, {n, d}, 1.0, false);
        static const Mask mask = Mask::causal(7);
        return fd_check(
            "vanilla_head", {q, k, v},
            [&](Graph<double>* g) { return weighted_sum(g, vanilla_head(g, q, k, v, &mask), w); },
            rng, probes, eps);
    });
    return out;
}

// End-to-end check: full model loss against FD over randomly probed
// parameters of every tensor in the registry.
inline GradCheckEntry model_check(const ModelConfig& cfg, uint64_t seed, size_t probes = 50,
                                  double eps = 1e-5) {
    Model<double> m = Model<double>::init(cfg);
    Rng rng = Rng(seed).fork(fnv1a("model_check"));
    std::vector<int> tokens(12);
    for (auto& t : tokens) t = static_cast<int>(rng.below(cfg.vocab_size));
    std::vector<int> input(tokens.begin(), tokens.end() - 1);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    std::vector<Tensor<double>> params;
    for (auto& [name, t] : m.params()) params.push_back(t);
    return fd_check(
        "model", params,
        [&](Graph<double>* g) { return cross_entropy(g, m.forward(g, input), targets); }, rng,
        probes, eps);
}

}  // namespace dint
