#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dint/tensor.hpp"

namespace dint {

// RMS normalization over the last axis: y = x / rms(x) * gain, with
// rms(x) = sqrt(mean(x^2) + eps). gain has one entry per column.
template <typename T>
Tensor<T> rmsnorm(Graph<T>* g, Tensor<T> x, Tensor<T> gain, double eps = 1e-6) {
    size_t rows = x.rows(), cols = x.cols();
    if (gain.numel() != cols)
        throw std::invalid_argument("rmsnorm: gain " + shape_str(gain.shape()) +
                                    " does not match last axis of " + shape_str(x.shape()));
    Tensor<T> y = Tensor<T>::uninit(x.shape());
    std::vector<T> inv_rms(rows);
    {
        const auto& X = x.data();
        const auto& G = gain.data();
        auto& Y = y.data();
        for (size_t i = 0; i < rows; ++i) {
            const T* xr = X.data() + i * cols;
            T* yr = Y.data() + i * cols;
            T ss = 0;
            for (size_t j = 0; j < cols; ++j) ss += xr[j] * xr[j];
            T ir = T(1) / std::sqrt(ss / static_cast<T>(cols) + static_cast<T>(eps));
            inv_rms[i] = ir;
            for (size_t j = 0; j < cols; ++j) yr[j] = xr[j] * ir * G[j];
        }
    }
    if (g && (x.requires_grad() || gain.requires_grad())) {
        y.set_requires_grad(true);
        g->record("rmsnorm", [x, gain, y, inv_rms, rows, cols]() mutable {
            const auto& yg = y.grad();
            const auto& X = x.data();
            const auto& G = gain.data();
            bool need_x = x.requires_grad(), need_gain = gain.requires_grad();
            T* gx = need_x ? x.grad().data() : nullptr;
            T* gg = need_gain ? gain.grad().data() : nullptr;
            for (size_t i = 0; i < rows; ++i) {
                // u = x / rms; du = dy * gain; dx = du/rms - x * (sum du.x) / (cols * rms^3)
                const T* dyr = yg.data() + i * cols;
                const T* xr = X.data() + i * cols;
                T ir = inv_rms[i];
                T s = 0;
                for (size_t j = 0; j < cols; ++j) s += dyr[j] * G[j] * xr[j];
                T k = s * ir * ir * ir / static_cast<T>(cols);
                if (need_x)
                    for (size_t j = 0; j < cols; ++j)
                        gx[i * cols + j] += dyr[j] * G[j] * ir - xr[j] * k;
                if (need_gain)
                    for (size_t j = 0; j < cols; ++j) gg[j] += dyr[j] * xr[j] * ir;
            }
        });
    }
    return y;
}

// swish(x) = x * sigmoid(x)
template <typename T>
Tensor<T> swish(Graph<T>* g, Tensor<T> x) {
    size_t n = x.numel();
    Tensor<T> y = Tensor<T>::uninit(x.shape());
    {
        const auto& X = x.data();
        auto& Y = y.data();
        for (size_t i = 0; i < n; ++i) {
            T s = T(1) / (T(1) + std::exp(-X[i]));
            Y[i] = X[i] * s;
        }
    }
    if (g && x.requires_grad()) {
        y.set_requires_grad(true);
        g->record("swish", [x, y, n]() mutable {
            const auto& yg = y.grad();
            const auto& X = x.data();
            T* gx = x.grad().data();
            for (size_t i = 0; i < n; ++i) {
                T s = T(1) / (T(1) + std::exp(-X[i]));
                gx[i] += yg[i] * (s + X[i] * s * (T(1) - s));
            }
        });
    }
    return y;
}

// Rotary position embedding. Rotates adjacent column pairs (2j, 2j+1) of
// each row t by angle t * base^(-2j/cols). pos0 offsets the row-to-position
// mapping. The cos/sin tables are built once and shared with the backward
// pass, which applies the inverse rotation.
template <typename T>
Tensor<T> rope(Graph<T>* g, Tensor<T> x, size_t pos0 = 0, double base = 10000.0) {
    if (x.rank() != 2 || x.extent(1) % 2 != 0)
        throw std::invalid_argument("rope: need 2-d tensor with even columns, got " +
                                    shape_str(x.shape()));
    size_t rows = x.extent(0), cols = x.extent(1), pairs = cols / 2;
    std::vector<T> cos_t(rows * pairs), sin_t(rows * pairs);
    {
        std::vector<double> freq(pairs);
        for (size_t p = 0; p < pairs; ++p)
            freq[p] = std::pow(base, -static_cast<double>(2 * p) / static_cast<double>(cols));
        for (size_t t = 0; t < rows; ++t) {
            double pos = static_cast<double>(pos0 + t);
            for (size_t p = 0; p < pairs; ++p) {
                double theta = pos * freq[p];
                cos_t[t * pairs + p] = static_cast<T>(std::cos(theta));
                sin_t[t * pairs + p] = static_cast<T>(std::sin(theta));
            }
        }
    }
    auto rotate = [rows, pairs, cos_t, sin_t](const T* in, T* out, T sign) {
        for (size_t t = 0; t < rows; ++t) {
            const T* cr = cos_t.data() + t * pairs;
            const T* sr = sin_t.data() + t * pairs;
            for (size_t p = 0; p < pairs; ++p) {
                T c = cr[p], s = sign * sr[p];
                T a = in[t * 2 * pairs + 2 * p], b = in[t * 2 * pairs + 2 * p + 1];
                out[t * 2 * pairs + 2 * p] = a * c - b * s;
                out[t * 2 * pairs + 2 * p + 1] = a * s + b * c;
            }
        }
    };
    Tensor<T> y = Tensor<T>::uninit(x.shape());
    rotate(x.data().data(), y.data().data(), T(1));
    if (g && x.requires_grad()) {
        y.set_requires_grad(true);
        g->record("rope", [x, y, rotate]() mutable {
            // Rotation is orthonormal; the adjoint rotates by the negative angle.
            typename Tensor<T>::Buf dx(x.numel());
            rotate(y.grad().data(), dx.data(), T(-1));
            T* gx = x.grad().data();
            for (size_t i = 0; i < x.numel(); ++i) gx[i] += dx[i];
        });
    }
    return y;
}

// Row gather from an embedding table: out[i, :] = table[ids[i], :].
template <typename T>
Tensor<T> embed(Graph<T>* g, Tensor<T> table, std::vector<int> ids) {
    if (table.rank() != 2)
        throw std::invalid_argument("embed: table must be 2-d, got " + shape_str(table.shape()));
    size_t v = table.extent(0), d = table.extent(1), n = ids.size();
    for (size_t i = 0; i < n; ++i)
        if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= v)
            throw std::out_of_range("embed: id " + std::to_string(ids[i]) + " at position " +
                                    std::to_string(i) + " outside vocab of " + std::to_string(v));
    Tensor<T> out = Tensor<T>::uninit({n, d});
    {
        const auto& Tb = table.data();
        auto& O = out.data();
        for (size_t i = 0; i < n; ++i)
            std::copy_n(Tb.data() + static_cast<size_t>(ids[i]) * d, d, O.data() + i * d);
    }
    if (g && table.requires_grad()) {
        out.set_requires_grad(true);
        g->record("embed", [table, out, ids, d, n]() mutable {
            const auto& og = out.grad();
            T* gt = table.grad().data();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j)
                    gt[static_cast<size_t>(ids[i]) * d + j] += og[i * d + j];
        });
    }
    return out;
}

// Mean cross-entropy of logits [n, v] against integer targets, computed via
// a fused log-sum-exp. Optional per-position weights reweight the mean (a
// weight of zero drops the position). per_token, when given, receives the
// unweighted per-position negative log-likelihoods for later slicing.
template <typename T>
Tensor<T> cross_entropy(Graph<T>* g, Tensor<T> logits, const std::vector<int>& targets,
                        const std::vector<double>* weights = nullptr,
                        std::vector<double>* per_token = nullptr) {
    if (logits.rank() != 2 || logits.extent(0) != targets.size())
        throw std::invalid_argument("cross_entropy: logits " + shape_str(logits.shape()) +
                                    " vs " + std::to_string(targets.size()) + " targets");
    if (weights && weights->size() != targets.size())
        throw std::invalid_argument("cross_entropy: " + std::to_string(weights->size()) +
                                    " weights vs " + std::to_string(targets.size()) + " targets");
    size_t n = logits.extent(0), v = logits.extent(1);
    double wsum = 0;
    for (size_t i = 0; i < n; ++i) wsum += weights ? (*weights)[i] : 1.0;
    if (wsum <= 0) throw std::invalid_argument("cross_entropy: weights sum to zero");
    if (per_token) per_token->assign(n, 0.0);

    std::vector<T> lse(n);
    double total = 0;
    const auto& L = logits.data();
    for (size_t i = 0; i < n; ++i) {
        int t = targets[i];
        if (t < 0 || static_cast<size_t>(t) >= v)
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                                    " at position " + std::to_string(i) + " outside vocab of " +
                                    std::to_string(v));
        const T* lr = L.data() + i * v;
        T mx = lr[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, lr[j]);
        T acc = 0;
        for (size_t j = 0; j < v; ++j) acc += std::exp(lr[j] - mx);
        lse[i] = mx + std::log(acc);
        double nll = static_cast<double>(lse[i] - lr[static_cast<size_t>(t)]);
        if (per_token) (*per_token)[i] = nll;
        total += (weights ? (*weights)[i] : 1.0) * nll;
    }
    Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / wsum));
    check_finite(loss, "cross_entropy");
    if (g && logits.requires_grad()) {
        loss.set_requires_grad(true);
        std::vector<double> w(n);
        for (size_t i = 0; i < n; ++i) w[i] = (weights ? (*weights)[i] : 1.0) / wsum;
        std::vector<int> tcopy = targets;
        g->record("cross_entropy", [logits, loss, tcopy, lse, w, n, v]() mutable {
            T dl = loss.grad()[0];
            const auto& L = logits.data();
            T* gl = logits.grad().data();
            for (size_t i = 0; i < n; ++i) {
                if (w[i] == 0.0) continue;
                T wi = static_cast<T>(w[i]) * dl;
                const T* lr = L.data() + i * v;
                T* glr = gl + i * v;
                T ls = lse[i];
                for (size_t j = 0; j < v; ++j) glr[j] += wi * std::exp(lr[j] - ls);
                glr[static_cast<size_t>(tcopy[i])] -= wi;
            }
        });
    }
    return loss;
}

// How the global importance of each key column is aggregated from the first
// softmax map.
enum class GMode {
    paper_literal,  // full column mean over all rows, tiled to every row
    causal_prefix,  // row i sees the column mean over rows 0..i only
};

// Expands attention map a [n, n] to a same-shaped importance map. In
// paper_literal mode every output row is the column mean of a. In
// causal_prefix mode row i is the column mean over rows 0..i, so position i
// never aggregates information from rows after it.
template <typename T>
Tensor<T> global_importance(Graph<T>* g, Tensor<T> a, GMode mode) {
    if (a.rank() != 2 || a.extent(0) != a.extent(1))
        throw std::invalid_argument("global_importance: need square map, got " +
                                    shape_str(a.shape()));
    size_t n = a.extent(0);
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    {
        const auto& A = a.data();
        auto& O = out.data();
        if (mode == GMode::paper_literal) {
            std::vector<T> col(n, T(0));
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < n; ++j) col[j] += A[i * n + j];
            for (size_t j = 0; j < n; ++j) col[j] /= static_cast<T>(n);
            for (size_t i = 0; i < n; ++i)
                std::copy_n(col.data(), n, O.data() + i * n);
        } else {
            // Running column sums; row i divides by its prefix length i+1.
            std::vector<T> run(n, T(0));
            for (size_t i = 0; i < n; ++i) {
                T inv = T(1) / static_cast<T>(i + 1);
                for (size_t j = 0; j < n; ++j) {
                    run[j] += A[i * n + j];
                    O[i * n + j] = run[j] * inv;
                }
            }
        }
    }
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("global_importance", [a, out, n, mode]() mutable {
            const auto& og = out.grad();
            T* ga = a.grad().data();
            if (mode == GMode::paper_literal) {
                std::vector<T> s(n, T(0));
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < n; ++j) s[j] += og[i * n + j];
                for (size_t j = 0; j < n; ++j) s[j] /= static_cast<T>(n);
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < n; ++j) ga[i * n + j] += s[j];
            } else {
                // a[m, j] feeds out[i, j] for all i >= m with weight 1/(i+1):
                // accumulate the suffix sums of dout[i, j] / (i + 1).
                std::vector<T> suffix(n, T(0));
                for (size_t i = n; i-- > 0;) {
                    T inv = T(1) / static_cast<T>(i + 1);
                    for (size_t j = 0; j < n; ++j) {
                        suffix[j] += og[i * n + j] * inv;
                        ga[i * n + j] += suffix[j];
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace dint
