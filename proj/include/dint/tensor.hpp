#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dint/errors.hpp"

#ifndef DINT_NO_BLAS
#include <cblas.h>
#endif

namespace dint {

namespace detail {

// Allocator whose construct() default-initializes, so vector growth of
// trivial element types skips the zeroing pass. Used for buffers that are
// fully overwritten immediately after allocation.
template <typename T>
struct uninit_alloc : std::allocator<T> {
    template <typename U>
    struct rebind {
        using other = uninit_alloc<U>;
    };
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor: dense row-major n-d array with an optional gradient buffer.
// Copying a Tensor copies a handle; storage is shared. Tensors without a
// gradient buffer are immutable by convention once built, so they are safe
// to share across concurrent readers.
// ---------------------------------------------------------------------------
template <typename T>
class Tensor {
  public:
    using Buf = std::vector<T, detail::uninit_alloc<T>>;

  private:
    struct Storage {
        std::vector<size_t> shape;
        Buf data;
        Buf grad;  // empty until first use
        bool requires_grad = false;
    };

  public:
    Tensor() : s_(std::make_shared<Storage>()) {}

    static Tensor zeros(std::vector<size_t> shape) {
        Tensor t;
        t.s_->shape = std::move(shape);
        t.s_->data.assign(t.count(t.s_->shape), T(0));
        return t;
    }

    // Allocates without zeroing; every element must be written before read.
    static Tensor uninit(std::vector<size_t> shape) {
        Tensor t;
        t.s_->shape = std::move(shape);
        t.s_->data.resize(t.count(t.s_->shape));
        return t;
    }

    static Tensor full(std::vector<size_t> shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.s_->data.begin(), t.s_->data.end(), v);
        return t;
    }

    static Tensor from(std::vector<size_t> shape, std::vector<T> values) {
        Tensor t;
        if (count(shape) != values.size())
            throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                        " values do not fill shape " + shape_str(shape));
        t.s_->shape = std::move(shape);
        t.s_->data.assign(values.begin(), values.end());
        return t;
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    const std::vector<size_t>& shape() const { return s_->shape; }
    size_t rank() const { return s_->shape.size(); }
    size_t extent(size_t i) const { return s_->shape[i]; }
    size_t numel() const { return s_->data.size(); }

    Buf& data() { return s_->data; }
    const Buf& data() const { return s_->data; }

    T& at(size_t i) { return s_->data[i]; }
    T at(size_t i) const { return s_->data[i]; }
    T& at(size_t i, size_t j) { return s_->data[i * last_extent() + j]; }
    T at(size_t i, size_t j) const { return s_->data[i * last_extent() + j]; }

    bool requires_grad() const { return s_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        s_->requires_grad = b;
        return *this;
    }

    Buf& grad() {
        ensure_grad();
        return s_->grad;
    }
    const Buf& grad_view() const { return s_->grad; }
    bool has_grad() const { return !s_->grad.empty(); }
    void ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    }
    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

    // Rows x cols view of a 1-d or 2-d tensor (1-d counts as a single row).
    size_t rows() const { return rank() <= 1 ? 1 : numel() / last_extent(); }
    size_t cols() const { return last_extent(); }

  private:
    size_t last_extent() const { return s_->shape.empty() ? 1 : s_->shape.back(); }
    static size_t count(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }
    std::shared_ptr<Storage> s_;
};

// ---------------------------------------------------------------------------
// Graph: tape of recorded operations. Ops execute eagerly; when a graph is
// supplied and an input requires grad, a backward closure is appended. A
// backward() pass walks the tape once, in reverse recording order, which is
// a valid topological order by construction.
// ---------------------------------------------------------------------------
template <typename T>
class Graph {
  public:
    void record(const char* op, std::function<void()> backward) {
        nodes_.push_back({op, std::move(backward)});
    }

    size_t size() const { return nodes_.size(); }

    void backward(Tensor<T> loss) {
        if (loss.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.shape()));
        loss.grad()[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

    void clear() { nodes_.clear(); }

  private:
    struct Node {
        const char* op;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

// Testing hook: when set to an op name, that op's backward pass is corrupted
// by a small multiplicative factor so gradient checkers can prove they fail.
namespace testing {
inline std::string& backward_fault_op() {
    static std::string op;
    return op;
}
inline bool faulted(const char* op) { return backward_fault_op() == op; }
}  // namespace testing

// ---------------------------------------------------------------------------
// Finite checks. Ops whose outputs can compound into NaN/Inf (matmuls, exp,
// softmax, losses) validate them so a bad value aborts at the op that
// produced it. Bounded elementwise ops skip the scan; anything they pass
// through is caught at the next checkpointed op downstream.
// ---------------------------------------------------------------------------
template <typename T>
inline void check_finite(const Tensor<T>& t, const char* op) {
    const auto& d = t.data();
    for (size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(static_cast<double>(d[i])))
            throw NumericError(std::string(op) + ": non-finite value " +
                               std::to_string(static_cast<double>(d[i])) + " at flat index " +
                               std::to_string(i) + ", shape " + shape_str(t.shape()));
    }
}

// ---------------------------------------------------------------------------
// GEMM backend. The public matmul contract (and its oracle tests) stay the
// same whether this dispatches to CBLAS or the fallback loops.
// ---------------------------------------------------------------------------
namespace detail {

#ifndef DINT_NO_BLAS
inline void blas_single_thread() {
    static const bool done = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)done;
}

inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, float alpha, const float* a,
                 size_t lda, const float* b, size_t ldb, float beta, float* c, size_t ldc) {
    blas_single_thread();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, double alpha, const double* a,
                 size_t lda, const double* b, size_t ldb, double beta, double* c, size_t ldc) {
    blas_single_thread();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}
#else
template <typename T>
inline void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, T alpha, const T* a, size_t lda,
                 const T* b, size_t ldb, T beta, T* c, size_t ldc) {
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (size_t p = 0; p < k; ++p) {
                T av = ta ? a[p * lda + i] : a[i * lda + p];
                T bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c[i * ldc + j] = beta == T(0) ? alpha * acc : alpha * acc + beta * c[i * ldc + j];
        }
    }
}
#endif

// True when b's shape, after stripping leading 1 extents, is a suffix of a's
// shape. Only this leading-singleton form of broadcasting is supported.
inline bool broadcasts_to(const std::vector<size_t>& b, const std::vector<size_t>& a) {
    size_t skip = 0;
    while (skip < b.size() && b[skip] == 1) ++skip;
    size_t nb = b.size() - skip;
    if (nb > a.size()) return false;
    for (size_t i = 0; i < nb; ++i)
        if (b[skip + i] != a[a.size() - nb + i]) return false;
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> c = Tensor<T>::uninit({m, n});
    detail::gemm(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                 c.data().data(), n);
    if (g && (a.requires_grad() || b.requires_grad())) {
        c.set_requires_grad(true);
        g->record("matmul", [a, b, c, m, k, n]() mutable {
            T f = testing::faulted("matmul") ? T(1.01) : T(1);
            if (a.requires_grad())  // dA += dC . B^T
                detail::gemm(false, true, m, k, n, f, c.grad().data(), n, b.data().data(), n,
                             T(1), a.grad().data(), k);
            if (b.requires_grad())  // dB += A^T . dC
                detail::gemm(true, false, k, n, m, f, a.data().data(), k, c.grad().data(), n,
                             T(1), b.grad().data(), n);
        });
    }
    return c;
}

// a . b^T without materializing the transpose; used for attention logits and
// the tied vocabulary head.
template <typename T>
Tensor<T> matmul_nt(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1))
        throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
    size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
    Tensor<T> c = Tensor<T>::uninit({m, n});
    detail::gemm(false, true, m, n, k, T(1), a.data().data(), k, b.data().data(), k, T(0),
                 c.data().data(), n);
    if (g && (a.requires_grad() || b.requires_grad())) {
        c.set_requires_grad(true);
        g->record("matmul_nt", [a, b, c, m, k, n]() mutable {
            if (a.requires_grad())  // dA += dC . B
                detail::gemm(false, false, m, k, n, T(1), c.grad().data(), n, b.data().data(), k,
                             T(1), a.grad().data(), k);
            if (b.requires_grad())  // dB += dC^T . A
                detail::gemm(true, false, n, k, m, T(1), c.grad().data(), n, a.data().data(), k,
                             T(1), b.grad().data(), k);
        });
    }
    return c;
}

namespace detail {

// Shared core of add/sub/mul with either-side leading-singleton broadcast.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> binary_op(Graph<T>* g, const char* name, Tensor<T> a, Tensor<T> b, Fwd fwd,
                    Bwd bwd) {
    const Tensor<T>*big = &a, *small = &b;
    bool b_is_small = true;
    if (a.shape() != b.shape()) {
        if (broadcasts_to(b.shape(), a.shape())) {
            // b is the broadcast operand
        } else if (broadcasts_to(a.shape(), b.shape())) {
            big = &b;
            small = &a;
            b_is_small = false;
        } else {
            throw std::invalid_argument(std::string(name) + ": incompatible shapes " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
        }
    }
    size_t n = big->numel(), bn = small->numel();
    Tensor<T> out = Tensor<T>::uninit(big->shape());
    {
        const auto& A = a.data();
        const auto& B = b.data();
        auto& O = out.data();
        if (a.shape() == b.shape()) {
            for (size_t i = 0; i < n; ++i) O[i] = fwd(A[i], B[i]);
        } else if (b_is_small) {
            if (bn == 1) {
                T b0 = B[0];
                for (size_t i = 0; i < n; ++i) O[i] = fwd(A[i], b0);
            } else {
                for (size_t i = 0; i < n; ++i) O[i] = fwd(A[i], B[i % bn]);
            }
        } else {
            if (bn == 1) {
                T a0 = A[0];
                for (size_t i = 0; i < n; ++i) O[i] = fwd(a0, B[i]);
            } else {
                for (size_t i = 0; i < n; ++i) O[i] = fwd(A[i % bn], B[i]);
            }
        }
    }
    if (g && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        g->record(name, [a, b, out, n, bn, bwd]() mutable {
            const auto& og = out.grad();
            const auto& A = a.data();
            const auto& B = b.data();
            bool need_a = a.requires_grad(), need_b = b.requires_grad();
            T* ga = need_a ? a.grad().data() : nullptr;
            T* gb = need_b ? b.grad().data() : nullptr;
            size_t an = a.numel(), bnn = b.numel();
            if (an == n && bnn == n) {
                for (size_t i = 0; i < n; ++i) {
                    auto [da, db] = bwd(A[i], B[i]);
                    if (need_a) ga[i] += da * og[i];
                    if (need_b) gb[i] += db * og[i];
                }
            } else if (bnn == 1) {
                // b broadcast from a single element; its grad is a reduction.
                T b0 = B[0], acc = 0;
                for (size_t i = 0; i < n; ++i) {
                    auto [da, db] = bwd(A[i], b0);
                    if (need_a) ga[i] += da * og[i];
                    acc += db * og[i];
                }
                if (need_b) gb[0] += acc;
            } else if (an == 1) {
                T a0 = A[0], acc = 0;
                for (size_t i = 0; i < n; ++i) {
                    auto [da, db] = bwd(a0, B[i]);
                    acc += da * og[i];
                    if (need_b) gb[i] += db * og[i];
                }
                if (need_a) ga[0] += acc;
            } else {
                for (size_t i = 0; i < n; ++i) {
                    size_t ia = (an == n) ? i : i % bn;
                    size_t ib = (bnn == n) ? i : i % bn;
                    auto [da, db] = bwd(A[ia], B[ib]);
                    if (need_a) ga[ia] += da * og[i];
                    if (need_b) gb[ib] += db * og[i];
                }
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        g, "add", a, b, [](T x, T y) { return x + y; },
        [](T, T) { return std::pair<T, T>(T(1), T(1)); });
}

template <typename T>
Tensor<T> sub(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        g, "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T) { return std::pair<T, T>(T(1), T(-1)); });
}

template <typename T>
Tensor<T> mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        g, "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y) { return std::pair<T, T>(y, x); });
}

// Multiply by a compile-time constant (not a learnable scalar).
template <typename T>
Tensor<T> scale(Graph<T>* g, Tensor<T> a, double c) {
    size_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const auto& A = a.data();
    auto& O = out.data();
    for (size_t i = 0; i < n; ++i) O[i] = A[i] * static_cast<T>(c);
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("scale", [a, out, c, n]() mutable {
            const auto& og = out.grad();
            T* ga = a.grad().data();
            for (size_t i = 0; i < n; ++i) ga[i] += static_cast<T>(c) * og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_const(Graph<T>* g, Tensor<T> a, double c) {
    size_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const auto& A = a.data();
    auto& O = out.data();
    for (size_t i = 0; i < n; ++i) O[i] = A[i] + static_cast<T>(c);
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("add_const", [a, out, n]() mutable {
            const auto& og = out.grad();
            T* ga = a.grad().data();
            for (size_t i = 0; i < n; ++i) ga[i] += og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp(Graph<T>* g, Tensor<T> a) {
    size_t n = a.numel();
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const auto& A = a.data();
    auto& O = out.data();
    for (size_t i = 0; i < n; ++i) O[i] = std::exp(A[i]);
    check_finite(out, "exp");
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("exp", [a, out, n]() mutable {
            const auto& og = out.grad();
            const auto& O = out.data();
            T* ga = a.grad().data();
            for (size_t i = 0; i < n; ++i) ga[i] += O[i] * og[i];
        });
    }
    return out;
}

// Mean over one axis of a 2-d tensor; the result drops that axis.
template <typename T>
Tensor<T> mean_axis(Graph<T>* g, Tensor<T> a, int axis) {
    if (a.rank() != 2 || (axis != 0 && axis != 1))
        throw std::invalid_argument("mean_axis: need 2-d tensor and axis 0/1, got " +
                                    shape_str(a.shape()) + " axis " + std::to_string(axis));
    size_t r = a.extent(0), c = a.extent(1);
    size_t keep = axis == 0 ? c : r, red = axis == 0 ? r : c;
    Tensor<T> out = Tensor<T>::zeros({keep});
    {
        const auto& A = a.data();
        auto& O = out.data();
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) O[axis == 0 ? j : i] += A[i * c + j];
        for (size_t i = 0; i < keep; ++i) O[i] /= static_cast<T>(red);
    }
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("mean_axis", [a, out, r, c, axis, red]() mutable {
            const auto& og = out.grad();
            T* ga = a.grad().data();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j)
                    ga[i * c + j] += og[axis == 0 ? j : i] / static_cast<T>(red);
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Graph<T>* g, Tensor<T> a) {
    size_t n = a.numel();
    T acc = 0;
    const auto& A = a.data();
    for (size_t i = 0; i < n; ++i) acc += A[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (g && a.requires_grad()) {
        out.set_requires_grad(true);
        g->record("sum_all", [a, out, n]() mutable {
            T og = out.grad()[0];
            T* ga = a.grad().data();
            for (size_t i = 0; i < n; ++i) ga[i] += og;
        });
    }
    return out;
}

// Boolean keep-mask for masked softmax. Entries with keep=0 get probability
// exactly zero and contribute nothing to the row normalizer. When every row
// keeps exactly a prefix of columns, prefix[i] holds that row's kept count
// and softmax takes a branch-free path; prefix stays empty for other shapes.
struct Mask {
    size_t rows = 0, cols = 0;
    std::vector<uint8_t> keep;
    std::vector<size_t> prefix;

    static Mask causal(size_t n) {
        Mask m{n, n, std::vector<uint8_t>(n * n, 0), std::vector<size_t>(n)};
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j <= i; ++j) m.keep[i * n + j] = 1;
            m.prefix[i] = i + 1;
        }
        return m;
    }
};

template <typename T>
Tensor<T> softmax_lastdim(Graph<T>* g, Tensor<T> x, const Mask* mask = nullptr) {
    if (x.rank() < 1)
        throw std::invalid_argument("softmax_lastdim: need rank >= 1, got " +
                                    shape_str(x.shape()));
    size_t rows = x.rows(), cols = x.cols();
    if (mask && (mask->rows != rows || mask->cols != cols))
        throw std::invalid_argument("softmax_lastdim: mask " +
                                    shape_str({mask->rows, mask->cols}) +
                                    " does not match input " + shape_str(x.shape()));
    Tensor<T> y = Tensor<T>::uninit(x.shape());
    {
        const auto& X = x.data();
        auto& Y = y.data();
        bool prefix = mask && !mask->prefix.empty();
        for (size_t i = 0; i < rows; ++i) {
            const T* xr = X.data() + i * cols;
            T* yr = Y.data() + i * cols;
            if (prefix) {
                size_t p = mask->prefix[i];
                if (p == 0)
                    throw std::domain_error("softmax_lastdim: fully masked row " +
                                            std::to_string(i));
                T mx = xr[0];
                for (size_t j = 1; j < p; ++j) mx = std::max(mx, xr[j]);
                T denom = 0;
                for (size_t j = 0; j < p; ++j) {
                    T e = std::exp(xr[j] - mx);
                    yr[j] = e;
                    denom += e;
                }
                for (size_t j = 0; j < p; ++j) yr[j] /= denom;
                std::fill(yr + p, yr + cols, T(0));
                continue;
            }
            const uint8_t* keep = mask ? mask->keep.data() + i * cols : nullptr;
            T mx = -std::numeric_limits<T>::infinity();
            size_t alive = 0;
            for (size_t j = 0; j < cols; ++j) {
                if (keep && !keep[j]) continue;
                mx = std::max(mx, xr[j]);
                ++alive;
            }
            if (mask && alive == 0)
                throw std::domain_error("softmax_lastdim: fully masked row " +
                                        std::to_string(i));
            T denom = 0;
            for (size_t j = 0; j < cols; ++j) {
                if (keep && !keep[j]) continue;
                T e = std::exp(xr[j] - mx);
                yr[j] = e;
                denom += e;
            }
            for (size_t j = 0; j < cols; ++j) {
                if (keep && !keep[j])
                    yr[j] = T(0);
                else
                    yr[j] /= denom;
            }
        }
    }
    check_finite(y, "softmax_lastdim");
    if (g && x.requires_grad()) {
        y.set_requires_grad(true);
        g->record("softmax_lastdim", [x, y, rows, cols]() mutable {
            // dx = y * (dy - sum_j dy_j y_j); masked entries have y == 0.
            const auto& yg = y.grad();
            const auto& Y = y.data();
            T* gx = x.grad().data();
            for (size_t i = 0; i < rows; ++i) {
                const T* dyr = yg.data() + i * cols;
                const T* yr = Y.data() + i * cols;
                T* gxr = gx + i * cols;
                T dot = 0;
                for (size_t j = 0; j < cols; ++j) dot += dyr[j] * yr[j];
                for (size_t j = 0; j < cols; ++j) gxr[j] += yr[j] * (dyr[j] - dot);
            }
        });
    }
    return y;
}

// Columns [c0, c0+w) of a 2-d tensor.
template <typename T>
Tensor<T> slice_cols(Graph<T>* g, Tensor<T> x, size_t c0, size_t w) {
    if (x.rank() != 2 || c0 + w > x.extent(1))
        throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + w) + ") out of range for " +
                                    shape_str(x.shape()));
    size_t r = x.extent(0), c = x.extent(1);
    Tensor<T> out = Tensor<T>::uninit({r, w});
    {
        const auto& X = x.data();
        auto& O = out.data();
        for (size_t i = 0; i < r; ++i)
            std::copy_n(X.data() + i * c + c0, w, O.data() + i * w);
    }
    if (g && x.requires_grad()) {
        out.set_requires_grad(true);
        g->record("slice_cols", [x, out, r, c, c0, w]() mutable {
            const auto& og = out.grad();
            T* gx = x.grad().data();
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < w; ++j) gx[i * c + c0 + j] += og[i * w + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(Graph<T>* g, std::vector<Tensor<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    size_t r = parts[0].extent(0), total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.extent(0) != r)
            throw std::invalid_argument("concat_cols: row mismatch, " + shape_str(p.shape()) +
                                        " vs " + std::to_string(r) + " rows");
        total += p.extent(1);
    }
    Tensor<T> out = Tensor<T>::uninit({r, total});
    size_t off = 0;
    for (const auto& p : parts) {
        size_t w = p.extent(1);
        const auto& P = p.data();
        auto& O = out.data();
        for (size_t i = 0; i < r; ++i)
            std::copy_n(P.data() + i * w, w, O.data() + i * total + off);
        off += w;
    }
    bool any_grad = false;
    for (const auto& p : parts) any_grad |= p.requires_grad();
    if (g && any_grad) {
        out.set_requires_grad(true);
        g->record("concat_cols", [parts, out, r, total]() mutable {
            const auto& og = out.grad();
            size_t off = 0;
            for (auto& p : parts) {
                size_t w = p.extent(1);
                if (p.requires_grad()) {
                    T* gp = p.grad().data();
                    for (size_t i = 0; i < r; ++i)
                        for (size_t j = 0; j < w; ++j)
                            gp[i * w + j] += og[i * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

}  // namespace dint
