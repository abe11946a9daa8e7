#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "geoscene/kernels.hpp"
#include "geoscene/tensor.hpp"

// Differentiable tensor ops. Each op computes its forward result through the
// parallel kernels and, when the tape is recording and an input requires
// gradients, registers the matching backward closure. Gradient buffers
// accumulate; callers zero them between steps.

namespace geoscene {

namespace detail {

template <typename T>
bool track(TapeT<T>& tape, std::initializer_list<const TensorPtrT<T>*> ins) {
    if (!tape.recording()) return false;
    for (const auto* p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

template <typename T>
void require_2d(const TensorPtrT<T>& a, const char* who) {
    if (a->ndim() != 2) throw dim_error(std::string(who) + ": expected 2-D tensor");
}

template <typename T>
void require_same_shape(const TensorPtrT<T>& a, const TensorPtrT<T>& b, const char* who) {
    if (a->shape != b->shape)
        throw dim_error(std::string(who) + ": shape mismatch");
}

} // namespace detail

/// C = A[m x k] * B[k x n]
template <typename T>
TensorPtrT<T> matmul(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k)
        throw dim_error("matmul: inner dimensions disagree (" + std::to_string(k) +
                        " vs " + std::to_string(b->shape[0]) + ")");
    auto out = make_tensor<T>({m, n});
    kernels::matmul(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, b, out, m, k, n] {
            if (a->requires_grad) { // dA += dC * B^T
                a->ensure_grad();
                kernels::matmul_nt_acc(out->grad.data(), b->data.data(),
                                       a->grad.data(), m, n, k);
            }
            if (b->requires_grad) { // dB += A^T * dC
                b->ensure_grad();
                kernels::matmul_tn_acc(a->data.data(), out->grad.data(),
                                       b->grad.data(), m, k, n);
            }
        });
    }
    return out;
}

/// C = A[m x k] * B[n x k]^T
template <typename T>
TensorPtrT<T> matmul_nt(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_2d(a, "matmul_nt");
    detail::require_2d(b, "matmul_nt");
    const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (b->shape[1] != k) throw dim_error("matmul_nt: inner dimensions disagree");
    auto out = make_tensor<T>({m, n});
    kernels::matmul_nt(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, b, out, m, k, n] {
            if (a->requires_grad) { // dA += dC * B
                a->ensure_grad();
                kernels::matmul_acc(out->grad.data(), b->data.data(),
                                    a->grad.data(), m, n, k);
            }
            if (b->requires_grad) { // dB += dC^T * A
                b->ensure_grad();
                kernels::matmul_tn_acc(out->grad.data(), a->data.data(),
                                       b->grad.data(), m, n, k);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> add(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_same_shape(a, b, "add");
    auto out = make_tensor<T>(a->shape);
    kernels::add(a->data.data(), b->data.data(), out->data.data(), out->numel());
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy_acc(T(1), out->grad.data(), a->grad.data(), out->numel());
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::axpy_acc(T(1), out->grad.data(), b->grad.data(), out->numel());
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sub(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_same_shape(a, b, "sub");
    auto out = make_tensor<T>(a->shape);
    kernels::sub(a->data.data(), b->data.data(), out->data.data(), out->numel());
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy_acc(T(1), out->grad.data(), a->grad.data(), out->numel());
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::axpy_acc(T(-1), out->grad.data(), b->grad.data(), out->numel());
            }
        });
    }
    return out;
}

/// elementwise product
template <typename T>
TensorPtrT<T> mul(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& b) {
    detail::require_same_shape(a, b, "mul");
    auto out = make_tensor<T>(a->shape);
    kernels::mul(a->data.data(), b->data.data(), out->data.data(), out->numel());
    if (detail::track(tape, {&a, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::mul_acc(out->grad.data(), b->data.data(), a->grad.data(), out->numel());
            }
            if (b->requires_grad) {
                b->ensure_grad();
                kernels::mul_acc(out->grad.data(), a->data.data(), b->grad.data(), out->numel());
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> scale(TapeT<T>& tape, const TensorPtrT<T>& a, double alpha) {
    auto out = make_tensor<T>(a->shape);
    kernels::scale(a->data.data(), T(alpha), out->data.data(), out->numel());
    if (detail::track(tape, {&a})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, out, alpha] {
            a->ensure_grad();
            kernels::axpy_acc(T(alpha), out->grad.data(), a->grad.data(), out->numel());
        });
    }
    return out;
}

/// rows of A[m x n] plus broadcast vector v ([n] or [1 x n])
template <typename T>
TensorPtrT<T> add_rowvec(TapeT<T>& tape, const TensorPtrT<T>& a, const TensorPtrT<T>& v) {
    detail::require_2d(a, "add_rowvec");
    const int m = a->shape[0], n = a->shape[1];
    if (int(v->numel()) != n) throw dim_error("add_rowvec: vector length mismatch");
    auto out = make_tensor<T>(a->shape);
    for (int i = 0; i < m; ++i)
        kernels::add(a->data.data() + size_t(i) * n, v->data.data(),
                     out->data.data() + size_t(i) * n, size_t(n));
    if (detail::track(tape, {&a, &v})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, v, out, m, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                kernels::axpy_acc(T(1), out->grad.data(), a->grad.data(), out->numel());
            }
            if (v->requires_grad) {
                v->ensure_grad();
                kernels::col_sums_acc(out->grad.data(), v->grad.data(), m, n);
            }
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> softmax_rows(TapeT<T>& tape, const TensorPtrT<T>& x) {
    detail::require_2d(x, "softmax_rows");
    const int m = x->shape[0], n = x->shape[1];
    if (n < 1) throw dim_error("softmax_rows: empty row dimension");
    auto out = make_tensor<T>(x->shape);
    kernels::softmax_rows(x->data.data(), out->data.data(), m, n);
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, out, m, n] {
            x->ensure_grad();
            kernels::softmax_rows_bwd(out->data.data(), out->grad.data(),
                                      x->grad.data(), m, n);
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> gelu(TapeT<T>& tape, const TensorPtrT<T>& x) {
    auto out = make_tensor<T>(x->shape);
    kernels::gelu(x->data.data(), out->data.data(), x->numel());
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, out] {
            x->ensure_grad();
            kernels::gelu_bwd(x->data.data(), out->grad.data(), x->grad.data(), x->numel());
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> layer_norm(TapeT<T>& tape, const TensorPtrT<T>& x,
                         const TensorPtrT<T>& g, const TensorPtrT<T>& b,
                         double eps = 1e-5) {
    detail::require_2d(x, "layer_norm");
    const int m = x->shape[0], n = x->shape[1];
    if (int(g->numel()) != n || int(b->numel()) != n)
        throw dim_error("layer_norm: gain/bias length mismatch");
    auto out = make_tensor<T>(x->shape);
    auto mean = std::make_shared<std::vector<T>>(m);
    auto rstd = std::make_shared<std::vector<T>>(m);
    kernels::layer_norm(x->data.data(), g->data.data(), b->data.data(),
                        out->data.data(), mean->data(), rstd->data(), m, n, T(eps));
    if (detail::track(tape, {&x, &g, &b})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, g, b, out, mean, rstd, m, n] {
            x->ensure_grad();
            g->ensure_grad();
            b->ensure_grad();
            kernels::layer_norm_bwd(x->data.data(), g->data.data(), out->grad.data(),
                                    mean->data(), rstd->data(), x->grad.data(),
                                    g->grad.data(), b->grad.data(), m, n);
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> sum_all(TapeT<T>& tape, const TensorPtrT<T>& x) {
    auto out = make_tensor<T>({1});
    out->data[0] = kernels::sum_all(x->data.data(), x->numel());
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, out] {
            x->ensure_grad();
            const T g = out->grad[0];
            for (size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> mean_all(TapeT<T>& tape, const TensorPtrT<T>& x) {
    auto out = make_tensor<T>({1});
    out->data[0] = kernels::sum_all(x->data.data(), x->numel()) / T(double(x->numel()));
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, out] {
            x->ensure_grad();
            const T g = out->grad[0] / T(double(x->numel()));
            for (size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
        });
    }
    return out;
}

/// rows [r0, r1) of a 2-D tensor
template <typename T>
TensorPtrT<T> slice_rows(TapeT<T>& tape, const TensorPtrT<T>& a, int r0, int r1) {
    detail::require_2d(a, "slice_rows");
    const int m = a->shape[0], n = a->shape[1];
    if (r0 < 0 || r1 > m || r0 >= r1) throw dim_error("slice_rows: bad row range");
    auto out = make_tensor<T>({r1 - r0, n});
    std::copy(a->data.begin() + size_t(r0) * n, a->data.begin() + size_t(r1) * n,
              out->data.begin());
    if (detail::track(tape, {&a})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, out, r0, n] {
            a->ensure_grad();
            kernels::axpy_acc(T(1), out->grad.data(),
                              a->grad.data() + size_t(r0) * n, out->numel());
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> concat_rows(TapeT<T>& tape, const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw dim_error("concat_rows: no inputs");
    const int n = parts[0]->shape[1];
    int m = 0;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_rows");
        if (p->shape[1] != n) throw dim_error("concat_rows: column mismatch");
        m += p->shape[0];
    }
    auto out = make_tensor<T>({m, n});
    size_t off = 0;
    bool needs = false;
    for (const auto& p : parts) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->numel();
        needs = needs || p->requires_grad;
    }
    if (tape.recording() && needs) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([parts, out] {
            size_t off = 0;
            for (const auto& p : parts) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    kernels::axpy_acc(T(1), out->grad.data() + off, p->grad.data(),
                                      p->numel());
                }
                off += p->numel();
            }
        });
    }
    return out;
}

/// columns [c0, c1) of a 2-D tensor
template <typename T>
TensorPtrT<T> slice_cols(TapeT<T>& tape, const TensorPtrT<T>& a, int c0, int c1) {
    detail::require_2d(a, "slice_cols");
    const int m = a->shape[0], n = a->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw dim_error("slice_cols: bad column range");
    const int w = c1 - c0;
    auto out = make_tensor<T>({m, w});
    for (int i = 0; i < m; ++i)
        std::copy(a->data.begin() + size_t(i) * n + c0,
                  a->data.begin() + size_t(i) * n + c1,
                  out->data.begin() + size_t(i) * w);
    if (detail::track(tape, {&a})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, out, c0, m, n, w] {
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    a->grad[size_t(i) * n + c0 + j] += out->grad[size_t(i) * w + j];
        });
    }
    return out;
}

template <typename T>
TensorPtrT<T> concat_cols(TapeT<T>& tape, const std::vector<TensorPtrT<T>>& parts) {
    if (parts.empty()) throw dim_error("concat_cols: no inputs");
    const int m = parts[0]->shape[0];
    int n = 0;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p->shape[0] != m) throw dim_error("concat_cols: row mismatch");
        n += p->shape[1];
    }
    auto out = make_tensor<T>({m, n});
    bool needs = false;
    int c0 = 0;
    for (const auto& p : parts) {
        const int w = p->shape[1];
        for (int i = 0; i < m; ++i)
            std::copy(p->data.begin() + size_t(i) * w,
                      p->data.begin() + size_t(i + 1) * w,
                      out->data.begin() + size_t(i) * n + c0);
        c0 += w;
        needs = needs || p->requires_grad;
    }
    if (tape.recording() && needs) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([parts, out, m, n] {
            int c0 = 0;
            for (const auto& p : parts) {
                const int w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            p->grad[size_t(i) * w + j] += out->grad[size_t(i) * n + c0 + j];
                }
                c0 += w;
            }
        });
    }
    return out;
}

/// gather rows of an embedding table; gradient scatter-adds in id order
template <typename T>
TensorPtrT<T> embedding_lookup(TapeT<T>& tape, const TensorPtrT<T>& table,
                               const std::vector<int>& ids) {
    detail::require_2d(table, "embedding_lookup");
    const int v = table->shape[0], d = table->shape[1];
    for (int id : ids)
        if (id < 0 || id >= v)
            throw data_error("embedding_lookup: id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(v));
    auto out = make_tensor<T>({int(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(table->data.begin() + size_t(ids[i]) * d,
                  table->data.begin() + size_t(ids[i] + 1) * d,
                  out->data.begin() + i * d);
    if (detail::track(tape, {&table})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([table, out, ids, d] {
            table->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    table->grad[size_t(ids[i]) * d + j] += out->grad[i * d + j];
        });
    }
    return out;
}

/// same data, new shape (copy)
template <typename T>
TensorPtrT<T> reshape(TapeT<T>& tape, const TensorPtrT<T>& a, std::vector<int> shape) {
    if (TensorT<T>::numel_of(shape) != a->numel())
        throw dim_error("reshape: element count mismatch");
    auto out = make_tensor<T>(std::move(shape));
    out->data = a->data;
    if (detail::track(tape, {&a})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([a, out] {
            a->ensure_grad();
            kernels::axpy_acc(T(1), out->grad.data(), a->grad.data(), a->numel());
        });
    }
    return out;
}

/// y = x / max(x); the argmax entry carries the quotient-rule term.
/// An all-zero map stays zero. Negative entries are a contract violation.
template <typename T>
TensorPtrT<T> normalize_map(TapeT<T>& tape, const TensorPtrT<T>& x,
                            double eps = 1e-8) {
    auto out = make_tensor<T>(x->shape);
    T mx = 0;
    size_t amax = 0;
    for (size_t i = 0; i < x->numel(); ++i) {
        if (x->data[i] < T(0))
            throw contract_error("normalize_map: negative entry");
        if (x->data[i] > mx) {
            mx = x->data[i];
            amax = i;
        }
    }
    if (double(mx) <= eps) return out; // all zeros, gradient-free plateau
    const T inv = T(1) / mx;
    kernels::scale(x->data.data(), inv, out->data.data(), x->numel());
    if (detail::track(tape, {&x})) {
        out->requires_grad = true;
        out->ensure_grad();
        tape.record([x, out, inv, amax] {
            x->ensure_grad();
            T dot = 0;
            for (size_t i = 0; i < x->numel(); ++i) dot += out->grad[i] * x->data[i];
            for (size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[i] * inv;
            x->grad[amax] -= dot * inv * inv;
        });
    }
    return out;
}

/// Cross-view aggregation of a joint attention matrix. For p in view 0,
/// out0[p] = ((1/L1) * sum_q A[p][q] + (1/L1) * sum_q A[q][p]) / 2 over
/// q in view 1, and symmetrically for out1 with 1/L0 normalization.
/// Rows/columns beyond L0+L1 (condition tokens) are ignored.
template <typename T>
std::pair<TensorPtrT<T>, TensorPtrT<T>>
aggregate_cross_view(TapeT<T>& tape, const TensorPtrT<T>& attn, int l0, int l1) {
    detail::require_2d(attn, "aggregate_cross_view");
    const int lt = attn->shape[0];
    if (attn->shape[1] != lt || lt < l0 + l1)
        throw dim_error("aggregate_cross_view: attention matrix too small for L0+L1");
    auto out0 = make_tensor<T>({l0});
    auto out1 = make_tensor<T>({l1});
    const T* A = attn->data.data();
    const T half_inv_l1 = T(0.5) / T(l1);
    const T half_inv_l0 = T(0.5) / T(l0);
    for (int p = 0; p < l0; ++p) {
        T outgoing = 0, incoming = 0;
        for (int q = l0; q < l0 + l1; ++q) {
            outgoing += A[size_t(p) * lt + q];
            incoming += A[size_t(q) * lt + p];
        }
        out0->data[p] = half_inv_l1 * (outgoing + incoming);
    }
    for (int q = l0; q < l0 + l1; ++q) {
        T outgoing = 0, incoming = 0;
        for (int p = 0; p < l0; ++p) {
            outgoing += A[size_t(q) * lt + p];
            incoming += A[size_t(p) * lt + q];
        }
        out1->data[q - l0] = half_inv_l0 * (outgoing + incoming);
    }
    if (detail::track(tape, {&attn})) {
        out0->requires_grad = out1->requires_grad = true;
        out0->ensure_grad();
        out1->ensure_grad();
        tape.record([attn, out0, out1, l0, l1, lt, half_inv_l0, half_inv_l1] {
            attn->ensure_grad();
            T* dA = attn->grad.data();
            for (int p = 0; p < l0; ++p) {
                const T g = out0->grad[p] * half_inv_l1;
                for (int q = l0; q < l0 + l1; ++q) {
                    dA[size_t(p) * lt + q] += g;
                    dA[size_t(q) * lt + p] += g;
                }
            }
            for (int q = l0; q < l0 + l1; ++q) {
                const T g = out1->grad[q - l0] * half_inv_l0;
                for (int p = 0; p < l0; ++p) {
                    dA[size_t(q) * lt + p] += g;
                    dA[size_t(p) * lt + q] += g;
                }
            }
        });
    }
    return {out0, out1};
}

/// Idealized joint attention with Q = K = X: softmax(X X^T / sqrt(d)).
template <typename T>
TensorPtrT<T> compute_joint_attention(TapeT<T>& tape, const TensorPtrT<T>& x) {
    detail::require_2d(x, "compute_joint_attention");
    const int d = x->shape[1];
    auto scores = scale(tape, matmul_nt(tape, x, x), 1.0 / std::sqrt(double(d)));
    return softmax_rows(tape, scores);
}

template <typename T>
bool all_finite(const TensorPtrT<T>& t) {
    return t->all_finite();
}

} // namespace geoscene
