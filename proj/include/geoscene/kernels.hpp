#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

// OpenMP-parallel compute kernels. Every kernel assigns each output element
// to exactly one thread and runs its reduction left to right, so results are
// bit-identical for any thread count. Serial double-precision counterparts
// live in reference.hpp and are what the tests compare against.

namespace geoscene::kernels {

// C[m x n] = A[m x k] * B[k x n], row-major
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* crow = c + size_t(i) * n;
        std::fill(crow, crow + n, T(0));
        const T* arow = a + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + size_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        T* crow = c + size_t(i) * n;
        const T* arow = a + size_t(i) * k;
        for (int p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + size_t(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] = A[m x k] * B[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* arow = a + size_t(i) * k;
        T* crow = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + size_t(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

template <typename T>
void matmul_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* arow = a + size_t(i) * k;
        T* crow = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* brow = b + size_t(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < k; ++p) {
        T* crow = c + size_t(p) * n;
        for (int i = 0; i < m; ++i) {
            const T av = a[size_t(i) * k + p];
            const T* brow = b + size_t(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// row-wise softmax, stabilized by row-max subtraction
template <typename T>
void softmax_rows(const T* x, T* y, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* xr = x + size_t(i) * n;
        T* yr = y + size_t(i) * n;
        T mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        T sum = 0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const T inv = T(1) / sum;
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
}

// dx += y .* (dy - dot(dy, y)) per row
template <typename T>
void softmax_rows_bwd(const T* y, const T* dy, T* dx, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* yr = y + size_t(i) * n;
        const T* dyr = dy + size_t(i) * n;
        T* dxr = dx + size_t(i) * n;
        T dot = 0;
        for (int j = 0; j < n; ++j) dot += dyr[j] * yr[j];
        for (int j = 0; j < n; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

template <typename T>
void add(const T* a, const T* b, T* c, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) c[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* c, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) c[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* c, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) c[i] = a[i] * b[i];
}

template <typename T>
void axpy_acc(T alpha, const T* x, T* y, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void mul_acc(const T* a, const T* b, T* c, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) c[i] += a[i] * b[i];
}

template <typename T>
void scale(const T* a, T alpha, T* c, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) c[i] = alpha * a[i];
}

// exact GELU, x * Phi(x)
template <typename T>
void gelu(const T* x, T* y, size_t n) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) {
        const double xd = double(x[i]);
        y[i] = T(xd * 0.5 * (1.0 + std::erf(xd * inv_sqrt2)));
    }
}

template <typename T>
void gelu_bwd(const T* x, const T* dy, T* dx, size_t n) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)n; ++i) {
        const double xd = double(x[i]);
        const double phi = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
        dx[i] += T(double(dy[i]) * (phi + xd * pdf));
    }
}

// y = g .* (x - mean) * rstd + b per row; mean/rstd written out for backward
template <typename T>
void layer_norm(const T* x, const T* g, const T* b, T* y, T* mean, T* rstd,
                int m, int n, T eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* xr = x + size_t(i) * n;
        T* yr = y + size_t(i) * n;
        T mu = 0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= T(n);
        T var = 0;
        for (int j = 0; j < n; ++j) {
            const T d = xr[j] - mu;
            var += d * d;
        }
        var /= T(n);
        const T rs = T(1) / std::sqrt(var + eps);
        mean[i] = mu;
        rstd[i] = rs;
        for (int j = 0; j < n; ++j) yr[j] = g[j] * (xr[j] - mu) * rs + b[j];
    }
}

template <typename T>
void layer_norm_bwd(const T* x, const T* g, const T* dy, const T* mean,
                    const T* rstd, T* dx, T* dg, T* db, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* xr = x + size_t(i) * n;
        const T* dyr = dy + size_t(i) * n;
        T* dxr = dx + size_t(i) * n;
        const T mu = mean[i];
        const T rs = rstd[i];
        T sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int j = 0; j < n; ++j) {
            const T xhat = (xr[j] - mu) * rs;
            const T dxhat = dyr[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        const T invn = T(1) / T(n);
        for (int j = 0; j < n; ++j) {
            const T xhat = (xr[j] - mu) * rs;
            const T dxhat = dyr[j] * g[j];
            dxr[j] += rs * (dxhat - invn * sum_dxhat - xhat * invn * sum_dxhat_xhat);
        }
    }
    // gain/bias reductions: one thread per column, rows left to right
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        T sg = 0, sb = 0;
        for (int i = 0; i < m; ++i) {
            const T xhat = (x[size_t(i) * n + j] - mean[i]) * rstd[i];
            sg += dy[size_t(i) * n + j] * xhat;
            sb += dy[size_t(i) * n + j];
        }
        dg[j] += sg;
        db[j] += sb;
    }
}

// serial left-to-right reduction; the fixed order keeps results independent
// of the OpenMP thread count
template <typename T>
T sum_all(const T* x, size_t n) {
    T s = 0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

// column sums, one thread per column, rows ascending
template <typename T>
void col_sums_acc(const T* x, T* out, int m, int n) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < n; ++j) {
        T s = 0;
        for (int i = 0; i < m; ++i) s += x[size_t(i) * n + j];
        out[j] += s;
    }
}

} // namespace geoscene::kernels
