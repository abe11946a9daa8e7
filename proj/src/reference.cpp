#include "geoscene/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geoscene/errors.hpp"

namespace geoscene::ref {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[size_t(i) * k + p] * b[size_t(p) * n + j];
            c[size_t(i) * n + j] = acc;
        }
}

void softmax_rows(const double* x, double* y, int m, int n) {
    for (int i = 0; i < m; ++i) {
        const double* xr = x + size_t(i) * n;
        double* yr = y + size_t(i) * n;
        double mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < n; ++j) yr[j] /= sum;
    }
}

std::vector<double> joint_attention(const std::vector<double>& x, int l, int d) {
    std::vector<double> scores(size_t(l) * l);
    const double inv = 1.0 / std::sqrt(double(d));
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j) {
            double dot = 0.0;
            for (int p = 0; p < d; ++p) dot += x[size_t(i) * d + p] * x[size_t(j) * d + p];
            scores[size_t(i) * l + j] = dot * inv;
        }
    std::vector<double> a(size_t(l) * l);
    softmax_rows(scores.data(), a.data(), l, l);
    return a;
}

void aggregate_cross_view(const std::vector<double>& a, int l_total, int l0,
                          int l1, std::vector<double>& out0,
                          std::vector<double>& out1) {
    out0.assign(size_t(l0), 0.0);
    out1.assign(size_t(l1), 0.0);
    for (int p = 0; p < l0; ++p) {
        double outgoing = 0.0;
        for (int q = l0; q < l0 + l1; ++q) outgoing += a[size_t(p) * l_total + q];
        double incoming = 0.0;
        for (int q = l0; q < l0 + l1; ++q) incoming += a[size_t(q) * l_total + p];
        out0[p] = 0.5 * (outgoing / double(l1) + incoming / double(l1));
    }
    for (int q = l0; q < l0 + l1; ++q) {
        double outgoing = 0.0;
        for (int p = 0; p < l0; ++p) outgoing += a[size_t(q) * l_total + p];
        double incoming = 0.0;
        for (int p = 0; p < l0; ++p) incoming += a[size_t(p) * l_total + q];
        out1[q - l0] = 0.5 * (outgoing / double(l0) + incoming / double(l0));
    }
}

std::pair<std::vector<double>, std::vector<double>>
splat_masks(const std::vector<std::pair<double, double>>& pts0,
            const std::vector<std::pair<double, double>>& pts1, int h, int w,
            const std::vector<double>& kernel, int r, double clip_max) {
    auto splat_one = [&](const std::vector<std::pair<double, double>>& pts) {
        std::vector<double> m(size_t(h) * w, 0.0);
        for (const auto& [x, y] : pts) {
            const long cx = std::llround(x), cy = std::llround(y);
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const long px = cx + dx, py = cy + dy;
                    if (px < 0 || px >= w || py < 0 || py >= h) continue;
                    m[size_t(py) * w + px] +=
                        kernel[size_t(dy + r) * (2 * r + 1) + (dx + r)];
                }
        }
        for (double& v : m) v = std::min(v, clip_max);
        return m;
    };
    return {splat_one(pts0), splat_one(pts1)};
}

std::vector<double> downsample_mask(const std::vector<double>& m, int h, int w,
                                    int p, bool normalize) {
    const int hs = h / p, ws = w / p;
    std::vector<double> out(size_t(hs) * ws, 0.0);
    for (int cy = 0; cy < hs; ++cy)
        for (int cx = 0; cx < ws; ++cx) {
            double sum = 0.0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    sum += m[size_t(cy * p + dy) * w + (cx * p + dx)];
            out[size_t(cy) * ws + cx] = sum / double(p * p);
        }
    if (normalize) {
        double mx = 0.0;
        for (double v : out) mx = std::max(mx, v);
        if (mx > 0.0)
            for (double& v : out) v /= mx;
    }
    return out;
}

AttnLoss attention_loss(const std::vector<double>& a0, const std::vector<double>& m0,
                        const std::vector<double>& a1, const std::vector<double>& m1,
                        bool normalize) {
    auto norm = [](std::vector<double> v) {
        double mx = 0.0;
        for (double x : v) mx = std::max(mx, x);
        if (mx > 1e-8)
            for (double& x : v) x /= mx;
        else
            std::fill(v.begin(), v.end(), 0.0);
        return v;
    };
    const std::vector<double> u0 = normalize ? norm(a0) : a0;
    const std::vector<double> u1 = normalize ? norm(a1) : a1;
    AttnLoss out;
    for (size_t i = 0; i < u0.size(); ++i) {
        const double d = u0[i] - m0[i];
        out.l0 += d * d;
    }
    for (size_t i = 0; i < u1.size(); ++i) {
        const double d = u1[i] - m1[i];
        out.l1 += d * d;
    }
    out.l0 /= double(u0.size());
    out.l1 /= double(u1.size());
    out.total = out.l0 + out.l1;
    return out;
}

std::vector<double> add_noise(const std::vector<double>& x0,
                              const std::vector<double>& eps,
                              double sqrt_alpha_bar, double sigma) {
    std::vector<double> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i)
        out[i] = sqrt_alpha_bar * x0[i] + sigma * eps[i];
    return out;
}

double diffusion_loss(const std::vector<double>& eps_hat,
                      const std::vector<double>& eps, double weight) {
    double acc = 0.0;
    for (size_t i = 0; i < eps.size(); ++i) {
        const double d = eps_hat[i] - eps[i];
        acc += d * d;
    }
    return weight * acc / double(eps.size());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= double(n);
    mb /= double(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

double psnr_masked(const std::vector<double>& a, const std::vector<double>& b,
                   const std::vector<bool>& include, double cap) {
    double sq = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (!include[i]) continue;
        const double d = a[i] - b[i];
        sq += d * d;
        ++count;
    }
    if (count == 0) throw data_error("psnr: empty included region");
    const double mse = sq / double(count);
    if (mse <= 0.0) return cap;
    return std::min(cap, 20.0 * std::log10(255.0 / std::sqrt(mse)));
}

double adam_element(double p, double g, double& m, double& v, int t, double lr,
                    double beta1, double beta2, double eps) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, double(t)));
    const double vhat = v / (1.0 - std::pow(beta2, double(t)));
    return p - lr * mhat / (std::sqrt(vhat) + eps);
}

} // namespace geoscene::ref
