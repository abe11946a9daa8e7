#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "geoscene/correspondence.hpp"
#include "geoscene/kernels.hpp"
#include "geoscene/reference.hpp"
#include "geoscene/rng.hpp"

using namespace geoscene;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double time_best(F&& f, int reps) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        f();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

double max_abs_diff(const std::vector<double>& ref, const std::vector<float>& got) {
    double m = 0;
    for (size_t i = 0; i < ref.size(); ++i)
        m = std::max(m, std::abs(ref[i] - double(got[i])));
    return m;
}

void row(const char* name, const char* size, double serial_ms, double parallel_ms,
         double diff) {
    std::printf("%-18s %-14s %10.2f %10.2f %9.2fx   %.3e\n", name, size, serial_ms,
                parallel_ms, serial_ms / parallel_ms, diff);
}

} // namespace

int main() {
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::printf("threads: %d\n", threads);
    std::printf("%-18s %-14s %10s %10s %10s   %s\n", "op", "size", "serial/ms",
                "openmp/ms", "speedup", "max|diff|");

    Rng rng(7);

    {
        const int m = 384, k = 384, n = 384;
        std::vector<double> ad(size_t(m) * k), bd(size_t(k) * n), cd(size_t(m) * n);
        std::vector<float> af(ad.size()), bf(bd.size()), cf(cd.size());
        for (size_t i = 0; i < ad.size(); ++i) af[i] = float(ad[i] = rng.normal());
        for (size_t i = 0; i < bd.size(); ++i) bf[i] = float(bd[i] = rng.normal());
        const double ts = time_best(
            [&] { ref::matmul(ad.data(), bd.data(), cd.data(), m, k, n); }, 3);
        const double tp = time_best(
            [&] { kernels::matmul(af.data(), bf.data(), cf.data(), m, k, n); }, 3);
        row("matmul", "384x384x384", ts, tp, max_abs_diff(cd, cf));
    }

    {
        const int m = 2048, n = 512;
        std::vector<double> xd(size_t(m) * n), yd(xd.size());
        std::vector<float> xf(xd.size()), yf(xd.size());
        for (size_t i = 0; i < xd.size(); ++i) xf[i] = float(xd[i] = 3.0 * rng.normal());
        const double ts =
            time_best([&] { ref::softmax_rows(xd.data(), yd.data(), m, n); }, 5);
        const double tp = time_best(
            [&] { kernels::softmax_rows(xf.data(), yf.data(), m, n); }, 5);
        row("softmax_rows", "2048x512", ts, tp, max_abs_diff(yd, yf));
    }

    {
        const int l = 264, d = 64;
        std::vector<double> xd(size_t(l) * d);
        std::vector<float> xf(xd.size());
        for (size_t i = 0; i < xd.size(); ++i) xf[i] = float(xd[i] = rng.normal());
        std::vector<double> out_ref;
        const double ts = time_best([&] { out_ref = ref::joint_attention(xd, l, d); }, 3);
        std::vector<float> scores(size_t(l) * l), attn(scores.size());
        const double inv = 1.0 / std::sqrt(double(d));
        const double tp = time_best(
            [&] {
                kernels::matmul_nt(xf.data(), xf.data(), scores.data(), l, d, l);
                kernels::scale(scores.data(), float(inv), scores.data(), scores.size());
                kernels::softmax_rows(scores.data(), attn.data(), l, l);
            },
            3);
        row("joint_attention", "264 tokens", ts, tp, max_abs_diff(out_ref, attn));
    }

    {
        const int h = 512, w = 512, n_m = 4096, r = 3;
        const RadialKernel kernel = gaussian_kernel(r, 1.5);
        MatchSet ms;
        std::vector<std::pair<double, double>> p0, p1;
        for (int i = 0; i < n_m; ++i) {
            const double x0 = rng.uniform() * w, y0 = rng.uniform() * h;
            const double x1 = rng.uniform() * w, y1 = rng.uniform() * h;
            ms.p0.push_back({float(x0), float(y0)});
            ms.p1.push_back({float(x1), float(y1)});
            p0.emplace_back(double(float(x0)), double(float(y0)));
            p1.emplace_back(double(float(x1)), double(float(y1)));
        }
        std::pair<std::vector<double>, std::vector<double>> ref_out;
        const double ts = time_best(
            [&] { ref_out = ref::splat_masks(p0, p1, h, w, kernel.w, r, 1.0); }, 3);
        std::pair<FullResMask, FullResMask> par_out;
        const double tp = time_best(
            [&] { par_out = splat_masks(ms, h, w, kernel, 1.0f); }, 3);
        row("splat_masks", "512^2, 4096m", ts, tp,
            std::max(max_abs_diff(ref_out.first, par_out.first.v),
                     max_abs_diff(ref_out.second, par_out.second.v)));
    }

    return 0;
}
