#pragma once

#include <cstddef>
#include <utility>
#include <vector>

// Serial 64-bit reference implementations, written as direct formula
// transcriptions with no shared code paths or threading. They serve two
// jobs: independent oracles for the parallel kernels and pipeline ops, and
// the serial side of the benchmark comparison.

namespace geoscene::ref {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void softmax_rows(const double* x, double* y, int m, int n);

/// softmax(X X^T / sqrt(d)) with X given row-major as l x d
std::vector<double> joint_attention(const std::vector<double>& x, int l, int d);

/// explicit double-loop evaluation of the symmetrized cross-view averages
void aggregate_cross_view(const std::vector<double>& a, int l_total, int l0,
                          int l1, std::vector<double>& out0,
                          std::vector<double>& out1);

/// naive splat: loop over matches, loop over kernel cells, accumulate, clip
std::pair<std::vector<double>, std::vector<double>>
splat_masks(const std::vector<std::pair<double, double>>& pts0,
            const std::vector<std::pair<double, double>>& pts1, int h, int w,
            const std::vector<double>& kernel, int r, double clip_max);

/// naive P x P area-average pooling, then optional max-rescale to [0,1]
std::vector<double> downsample_mask(const std::vector<double>& m, int h, int w,
                                    int p, bool normalize);

struct AttnLoss {
    double l0 = 0, l1 = 0, total = 0;
};
AttnLoss attention_loss(const std::vector<double>& a0, const std::vector<double>& m0,
                        const std::vector<double>& a1, const std::vector<double>& m1,
                        bool normalize);

std::vector<double> add_noise(const std::vector<double>& x0,
                              const std::vector<double>& eps,
                              double sqrt_alpha_bar, double sigma);

double diffusion_loss(const std::vector<double>& eps_hat,
                      const std::vector<double>& eps, double weight);

/// Pearson correlation; NaN when either input is constant
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// PSNR on the 0..255 scale over entries where include[i] is true; capped
double psnr_masked(const std::vector<double>& a, const std::vector<double>& b,
                   const std::vector<bool>& include, double cap);

/// one Adam element update in closed form; t is the 1-based step index
double adam_element(double p, double g, double& m, double& v, int t, double lr,
                    double beta1, double beta2, double eps);

} // namespace geoscene::ref
