#pragma once

#include <vector>

#include "geoscene/errors.hpp"
#include "geoscene/ops.hpp"
#include "geoscene/tensor.hpp"

namespace geoscene {

/// forward-process tables; entries indexed by t in [0, t_train)
struct NoiseSchedule {
    int t_train = 0;
    std::vector<double> alpha_bar; // cumulative signal
    std::vector<double> sigma;     // sqrt(1 - alpha_bar)
    std::vector<double> weight;    // per-step loss weighting

    static NoiseSchedule cosine(int t_train);
    static NoiseSchedule linear(int t_train);

    void check_t(int t) const {
        if (t < 0 || t >= t_train)
            throw param_error("schedule: t " + std::to_string(t) + " outside [0," +
                              std::to_string(t_train) + ")");
    }
};

/// x_t = sqrt(alpha_bar_t) x0 + sigma_t eps; elementwise math in double
template <typename T>
TensorPtrT<T> add_noise(const TensorPtrT<T>& x0, const TensorPtrT<T>& eps, int t,
                        const NoiseSchedule& s) {
    if (x0->shape != eps->shape) throw dim_error("add_noise: shape mismatch");
    s.check_t(t);
    const double sab = std::sqrt(s.alpha_bar[size_t(t)]);
    const double sig = s.sigma[size_t(t)];
    auto out = make_tensor<T>(x0->shape);
    for (size_t i = 0; i < out->numel(); ++i)
        out->data[i] = T(sab * double(x0->data[i]) + sig * double(eps->data[i]));
    return out;
}

/// w(t) * mean((eps_hat - eps)^2)
template <typename T>
TensorPtrT<T> diffusion_loss(TapeT<T>& tape, const TensorPtrT<T>& eps_hat,
                             const TensorPtrT<T>& eps, int t,
                             const NoiseSchedule& s) {
    if (eps_hat->shape != eps->shape) throw dim_error("diffusion_loss: shape mismatch");
    s.check_t(t);
    auto d = sub(tape, eps_hat, eps);
    return scale(tape, mean_all(tape, mul(tape, d, d)), s.weight[size_t(t)]);
}

template <typename T>
struct AttnLossTermsT {
    TensorPtrT<T> l0, l1, total;
};

/// per-view (1/N) sum (A - M)^2 with N = grid size, optionally max-normalizing
/// the attention maps first; masks are treated as constants
template <typename T>
AttnLossTermsT<T> attention_loss(TapeT<T>& tape, const TensorPtrT<T>& a0,
                                 const TensorPtrT<T>& m0, const TensorPtrT<T>& a1,
                                 const TensorPtrT<T>& m1, bool normalize) {
    if (a0->shape != m0->shape || a1->shape != m1->shape || a0->shape != a1->shape)
        throw dim_error("attention_loss: grid shape mismatch");
    auto term = [&](const TensorPtrT<T>& a, const TensorPtrT<T>& m) {
        auto u = normalize ? normalize_map(tape, a) : a;
        auto d = sub(tape, u, m);
        return mean_all(tape, mul(tape, d, d));
    };
    AttnLossTermsT<T> out;
    out.l0 = term(a0, m0);
    out.l1 = term(a1, m1);
    out.total = add(tape, out.l0, out.l1);
    return out;
}

template <typename T>
TensorPtrT<T> total_loss(TapeT<T>& tape, const TensorPtrT<T>& l_diff,
                         const TensorPtrT<T>& l_attn, double lambda) {
    if (lambda < 0) throw param_error("total_loss: lambda must be >= 0");
    return add(tape, l_diff, scale(tape, l_attn, lambda));
}

/// scalar snapshot of one training step's objective
struct LossBreakdown {
    double l_diff = 0, l_attn0 = 0, l_attn1 = 0, l_attn = 0, total = 0;
    double lambda_used = 0;
};

} // namespace geoscene
