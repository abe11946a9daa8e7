#include <cmath>

#include "geoscene/objective.hpp"

namespace geoscene {

namespace {

constexpr double kPi = 3.14159265358979323846;

void finish(NoiseSchedule& s) {
    s.sigma.resize(s.alpha_bar.size());
    s.weight.assign(s.alpha_bar.size(), 1.0);
    for (size_t t = 0; t < s.alpha_bar.size(); ++t)
        s.sigma[t] = std::sqrt(1.0 - s.alpha_bar[t]);
}

} // namespace

NoiseSchedule NoiseSchedule::cosine(int t_train) {
    if (t_train < 1) throw param_error("schedule: t_train must be >= 1");
    const double s = 0.008;
    auto f = [&](double t) {
        const double u = (t / double(t_train) + s) / (1.0 + s) * (kPi / 2.0);
        const double c = std::cos(u);
        return c * c;
    };
    NoiseSchedule out;
    out.t_train = t_train;
    out.alpha_bar.resize(size_t(t_train));
    const double f0 = f(0.0);
    for (int t = 0; t < t_train; ++t)
        out.alpha_bar[size_t(t)] = f(double(t)) / f0;
    finish(out);
    return out;
}

NoiseSchedule NoiseSchedule::linear(int t_train) {
    if (t_train < 1) throw param_error("schedule: t_train must be >= 1");
    const double beta_lo = 1e-4, beta_hi = 0.02;
    NoiseSchedule out;
    out.t_train = t_train;
    out.alpha_bar.resize(size_t(t_train));
    double prod = 1.0;
    for (int t = 0; t < t_train; ++t) {
        const double beta =
            t_train == 1 ? beta_lo
                         : beta_lo + (beta_hi - beta_lo) * double(t) / double(t_train - 1);
        prod *= 1.0 - beta;
        out.alpha_bar[size_t(t)] = prod;
    }
    finish(out);
    return out;
}

} // namespace geoscene
