#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "geoscene/errors.hpp"
#include "geoscene/tensor.hpp"

namespace geoscene {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with per-parameter first/second moment buffers. The update for each
/// element is evaluated in double and rounded once into the parameter's
/// storage type, so the float and double instantiations follow the same
/// arithmetic path.
template <typename T>
class AdamT {
public:
    AdamT(std::vector<TensorPtrT<T>> params, AdamConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->numel(), 0.0);
            v_[i].assign(params_[i]->numel(), 0.0);
        }
    }

    /// one update from the gradients currently held by the parameters
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (p.grad.size() != p.numel())
                throw contract_error("adam: parameter " + std::to_string(i) +
                                     " has no gradient");
            for (size_t j = 0; j < p.numel(); ++j) {
                const double g = double(p.grad[j]);
                if (!std::isfinite(g))
                    throw numeric_error("adam: non-finite gradient at step " +
                                        std::to_string(t_));
                double& m = m_[i][j];
                double& v = v_[i][j];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                p.data[j] = T(double(p.data[j]) -
                              cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    /// global L2 clip over all parameter gradients; returns the pre-clip norm
    double clip_grad_norm(double max_norm) {
        double sq = 0.0;
        for (const auto& p : params_) {
            if (p->grad.size() != p->numel()) continue;
            for (size_t j = 0; j < p->numel(); ++j) {
                const double g = double(p->grad[j]);
                sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        if (norm > max_norm && norm > 0.0) {
            const T s = T(max_norm / norm);
            for (auto& p : params_) {
                if (p->grad.size() != p->numel()) continue;
                for (size_t j = 0; j < p->numel(); ++j) p->grad[j] *= s;
            }
        }
        return norm;
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const std::vector<double>& moment1(size_t i) const { return m_[i]; }
    const std::vector<double>& moment2(size_t i) const { return v_[i]; }
    std::vector<double>& moment1(size_t i) { return m_[i]; }
    std::vector<double>& moment2(size_t i) { return v_[i]; }
    size_t size() const { return params_.size(); }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<TensorPtrT<T>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t t_ = 0;
};

using Adam = AdamT<float>;

} // namespace geoscene
