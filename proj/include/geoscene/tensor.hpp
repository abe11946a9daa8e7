#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "geoscene/errors.hpp"

namespace geoscene {

/// Dense row-major float tensor. `grad`, when allocated, always matches
/// `data` in size.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    TensorT() = default;
    explicit TensorT(std::vector<int> shp, bool rg = false)
        : shape(std::move(shp)), requires_grad(rg) {
        for (int d : shape)
            if (d <= 0) throw dim_error("tensor dimension must be positive");
        data.assign(numel_of(shape), T(0));
        if (rg) grad.assign(data.size(), T(0));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    int ndim() const { return int(shape.size()); }
    int rows() const { return shape.size() >= 1 ? shape[0] : 1; }
    int cols() const { return shape.size() >= 2 ? shape[1] : 1; }

    T& at(int i, int j) { return data[size_t(i) * cols() + j]; }
    const T& at(int i, int j) const { return data[size_t(i) * cols() + j]; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    /// Scalar value of a 1-element tensor.
    T item() const {
        if (numel() != 1) throw contract_error("item() on non-scalar tensor");
        return data[0];
    }
};

template <typename T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<float>;
using TensorPtr = TensorPtrT<float>;

template <typename T>
TensorPtrT<T> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    return std::make_shared<TensorT<T>>(std::move(shape), requires_grad);
}

template <typename T>
TensorPtrT<T> make_tensor(std::vector<int> shape, std::vector<T> values,
                          bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    if (values.size() != t->numel())
        throw dim_error("value count does not match tensor shape");
    t->data = std::move(values);
    return t;
}

/// Reverse-mode tape. Ops append a backward closure in execution order;
/// backward() replays them once in reverse. A tape is single-use: it must
/// be reset (or rebuilt) before the next forward pass.
template <typename T>
class TapeT {
public:
    bool recording() const { return recording_; }
    void set_recording(bool r) { recording_ = r; }

    void record(std::function<void()> fn) {
        if (recording_) nodes_.push_back(std::move(fn));
    }

    size_t size() const { return nodes_.size(); }

    void backward(const TensorPtrT<T>& loss) {
        if (loss->numel() != 1)
            throw contract_error("backward requires a scalar loss");
        if (consumed_)
            throw contract_error("backward called twice on the same tape");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        consumed_ = true;
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

using Tape = TapeT<float>;

/// RAII guard that pauses tape recording, used to detach subgraphs.
template <typename T>
class NoGradGuardT {
public:
    explicit NoGradGuardT(TapeT<T>& tape) : tape_(tape), prev_(tape.recording()) {
        tape_.set_recording(false);
    }
    ~NoGradGuardT() { tape_.set_recording(prev_); }

private:
    TapeT<T>& tape_;
    bool prev_;
};

} // namespace geoscene
