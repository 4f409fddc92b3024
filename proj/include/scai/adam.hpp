#pragma once

// Adam with bias correction. State is kept per parameter tensor; the step
// count lives in the state so checkpoints can carry it.

#include <cmath>

#include "scai/tensor.hpp"

namespace scai {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamStateT {
    TensorT<T> m;
    TensorT<T> v;
    std::int64_t step = 0;

    explicit AdamStateT(const Shape& shape = {1})
        : m(TensorT<T>::zeros(shape)), v(TensorT<T>::zeros(shape)) {}
};

template <class T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, AdamStateT<T>& state,
               const AdamConfig& cfg) {
    check_same_shape(param, grad, "adam_step");
    check_same_shape(param, state.m, "adam_step(state)");
    state.step += 1;
    const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
    const T c1 = T(1) - T(std::pow(cfg.beta1, double(state.step)));
    const T c2 = T(1) - T(std::pow(cfg.beta2, double(state.step)));
    const T lr = T(cfg.lr), eps = T(cfg.eps);
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const T g = grad.data[i];
        state.m.data[i] = b1 * state.m.data[i] + (T(1) - b1) * g;
        state.v.data[i] = b2 * state.v.data[i] + (T(1) - b2) * g * g;
        const T mhat = state.m.data[i] / c1;
        const T vhat = state.v.data[i] / c2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

using AdamState = AdamStateT<float>;

}  // namespace scai
