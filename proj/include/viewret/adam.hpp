#pragma once

#include "viewret/error.hpp"
#include "viewret/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace viewret::nn {

struct AdamState {
    std::int64_t step = 0;
    std::vector<FloatBuffer> m;
    std::vector<FloatBuffer> v;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;

    AdamState() = default;
    explicit AdamState(float learning_rate) : lr(learning_rate) {}
};

/// One Adam update over `params` using their grad buffers.
///
/// The L2 term is folded into the gradient (g + l2_weight * w) before the
/// moment updates. Moments are created lazily on the first call; gradients are
/// left untouched (callers zero them between steps).
inline void adam_step(std::span<Tensor* const> params, AdamState& state, float l2_weight = 0.0f)
{
    if (l2_weight < 0.0f) {
        throw ConfigError("adam_step: l2_weight must be >= 0");
    }
    if (state.m.empty() && state.step == 0) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->size(), 0.0f);
            state.v.emplace_back(p->size(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i]->size()) {
            throw ShapeError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
        }
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));
    const float b1 = state.beta1;
    const float b2 = state.beta2;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->data();
        auto g = params[i]->grad();
        float* m = state.m[i].data();
        float* v = state.v[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const float grad = g[j] + l2_weight * w[j];
            m[j] = b1 * m[j] + (1.0f - b1) * grad;
            v[j] = b2 * v[j] + (1.0f - b2) * grad * grad;
            const float mhat = m[j] / c1;
            const float vhat = v[j] / c2;
            w[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

inline void zero_grads(std::span<Tensor* const> params)
{
    for (Tensor* p : params) {
        p->zero_grad();
    }
}

} // namespace viewret::nn
