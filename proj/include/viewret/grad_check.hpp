#pragma once

#include "viewret/rng.hpp"
#include "viewret/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace viewret::nn {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t entries = 0;
    double tolerance = 0.0;
    bool passed = true;
};

/// Relative error with an absolute floor: |a - n| / max(|a|, |n|, floor).
/// Float32 central differences carry ~1e-4 of absolute round-off noise, so
/// entries with magnitude below `floor` are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1.0)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` (dL/dx) with central differences of the scalar `loss`.
/// The step is taken in float32; the actual perturbation (x+h) - (x-h) after
/// rounding is used as the denominator.
inline GradCheckReport compare_gradients(const std::function<double(const Tensor&)>& loss,
                                         std::span<const float> analytic, const Tensor& input, double tolerance,
                                         double h = 1e-3)
{
    GradCheckReport report;
    report.tolerance = tolerance;
    report.entries = input.size();
    Tensor probe = Tensor::from(input.dims(), input.data());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const float x = input[i];
        const float xp = x + static_cast<float>(h);
        const float xm = x - static_cast<float>(h);
        probe[i] = xp;
        const double lp = loss(probe);
        probe[i] = xm;
        const double lm = loss(probe);
        probe[i] = x;
        const double numeric = (lp - lm) / (static_cast<double>(xp) - static_cast<double>(xm));
        const double err = relative_error(analytic[i], numeric);
        if (err > report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    report.passed = report.max_relative_error < tolerance;
    return report;
}

/// Gradient check for a layer-style op.
///
/// `forward(x)` returns y; `backward(x, y)` must accumulate dL/dx into x.grad
/// given y.grad. The scalar probed is L = sum(r * y) with a fixed random r,
/// which exercises every output entry.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& forward,
                                  const std::function<void(Tensor&, const Tensor&)>& backward, const Tensor& input,
                                  double tolerance, std::uint64_t seed = 7, double h = 1e-3)
{
    Tensor x = Tensor::from(input.dims(), input.data());
    Tensor y = forward(x);
    std::vector<float> weights(y.size());
    Rng rng(seed);
    for (float& w : weights) {
        w = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    std::copy(weights.begin(), weights.end(), y.grad().begin());
    backward(x, y);
    std::vector<float> analytic(x.grad().begin(), x.grad().end());

    auto loss = [&](const Tensor& probe) {
        Tensor out = forward(probe);
        double total = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            total += static_cast<double>(weights[i]) * out[i];
        }
        return total;
    };
    return compare_gradients(loss, analytic, input, tolerance, h);
}

} // namespace viewret::nn
