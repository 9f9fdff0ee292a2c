#pragma once

#include "viewret/error.hpp"
#include "viewret/kernels.hpp"
#include "viewret/parallel.hpp"
#include "viewret/rng.hpp"
#include "viewret/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

// Forward/backward pairs for every layer the networks use.
//
// Convention: `forward(inputs...) -> output`; `*_backward(inputs..., output)`
// reads output.grad and *accumulates* into the grad buffers of the inputs and
// parameters. Image tensors are [C,H,W] or batched [B,C,H,W]; vectors are [F]
// or batched [B,F].
namespace viewret::nn {

namespace detail {

struct ImageBatch {
    std::size_t batch, channels, height, width;
};

inline ImageBatch image_batch(const Tensor& t, const char* op)
{
    if (t.rank() == 3) {
        return {1, t.dim(0), t.dim(1), t.dim(2)};
    }
    if (t.rank() == 4) {
        return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
    }
    throw ShapeError(std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_string(t.dims()));
}

inline std::vector<std::size_t> image_dims(const Tensor& like, std::size_t c, std::size_t h, std::size_t w)
{
    if (like.rank() == 3) {
        return {c, h, w};
    }
    return {like.dim(0), c, h, w};
}

struct VectorBatch {
    std::size_t batch, features;
};

inline VectorBatch vector_batch(const Tensor& t, const char* op)
{
    if (t.rank() == 1) {
        return {1, t.dim(0)};
    }
    if (t.rank() == 2) {
        return {t.dim(0), t.dim(1)};
    }
    throw ShapeError(std::string(op) + ": expected [F] or [B,F], got " + shape_string(t.dims()));
}

} // namespace detail

// ---------------------------------------------------------------------------
// conv2d: 3x3 kernel, stride 1, zero padding 1 (spatial size preserved).

inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias)
{
    const auto in = detail::image_batch(input, "conv2d");
    if (weights.rank() != 4 || weights.dim(1) != in.channels || weights.dim(2) != 3 || weights.dim(3) != 3) {
        throw ShapeError("conv2d: weights " + shape_string(weights.dims()) + " incompatible with input " +
                         shape_string(input.dims()) + " (expected [C_out," + std::to_string(in.channels) +
                         ",3,3])");
    }
    const std::size_t c_out = weights.dim(0);
    require_shape(bias, {c_out}, "conv2d bias");
    if (in.height < 3 || in.width < 3) {
        throw ShapeError("conv2d: input must be at least 3x3");
    }

    Tensor output(detail::image_dims(input, c_out, in.height, in.width));
    const std::size_t hw = in.height * in.width;
    const std::size_t k = in.channels * 9;
    parallel_for(in.batch, [&](std::size_t b) {
        FloatBuffer col(k * hw);
        kernels::im2col3x3(input.data().data() + b * in.channels * hw, in.channels, in.height, in.width,
                           col.data());
        kernels::ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(c_out),
                               static_cast<Eigen::Index>(k));
        kernels::ConstMatMap cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
        kernels::MatMap out(output.data().data() + b * c_out * hw, static_cast<Eigen::Index>(c_out),
                            static_cast<Eigen::Index>(hw));
        out.noalias() = w * cm;
        for (std::size_t c = 0; c < c_out; ++c) {
            out.row(static_cast<Eigen::Index>(c)).array() += bias[c];
        }
    });
    output.check_finite("conv2d");
    return output;
}

/// Per-sample weight gradients are computed into private buffers and summed in
/// sample order, so the result does not depend on the thread count.
inline void conv2d_backward(Tensor& input, Tensor& weights, Tensor& bias, const Tensor& output,
                            bool input_grad = true)
{
    const auto in = detail::image_batch(input, "conv2d_backward");
    const std::size_t c_out = weights.dim(0);
    const std::size_t hw = in.height * in.width;
    const std::size_t k = in.channels * 9;
    require_shape(output, detail::image_dims(input, c_out, in.height, in.width), "conv2d_backward output");

    std::vector<FloatBuffer> weight_parts(in.batch, FloatBuffer(c_out * k, 0.0f));
    parallel_for(in.batch, [&](std::size_t b) {
        FloatBuffer col(k * hw);
        kernels::im2col3x3(input.data().data() + b * in.channels * hw, in.channels, in.height, in.width,
                           col.data());
        kernels::ConstMatMap dy(output.grad().data() + b * c_out * hw, static_cast<Eigen::Index>(c_out),
                                static_cast<Eigen::Index>(hw));
        kernels::ConstMatMap cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
        kernels::MatMap dw(weight_parts[b].data(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(k));
        dw.noalias() = dy * cm.transpose();
        if (input_grad) {
            kernels::ConstMatMap w(weights.data().data(), static_cast<Eigen::Index>(c_out),
                                   static_cast<Eigen::Index>(k));
            kernels::MatMap dcol(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
            dcol.noalias() = w.transpose() * dy;
            kernels::col2im3x3(col.data(), in.channels, in.height, in.width,
                               input.grad().data() + b * in.channels * hw);
        }
    });
    auto wg = weights.grad();
    auto bg = bias.grad();
    for (std::size_t b = 0; b < in.batch; ++b) {
        for (std::size_t i = 0; i < wg.size(); ++i) {
            wg[i] += weight_parts[b][i];
        }
        const float* dy = output.grad().data() + b * c_out * hw;
        for (std::size_t c = 0; c < c_out; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) {
                s += dy[c * hw + p];
            }
            bg[c] += static_cast<float>(s);
        }
    }
}

// ---------------------------------------------------------------------------
// maxpool2: 2x2 window, stride 2.

namespace detail {

// Row-major first index of the window maximum.
inline std::size_t window_argmax(const float* plane, std::size_t width, std::size_t oy, std::size_t ox)
{
    std::size_t best = (2 * oy) * width + 2 * ox;
    for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * width + 2 * ox + dx;
            if (plane[idx] > plane[best]) {
                best = idx;
            }
        }
    }
    return best;
}

} // namespace detail

inline Tensor maxpool2(const Tensor& input)
{
    const auto in = detail::image_batch(input, "maxpool2");
    if (in.height % 2 != 0 || in.width % 2 != 0) {
        throw ShapeError("maxpool2: spatial dims must be even, got " + shape_string(input.dims()));
    }
    const std::size_t oh = in.height / 2;
    const std::size_t ow = in.width / 2;
    Tensor output(detail::image_dims(input, in.channels, oh, ow));
    const std::size_t planes = in.batch * in.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* plane = input.data().data() + p * in.height * in.width;
        float* out = output.data().data() + p * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                out[y * ow + x] = plane[detail::window_argmax(plane, in.width, y, x)];
            }
        }
    }
    return output;
}

/// Routes each output gradient to the window's argmax (first in row-major order on ties).
inline void maxpool2_backward(Tensor& input, const Tensor& output)
{
    const auto in = detail::image_batch(input, "maxpool2_backward");
    const std::size_t oh = in.height / 2;
    const std::size_t ow = in.width / 2;
    require_shape(output, detail::image_dims(input, in.channels, oh, ow), "maxpool2_backward output");
    const std::size_t planes = in.batch * in.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* plane = input.data().data() + p * in.height * in.width;
        float* dplane = input.grad().data() + p * in.height * in.width;
        const float* dout = output.grad().data() + p * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                dplane[detail::window_argmax(plane, in.width, y, x)] += dout[y * ow + x];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// dense: out = W x + b, W is [F_out, F_in].

inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias)
{
    const auto in = detail::vector_batch(input, "dense");
    if (weights.rank() != 2 || weights.dim(1) != in.features) {
        throw ShapeError("dense: weights " + shape_string(weights.dims()) + " incompatible with input " +
                         shape_string(input.dims()));
    }
    const std::size_t outs = weights.dim(0);
    require_shape(bias, {outs}, "dense bias");
    Tensor output(input.rank() == 1 ? std::vector<std::size_t>{outs} : std::vector<std::size_t>{in.batch, outs});
    kernels::linear_forward(input.data().data(), in.batch, weights.data().data(), outs, in.features,
                            bias.data().data(), output.data().data());
    output.check_finite("dense");
    return output;
}

inline void dense_backward(Tensor& input, Tensor& weights, Tensor& bias, const Tensor& output, bool input_grad = true)
{
    const auto in = detail::vector_batch(input, "dense_backward");
    const std::size_t outs = weights.dim(0);
    if (output.size() != in.batch * outs) {
        throw ShapeError("dense_backward: output shape " + shape_string(output.dims()) + " does not match");
    }
    const float* dy = output.grad().data();
    kernels::accumulate_weight_grad(dy, in.batch, input.data().data(), outs, in.features, weights.grad().data());
    auto bg = bias.grad();
    for (std::size_t o = 0; o < outs; ++o) {
        double s = 0.0;
        for (std::size_t b = 0; b < in.batch; ++b) {
            s += dy[b * outs + o];
        }
        bg[o] += static_cast<float>(s);
    }
    if (input_grad) {
        kernels::accumulate_input_grad(dy, in.batch, weights.data().data(), outs, in.features,
                                       input.grad().data());
    }
}

// ---------------------------------------------------------------------------
// relu

inline Tensor relu(const Tensor& input)
{
    Tensor output(input.dims());
    auto x = input.data();
    auto y = output.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
    return output;
}

/// Gradient passes only where input > 0 (zero at the kink).
inline void relu_backward(Tensor& input, const Tensor& output)
{
    auto x = input.data();
    auto dx = input.grad();
    auto dy = output.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0f) {
            dx[i] += dy[i];
        }
    }
}

// ---------------------------------------------------------------------------
// softmax over the last axis

inline Tensor softmax(const Tensor& input)
{
    const auto in = detail::vector_batch(input, "softmax");
    if (in.features < 2) {
        throw ShapeError("softmax: need at least two classes");
    }
    Tensor output(input.dims());
    for (std::size_t b = 0; b < in.batch; ++b) {
        const float* x = input.data().data() + b * in.features;
        float* y = output.data().data() + b * in.features;
        const float m = *std::max_element(x, x + in.features);
        double total = 0.0;
        for (std::size_t k = 0; k < in.features; ++k) {
            total += std::exp(static_cast<double>(x[k]) - m);
        }
        for (std::size_t k = 0; k < in.features; ++k) {
            y[k] = static_cast<float>(std::exp(static_cast<double>(x[k]) - m) / total);
        }
    }
    return output;
}

inline void softmax_backward(Tensor& input, const Tensor& output)
{
    const auto in = detail::vector_batch(input, "softmax_backward");
    for (std::size_t b = 0; b < in.batch; ++b) {
        const float* y = output.data().data() + b * in.features;
        const float* dy = output.grad().data() + b * in.features;
        float* dx = input.grad().data() + b * in.features;
        double dot = 0.0;
        for (std::size_t k = 0; k < in.features; ++k) {
            dot += static_cast<double>(dy[k]) * y[k];
        }
        for (std::size_t k = 0; k < in.features; ++k) {
            dx[k] += static_cast<float>(y[k] * (dy[k] - dot));
        }
    }
}

// ---------------------------------------------------------------------------
// batch normalization over [B, C, ...] (statistics per channel across batch and space)

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    float momentum = 0.9f;
    float eps = 1e-5f;

    BatchNormState() = default;

    explicit BatchNormState(std::size_t channels)
        : gamma({channels}, 1.0f), beta({channels}, 0.0f), running_mean({channels}, 0.0f),
          running_var({channels}, 1.0f)
    {
    }

    std::size_t channels() const { return gamma.size(); }
};

struct BatchNormCache {
    Mode mode = Mode::eval;
    std::vector<double> mean;
    std::vector<double> inv_std;
};

namespace detail {

struct ChannelLayout {
    std::size_t batch, channels, spatial;
};

inline ChannelLayout channel_layout(const Tensor& t, std::size_t channels)
{
    if (t.rank() < 2 || t.dim(1) != channels) {
        throw ShapeError("batchnorm: expected [B," + std::to_string(channels) + ",...], got " +
                         shape_string(t.dims()));
    }
    return {t.dim(0), channels, t.size() / (t.dim(0) * channels)};
}

} // namespace detail

/// Train mode normalizes with batch statistics and updates the running
/// estimates (running = momentum*running + (1-momentum)*batch; the running
/// variance uses the unbiased estimate). Eval mode uses the running estimates.
namespace detail {

inline Tensor batchnorm_impl(const Tensor& input, const BatchNormState& state, Mode mode, BatchNormCache* cache,
                             BatchNormState* running)
{
    const auto lay = detail::channel_layout(input, state.channels());
    if (mode == Mode::train && lay.batch < 2) {
        throw ConfigError("batchnorm: train mode needs a batch of at least 2");
    }
    std::vector<double> mean(lay.channels), inv_std(lay.channels);
    const std::size_t count = lay.batch * lay.spatial;
    for (std::size_t c = 0; c < lay.channels; ++c) {
        if (mode == Mode::eval) {
            mean[c] = state.running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps);
            continue;
        }
        double s = 0.0;
        for (std::size_t b = 0; b < lay.batch; ++b) {
            const float* x = input.data().data() + (b * lay.channels + c) * lay.spatial;
            for (std::size_t i = 0; i < lay.spatial; ++i) {
                s += x[i];
            }
        }
        const double mu = s / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t b = 0; b < lay.batch; ++b) {
            const float* x = input.data().data() + (b * lay.channels + c) * lay.spatial;
            for (std::size_t i = 0; i < lay.spatial; ++i) {
                const double d = x[i] - mu;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(count);
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + state.eps);
        if (running) {
            const double m = running->momentum;
            const double unbiased = sq / static_cast<double>(count - 1);
            running->running_mean[c] = static_cast<float>(m * running->running_mean[c] + (1.0 - m) * mu);
            running->running_var[c] = static_cast<float>(m * running->running_var[c] + (1.0 - m) * unbiased);
        }
    }
    Tensor output(input.dims());
    for (std::size_t b = 0; b < lay.batch; ++b) {
        for (std::size_t c = 0; c < lay.channels; ++c) {
            const std::size_t off = (b * lay.channels + c) * lay.spatial;
            const float* x = input.data().data() + off;
            float* y = output.data().data() + off;
            const double g = state.gamma[c];
            const double be = state.beta[c];
            for (std::size_t i = 0; i < lay.spatial; ++i) {
                y[i] = static_cast<float>(g * (x[i] - mean[c]) * inv_std[c] + be);
            }
        }
    }
    if (cache) {
        cache->mode = mode;
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
    }
    output.check_finite("batchnorm");
    return output;
}

} // namespace detail

inline Tensor batchnorm(const Tensor& input, BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr)
{
    return detail::batchnorm_impl(input, state, mode, cache, mode == Mode::train ? &state : nullptr);
}

/// Eval-mode forward; the running statistics are only read.
inline Tensor batchnorm(const Tensor& input, const BatchNormState& state, BatchNormCache* cache = nullptr)
{
    return detail::batchnorm_impl(input, state, Mode::eval, cache, nullptr);
}

/// Only output.grad is read from `output`.
inline void batchnorm_backward(Tensor& input, BatchNormState& state, const BatchNormCache& cache, const Tensor& output)
{
    const auto lay = detail::channel_layout(input, state.channels());
    const double count = static_cast<double>(lay.batch * lay.spatial);
    for (std::size_t c = 0; c < lay.channels; ++c) {
        const double mu = cache.mean[c];
        const double inv = cache.inv_std[c];
        const double g = state.gamma[c];
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < lay.batch; ++b) {
            const std::size_t off = (b * lay.channels + c) * lay.spatial;
            const float* x = input.data().data() + off;
            const float* dy = output.grad().data() + off;
            for (std::size_t i = 0; i < lay.spatial; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * (x[i] - mu) * inv;
            }
        }
        state.gamma.grad()[c] += static_cast<float>(sum_dy_xhat);
        state.beta.grad()[c] += static_cast<float>(sum_dy);
        for (std::size_t b = 0; b < lay.batch; ++b) {
            const std::size_t off = (b * lay.channels + c) * lay.spatial;
            const float* x = input.data().data() + off;
            const float* dy = output.grad().data() + off;
            float* dx = input.grad().data() + off;
            if (cache.mode == Mode::eval) {
                for (std::size_t i = 0; i < lay.spatial; ++i) {
                    dx[i] += static_cast<float>(dy[i] * g * inv);
                }
            } else {
                for (std::size_t i = 0; i < lay.spatial; ++i) {
                    const double xhat = (x[i] - mu) * inv;
                    dx[i] += static_cast<float>(g * inv / count *
                                                (count * dy[i] - sum_dy - xhat * sum_dy_xhat));
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// inverted dropout

struct DropoutMask {
    std::vector<float> scale;
};

inline Tensor dropout(const Tensor& input, float p, Rng& rng, Mode mode, DropoutMask* mask = nullptr)
{
    if (!(p >= 0.0f && p < 1.0f)) {
        throw ConfigError("dropout: probability must be in [0, 1), got " + std::to_string(p));
    }
    Tensor output = Tensor::from(input.dims(), input.data());
    if (mode == Mode::eval || p == 0.0f) {
        if (mask) {
            mask->scale.assign(input.size(), 1.0f);
        }
        return output;
    }
    const float keep_scale = 1.0f / (1.0f - p);
    std::vector<float> scale(input.size());
    auto y = output.data();
    for (std::size_t i = 0; i < scale.size(); ++i) {
        scale[i] = rng.uniform() < p ? 0.0f : keep_scale;
        y[i] *= scale[i];
    }
    if (mask) {
        mask->scale = std::move(scale);
    }
    return output;
}

inline void dropout_backward(Tensor& input, const Tensor& output, const DropoutMask& mask)
{
    auto dx = input.grad();
    auto dy = output.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx[i] += dy[i] * mask.scale[i];
    }
}

} // namespace viewret::nn
