#pragma once

#include "viewret/error.hpp"
#include "viewret/frame.hpp"
#include "viewret/layers.hpp"
#include "viewret/rng.hpp"
#include "viewret/tensor.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace viewret {

inline constexpr std::size_t image_size = 64;
inline constexpr std::array<std::size_t, 4> encoder_channels{16, 32, 64, 64};
inline constexpr std::size_t embedding_dim = 64 * 16 * 16;
inline constexpr std::size_t projection_dim = 512;
inline constexpr std::array<std::size_t, 4> classifier_widths{2048, 1024, 512, 2};

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Tensor& weights, std::size_t fan_in, std::size_t fan_out, Rng& rng)
{
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (float& w : weights.data()) {
        w = static_cast<float>(rng.uniform(-a, a));
    }
}

inline Tensor dense_weights(std::size_t outs, std::size_t ins, Rng& rng)
{
    Tensor w({outs, ins});
    glorot_uniform(w, ins, outs, rng);
    return w;
}

struct ConvBlock {
    Tensor weights;
    Tensor bias;
    nn::BatchNormState bn;
};

// ---------------------------------------------------------------------------
// encoder f: conv16-BN-ReLU, conv32-BN-ReLU, pool, conv64-BN-ReLU, conv64-BN-ReLU, pool, flatten

struct EncoderParams {
    std::array<ConvBlock, 4> blocks;

    static EncoderParams init(Rng& rng)
    {
        EncoderParams p;
        std::size_t in = 1;
        for (std::size_t i = 0; i < 4; ++i) {
            const std::size_t out = encoder_channels[i];
            auto& b = p.blocks[i];
            b.weights = Tensor({out, in, 3, 3});
            glorot_uniform(b.weights, in * 9, out * 9, rng);
            b.bias = Tensor({out});
            b.bn = nn::BatchNormState(out);
            in = out;
        }
        return p;
    }

    /// Trainable tensors (conv weights/biases, BN scale/shift); running stats excluded.
    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> out;
        for (auto& b : blocks) {
            out.insert(out.end(), {&b.weights, &b.bias, &b.bn.gamma, &b.bn.beta});
        }
        return out;
    }
};

/// Activations kept for the backward pass. BN+ReLU is applied in place, so
/// `act[i]` holds ReLU(BN(conv_out[i])).
struct EncoderTrace {
    Tensor input;
    std::array<Tensor, 4> conv_out;
    std::array<nn::BatchNormCache, 4> bn;
    std::array<Tensor, 4> act;
    Tensor pool1;
    Tensor pool2;
};

inline Tensor frames_to_batch(std::span<const Frame* const> frames)
{
    if (frames.empty()) {
        throw InputError("empty frame batch");
    }
    Tensor batch({frames.size(), 1, image_size, image_size});
    auto out = batch.data();
    for (std::size_t b = 0; b < frames.size(); ++b) {
        const Frame& f = *frames[b];
        if (f.height != image_size || f.width != image_size) {
            throw ShapeError("encoder expects 64x64 frames, got " + std::to_string(f.height) + "x" +
                             std::to_string(f.width));
        }
        std::copy(f.pixels.begin(), f.pixels.end(), out.begin() + static_cast<std::ptrdiff_t>(b * f.size()));
    }
    return batch;
}

namespace detail {

inline void relu_inplace(Tensor& t)
{
    for (float& v : t.data()) {
        v = v > 0.0f ? v : 0.0f;
    }
}

inline void relu_mask_grad(Tensor& act)
{
    auto x = act.data();
    auto g = act.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0f)) {
            g[i] = 0.0f;
        }
    }
}

template <class Params, class BnFn>
Tensor encode_impl(const Tensor& images, Params& params, BnFn&& bn, EncoderTrace* trace)
{
    if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != image_size || images.dim(3) != image_size) {
        throw ShapeError("encoder expects [B,1,64,64], got " + shape_string(images.dims()));
    }
    const std::size_t batch = images.dim(0);
    Tensor x = Tensor::from(images.dims(), images.data());
    for (std::size_t i = 0; i < 4; ++i) {
        auto& blk = params.blocks[i];
        Tensor conv = nn::conv2d(x, blk.weights, blk.bias);
        nn::BatchNormCache cache;
        Tensor a = bn(conv, blk.bn, trace ? &cache : nullptr);
        relu_inplace(a);
        if (trace) {
            if (i == 0) {
                trace->input = std::move(x);
            }
            trace->conv_out[i] = std::move(conv);
            trace->bn[i] = std::move(cache);
        }
        if (i == 1 || i == 3) {
            Tensor pooled = nn::maxpool2(a);
            if (trace) {
                trace->act[i] = std::move(a);
                (i == 1 ? trace->pool1 : trace->pool2) = Tensor::from(pooled.dims(), pooled.data());
            }
            x = std::move(pooled);
        } else {
            if (trace) {
                trace->act[i] = Tensor::from(a.dims(), a.data());
            }
            x = std::move(a);
        }
    }
    x.reshape({batch, embedding_dim});
    return x;
}

} // namespace detail

/// Batched encoder forward. Returns h as [B, 16384]. With a trace, the
/// activations needed by encode_backward are retained.
inline Tensor encode_batch(const Tensor& images, EncoderParams& params, Mode mode, EncoderTrace* trace = nullptr)
{
    return detail::encode_impl(images, params,
                               [mode](const Tensor& x, nn::BatchNormState& s, nn::BatchNormCache* c) {
                                   return nn::batchnorm(x, s, mode, c);
                               },
                               trace);
}

/// Eval-mode batched forward over read-only parameters.
inline Tensor encode_batch(const Tensor& images, const EncoderParams& params)
{
    return detail::encode_impl(images, params,
                               [](const Tensor& x, const nn::BatchNormState& s, nn::BatchNormCache* c) {
                                   return nn::batchnorm(x, s, c);
                               },
                               nullptr);
}

/// Propagates h.grad into the encoder parameter grads. The input image
/// gradient is not computed.
inline void encode_backward(EncoderParams& params, EncoderTrace& trace, const Tensor& h)
{
    if (h.size() != trace.pool2.size()) {
        throw ShapeError("encode_backward: embedding grad does not match trace");
    }
    std::copy(h.grad().begin(), h.grad().end(), trace.pool2.grad().begin());
    for (int i = 3; i >= 0; --i) {
        auto& blk = params.blocks[static_cast<std::size_t>(i)];
        Tensor& act = trace.act[static_cast<std::size_t>(i)];
        if (i == 3) {
            nn::maxpool2_backward(act, trace.pool2);
        } else if (i == 1) {
            nn::maxpool2_backward(act, trace.pool1);
        }
        detail::relu_mask_grad(act);
        Tensor& conv = trace.conv_out[static_cast<std::size_t>(i)];
        nn::batchnorm_backward(conv, blk.bn, trace.bn[static_cast<std::size_t>(i)], act);
        Tensor* input = nullptr;
        switch (i) {
        case 0: input = &trace.input; break;
        case 1: input = &trace.act[0]; break;
        case 2: input = &trace.pool1; break;
        default: input = &trace.act[2]; break;
        }
        nn::conv2d_backward(*input, blk.weights, blk.bias, conv, i != 0);
        act.release();
        conv.release();
    }
}

/// Eval-mode embedding of one frame: h[16384].
inline Tensor encode(const Frame& image, const EncoderParams& params)
{
    const Frame* frames[] = {&image};
    Tensor h = encode_batch(frames_to_batch(frames), params);
    h.reshape({embedding_dim});
    return h;
}

// ---------------------------------------------------------------------------
// projection head g: dense 16384->512, ReLU, dropout, dense 512->512

struct ProjectionParams {
    Tensor w1, b1, w2, b2;

    static ProjectionParams init(Rng& rng)
    {
        ProjectionParams p;
        p.w1 = dense_weights(projection_dim, embedding_dim, rng);
        p.b1 = Tensor({projection_dim});
        p.w2 = dense_weights(projection_dim, projection_dim, rng);
        p.b2 = Tensor({projection_dim});
        return p;
    }

    std::vector<Tensor*> parameters() { return {&w1, &b1, &w2, &b2}; }
};

struct ProjectionTrace {
    Tensor hidden;
    Tensor dropped;
    nn::DropoutMask mask;
};

/// Batched projection; returns z as [B, 512].
inline Tensor project_batch(const Tensor& h, const ProjectionParams& params, Mode mode = Mode::eval,
                            float dropout = 0.0f, Rng* rng = nullptr, ProjectionTrace* trace = nullptr)
{
    Tensor hidden = nn::dense(h, params.w1, params.b1);
    detail::relu_inplace(hidden);
    Tensor dropped;
    nn::DropoutMask mask;
    if (mode == Mode::train && dropout > 0.0f) {
        if (!rng) {
            throw ConfigError("project_batch: train-mode dropout needs an rng");
        }
        dropped = nn::dropout(hidden, dropout, *rng, mode, &mask);
    } else {
        mask.scale.assign(hidden.size(), 1.0f);
        dropped = Tensor::from(hidden.dims(), hidden.data());
    }
    Tensor z = nn::dense(dropped, params.w2, params.b2);
    if (trace) {
        trace->hidden = std::move(hidden);
        trace->dropped = std::move(dropped);
        trace->mask = std::move(mask);
    }
    return z;
}

/// Reads z.grad; accumulates parameter grads and h.grad.
inline void project_backward(ProjectionParams& params, ProjectionTrace& trace, Tensor& h, const Tensor& z)
{
    nn::dense_backward(trace.dropped, params.w2, params.b2, z);
    nn::dropout_backward(trace.hidden, trace.dropped, trace.mask);
    detail::relu_mask_grad(trace.hidden);
    nn::dense_backward(h, params.w1, params.b1, trace.hidden);
}

inline Tensor project(const Tensor& h, const ProjectionParams& params)
{
    if (h.size() != embedding_dim) {
        throw ShapeError("project expects h of 16384 values, got " + shape_string(h.dims()));
    }
    Tensor row = Tensor::from({1, embedding_dim}, h.data());
    Tensor z = project_batch(row, params);
    z.reshape({projection_dim});
    return z;
}

// ---------------------------------------------------------------------------
// pair classifier: [h_i ; h_j] -> 2048 -> 1024 -> 512 -> 2 -> softmax

struct ClassifierParams {
    std::array<Tensor, 4> weights;
    std::array<Tensor, 4> biases;

    static ClassifierParams init(Rng& rng)
    {
        ClassifierParams p;
        std::size_t in = 2 * embedding_dim;
        for (std::size_t i = 0; i < 4; ++i) {
            p.weights[i] = dense_weights(classifier_widths[i], in, rng);
            p.biases[i] = Tensor({classifier_widths[i]});
            in = classifier_widths[i];
        }
        return p;
    }

    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> out;
        for (std::size_t i = 0; i < 4; ++i) {
            out.push_back(&weights[i]);
            out.push_back(&biases[i]);
        }
        return out;
    }
};

struct ClassifierTrace {
    Tensor input;
    std::array<Tensor, 3> hidden;
    std::array<Tensor, 3> dropped;
    std::array<nn::DropoutMask, 3> masks;
    Tensor logits;
};

/// Concatenates rows of h_i and h_j ([B,16384] each) into [B,32768].
inline Tensor concat_pairs(std::span<const float> h_i, std::span<const float> h_j, std::size_t batch)
{
    if (h_i.size() != batch * embedding_dim || h_j.size() != batch * embedding_dim) {
        throw ShapeError("concat_pairs: embeddings must be [B,16384]");
    }
    Tensor out({batch, 2 * embedding_dim});
    auto o = out.data();
    for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(h_i.begin() + static_cast<std::ptrdiff_t>(b * embedding_dim), embedding_dim,
                    o.begin() + static_cast<std::ptrdiff_t>(2 * b * embedding_dim));
        std::copy_n(h_j.begin() + static_cast<std::ptrdiff_t>(b * embedding_dim), embedding_dim,
                    o.begin() + static_cast<std::ptrdiff_t>((2 * b + 1) * embedding_dim));
    }
    return out;
}

/// Batched classifier forward on concatenated pairs [B,32768]; returns the
/// softmax probabilities [B,2]. The logits are kept in the trace so training
/// can apply the fused softmax/cross-entropy gradient.
inline Tensor classifier_forward(Tensor input, const ClassifierParams& params, Mode mode = Mode::eval,
                                 float dropout = 0.0f, Rng* rng = nullptr, ClassifierTrace* trace = nullptr)
{
    if (input.rank() != 2 || input.dim(1) != 2 * embedding_dim) {
        throw ShapeError("classifier expects [B,32768], got " + shape_string(input.dims()));
    }
    const bool drop = mode == Mode::train && dropout > 0.0f;
    if (drop && !rng) {
        throw ConfigError("classifier_forward: train-mode dropout needs an rng");
    }
    Tensor x = nn::dense(input, params.weights[0], params.biases[0]);
    if (trace) {
        trace->input = std::move(input);
    }
    for (std::size_t i = 0; i < 3; ++i) {
        detail::relu_inplace(x);
        nn::DropoutMask mask;
        Tensor d = drop ? nn::dropout(x, dropout, *rng, mode, &mask) : Tensor::from(x.dims(), x.data());
        if (!drop) {
            mask.scale.assign(x.size(), 1.0f);
        }
        Tensor next = nn::dense(d, params.weights[i + 1], params.biases[i + 1]);
        if (trace) {
            trace->hidden[i] = std::move(x);
            trace->dropped[i] = std::move(d);
            trace->masks[i] = std::move(mask);
        }
        x = std::move(next);
    }
    Tensor probs = nn::softmax(x);
    if (trace) {
        trace->logits = std::move(x);
    }
    return probs;
}

/// Backward from trace.logits.grad (set by the loss) into parameter grads.
/// The input gradient is skipped because the encoder is frozen.
inline void classifier_backward(ClassifierParams& params, ClassifierTrace& trace)
{
    Tensor* upstream = &trace.logits;
    for (int i = 2; i >= 0; --i) {
        const auto k = static_cast<std::size_t>(i);
        nn::dense_backward(trace.dropped[k], params.weights[k + 1], params.biases[k + 1], *upstream);
        nn::dropout_backward(trace.hidden[k], trace.dropped[k], trace.masks[k]);
        detail::relu_mask_grad(trace.hidden[k]);
        upstream = &trace.hidden[k];
    }
    nn::dense_backward(trace.input, params.weights[0], params.biases[0], *upstream, false);
}

/// Eval-mode match probability vector [p_neg, p_pos] for one pair.
inline Tensor classify_pair(const Tensor& h_i, const Tensor& h_j, const ClassifierParams& params)
{
    if (h_i.size() != embedding_dim || h_j.size() != embedding_dim) {
        throw ShapeError("classify_pair expects two embeddings of 16384 values");
    }
    Tensor probs = classifier_forward(concat_pairs(h_i.data(), h_j.data(), 1), params);
    probs.reshape({2});
    return probs;
}

/// Sets logits.grad to the mean cross-entropy gradient (p - onehot) / B and
/// returns the mean loss. labels[b] is 1 for a positive pair.
inline double cross_entropy_grad(const Tensor& probs, Tensor& logits, std::span<const int> labels)
{
    const std::size_t batch = labels.size();
    if (probs.size() != 2 * batch || logits.size() != 2 * batch) {
        throw ShapeError("cross_entropy_grad: expected [B,2] probabilities");
    }
    double loss = 0.0;
    auto g = logits.grad();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t k = 0; k < 2; ++k) {
            const double target = static_cast<std::size_t>(labels[b]) == k ? 1.0 : 0.0;
            g[2 * b + k] = static_cast<float>((probs[2 * b + k] - target) / static_cast<double>(batch));
        }
        loss -= std::log(std::max(static_cast<double>(probs[2 * b + static_cast<std::size_t>(labels[b])]), 1e-12));
    }
    return loss / static_cast<double>(batch);
}

// ---------------------------------------------------------------------------
// supervised baseline: encoder trained jointly, concat, dense 32768->2, softmax

struct SupervisedParams {
    EncoderParams encoder;
    Tensor weights;
    Tensor bias;

    static SupervisedParams init(Rng& rng)
    {
        SupervisedParams p;
        p.encoder = EncoderParams::init(rng);
        p.weights = dense_weights(2, 2 * embedding_dim, rng);
        p.bias = Tensor({2});
        return p;
    }

    std::vector<Tensor*> parameters()
    {
        auto out = encoder.parameters();
        out.push_back(&weights);
        out.push_back(&bias);
        return out;
    }
};

inline Tensor supervised_forward(const Frame& x_i, const Frame& x_j, const SupervisedParams& params)
{
    const Tensor h_i = encode(x_i, params.encoder);
    const Tensor h_j = encode(x_j, params.encoder);
    Tensor logits = nn::dense(concat_pairs(h_i.data(), h_j.data(), 1), params.weights, params.bias);
    Tensor probs = nn::softmax(logits);
    probs.reshape({2});
    return probs;
}

} // namespace viewret
