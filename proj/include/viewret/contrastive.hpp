#pragma once

#include "viewret/error.hpp"
#include "viewret/frame.hpp"
#include "viewret/rng.hpp"
#include "viewret/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace viewret {

struct AugmentConfig {
    std::size_t crop_margin = 10;
    double flip_probability = 0.5;
    std::size_t output_size = 64;

    void validate() const
    {
        if (crop_margin >= output_size) {
            throw ConfigError("crop_margin must be smaller than the output size");
        }
        if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
            throw ConfigError("flip_probability must be in [0, 1]");
        }
    }
};

/// The random choices behind one augmented view.
struct ViewParams {
    bool flip = false;
    std::size_t offset_x = 0;
    std::size_t offset_y = 0;
};

inline ViewParams draw_view(const AugmentConfig& cfg, Rng& rng)
{
    ViewParams v;
    v.flip = rng.bernoulli(cfg.flip_probability);
    v.offset_x = static_cast<std::size_t>(rng.uniform_int(cfg.crop_margin + 1));
    v.offset_y = static_cast<std::size_t>(rng.uniform_int(cfg.crop_margin + 1));
    return v;
}

/// Bilinear resize with half-pixel centers and edge clamping. Equal sizes
/// reproduce the input exactly.
inline Frame resize_bilinear(const Frame& src, std::size_t height, std::size_t width)
{
    Frame out(height, width);
    const double sy = static_cast<double>(src.height) / static_cast<double>(height);
    const double sx = static_cast<double>(src.width) / static_cast<double>(width);
    auto axis = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
        pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(pos));
        i1 = std::min(i0 + 1, n - 1);
        t = pos - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double ty;
        axis((static_cast<double>(y) + 0.5) * sy - 0.5, src.height, y0, y1, ty);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double tx;
            axis((static_cast<double>(x) + 0.5) * sx - 0.5, src.width, x0, x1, tx);
            const double top = src.at(y0, x0) * (1.0 - tx) + src.at(y0, x1) * tx;
            const double bottom = src.at(y1, x0) * (1.0 - tx) + src.at(y1, x1) * tx;
            out.at(y, x) = static_cast<float>(top * (1.0 - ty) + bottom * ty);
        }
    }
    return out;
}

/// Optional horizontal flip, then a (size - margin)^2 crop at the drawn
/// offset, resized back to output_size^2.
inline Frame apply_view(const Frame& image, const ViewParams& v, const AugmentConfig& cfg)
{
    if (image.height != cfg.output_size || image.width != cfg.output_size) {
        throw ShapeError("augment expects " + std::to_string(cfg.output_size) + "x" +
                         std::to_string(cfg.output_size) + " frames");
    }
    const std::size_t crop = cfg.output_size - cfg.crop_margin;
    Frame cropped(crop, crop);
    for (std::size_t y = 0; y < crop; ++y) {
        for (std::size_t x = 0; x < crop; ++x) {
            const std::size_t sx = x + v.offset_x;
            cropped.at(y, x) = image.at(y + v.offset_y, v.flip ? image.width - 1 - sx : sx);
        }
    }
    return resize_bilinear(cropped, cfg.output_size, cfg.output_size);
}

inline Frame augment_view(const Frame& image, const AugmentConfig& cfg, Rng& rng)
{
    return apply_view(image, draw_view(cfg, rng), cfg);
}

/// Two independently augmented views of the same frame.
inline std::pair<Frame, Frame> augment_pair(const Frame& image, const AugmentConfig& cfg, Rng& rng)
{
    cfg.validate();
    Frame a = augment_view(image, cfg, rng);
    Frame b = augment_view(image, cfg, rng);
    return {std::move(a), std::move(b)};
}

/// Cosine similarity; 0 (with a warning) when either vector is all zeros.
inline double cosine_sim(std::span<const float> u, std::span<const float> v)
{
    if (u.size() != v.size()) {
        throw ShapeError("cosine_sim: vectors differ in length");
    }
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uv += static_cast<double>(u[i]) * v[i];
        uu += static_cast<double>(u[i]) * u[i];
        vv += static_cast<double>(v[i]) * v[i];
    }
    if (uu == 0.0 || vv == 0.0) {
        log::warn("cosine_sim: zero vector, similarity defined as 0");
        return 0.0;
    }
    return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

struct NtXentResult {
    double loss = 0.0;
    std::vector<float> grad; // dL/dZ, same layout as Z
};

/// NT-Xent over 2N rows of Z, where rows (2k, 2k+1) are the positive pairs.
/// The loss is the mean over all 2N anchors of
///   -log( exp(s_ip / tau) / sum_{k != i} exp(s_ik / tau) ),
/// s = cosine similarity. Computed in double precision.
inline NtXentResult nt_xent_loss(std::span<const float> z, std::size_t rows, std::size_t dim, double tau)
{
    if (!(tau > 0.0)) {
        throw ConfigError("nt_xent_loss: temperature must be > 0");
    }
    if (rows < 2 || rows % 2 != 0 || z.size() != rows * dim || dim == 0) {
        throw ShapeError("nt_xent_loss: expected 2N x D projections with N >= 1");
    }
    // Unit vectors; a zero row stays zero (all its similarities are 0).
    std::vector<double> u(rows * dim), norm(rows);
    bool warned = false;
    for (std::size_t i = 0; i < rows; ++i) {
        double sq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            sq += static_cast<double>(z[i * dim + d]) * z[i * dim + d];
        }
        norm[i] = std::sqrt(sq);
        if (norm[i] == 0.0) {
            if (!warned) {
                log::warn("nt_xent_loss: zero projection vector, similarities defined as 0");
                warned = true;
            }
            continue;
        }
        for (std::size_t d = 0; d < dim; ++d) {
            u[i * dim + d] = z[i * dim + d] / norm[i];
        }
    }
    std::vector<double> s(rows * rows);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t k = i; k < rows; ++k) {
            double dot = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                dot += u[i * dim + d] * u[k * dim + d];
            }
            s[i * rows + k] = s[k * rows + i] = dot / tau;
        }
    }

    // g[i][k] = dL/ds_ik = (softmax_{k != i}(s_i.) - [k == partner]) / 2N
    const double inv_anchors = 1.0 / static_cast<double>(rows);
    std::vector<double> g(rows * rows, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const std::size_t partner = i ^ 1u;
        double m = -INFINITY;
        for (std::size_t k = 0; k < rows; ++k) {
            if (k != i) {
                m = std::max(m, s[i * rows + k]);
            }
        }
        double denom = 0.0;
        for (std::size_t k = 0; k < rows; ++k) {
            if (k != i) {
                denom += std::exp(s[i * rows + k] - m);
            }
        }
        loss += -(s[i * rows + partner] - m) + std::log(denom);
        for (std::size_t k = 0; k < rows; ++k) {
            if (k != i) {
                const double p = std::exp(s[i * rows + k] - m) / denom;
                g[i * rows + k] = (p - (k == partner ? 1.0 : 0.0)) * inv_anchors;
            }
        }
    }

    NtXentResult result;
    result.loss = loss * inv_anchors;
    result.grad.assign(rows * dim, 0.0f);
    std::vector<double> du(dim);
    for (std::size_t i = 0; i < rows; ++i) {
        if (norm[i] == 0.0) {
            continue;
        }
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t k = 0; k < rows; ++k) {
            const double c = (g[i * rows + k] + g[k * rows + i]) / tau;
            if (c == 0.0) {
                continue;
            }
            for (std::size_t d = 0; d < dim; ++d) {
                du[d] += c * u[k * dim + d];
            }
        }
        double proj = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            proj += du[d] * u[i * dim + d];
        }
        for (std::size_t d = 0; d < dim; ++d) {
            result.grad[i * dim + d] = static_cast<float>((du[d] - proj * u[i * dim + d]) / norm[i]);
        }
    }
    if (!std::isfinite(result.loss)) {
        throw NumericError("nt_xent_loss: non-finite loss");
    }
    return result;
}

inline NtXentResult nt_xent_loss(const Tensor& z, double tau)
{
    if (z.rank() != 2) {
        throw ShapeError("nt_xent_loss: expected [2N, D], got " + shape_string(z.dims()));
    }
    return nt_xent_loss(z.data(), z.dim(0), z.dim(1), tau);
}

} // namespace viewret
