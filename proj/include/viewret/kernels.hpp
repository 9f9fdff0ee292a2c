#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "viewret/tensor.hpp"

// Low-level float kernels shared by the layers. Everything here works on raw
// row-major buffers; shape validation happens in layers.hpp.
namespace viewret::kernels {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline constexpr std::size_t lanes = 16;

// acc layout: [row][out][lane], row stride = out_count * lanes.
template <int Rows, int Outs>
inline void dot_block(const float* __restrict x, std::size_t ldx, const float* __restrict w, std::size_t ldw,
                      std::size_t k0, std::size_t k1, float* __restrict acc, std::size_t out_count)
{
    float a[Rows][Outs][lanes];
    for (int r = 0; r < Rows; ++r) {
        for (int o = 0; o < Outs; ++o) {
            for (std::size_t l = 0; l < lanes; ++l) {
                a[r][o][l] = acc[(r * out_count + o) * lanes + l];
            }
        }
    }
    for (std::size_t k = k0; k < k1; k += lanes) {
        for (int r = 0; r < Rows; ++r) {
            for (int o = 0; o < Outs; ++o) {
                const float* xr = x + r * ldx + k;
                const float* wr = w + o * ldw + k;
                for (std::size_t l = 0; l < lanes; ++l) {
                    a[r][o][l] = std::fma(xr[l], wr[l], a[r][o][l]);
                }
            }
        }
    }
    for (int r = 0; r < Rows; ++r) {
        for (int o = 0; o < Outs; ++o) {
            for (std::size_t l = 0; l < lanes; ++l) {
                acc[(r * out_count + o) * lanes + l] = a[r][o][l];
            }
        }
    }
}

} // namespace detail

/// y[b,o] = bias[o] + dot(x[b,:], w[o,:]) for x [rows x k], w [outs x k].
///
/// Every output element goes through the same arithmetic (16 strided partial
/// sums in ascending k, a fixed pairwise lane reduction, then the scalar tail),
/// so a row's result does not depend on its position in the batch or on the
/// batch size. Scores of retrieval candidates therefore do not change when the
/// candidate list is reordered.
inline void linear_forward(const float* x, std::size_t rows, const float* w, std::size_t outs, std::size_t k,
                           const float* bias, float* y)
{
    using detail::lanes;
    std::vector<float, AlignedAllocator<float>> acc(rows * outs * lanes, 0.0f);
    const std::size_t kv = k / lanes * lanes;
    constexpr std::size_t kc = 1024;
    for (std::size_t k0 = 0; k0 < kv; k0 += kc) {
        const std::size_t k1 = std::min(kv, k0 + kc);
        std::size_t o = 0;
        for (; o + 4 <= outs; o += 4) {
            std::size_t b = 0;
            for (; b + 4 <= rows; b += 4) {
                detail::dot_block<4, 4>(x + b * k, k, w + o * k, k, k0, k1, &acc[(b * outs + o) * lanes], outs);
            }
            for (; b < rows; ++b) {
                detail::dot_block<1, 4>(x + b * k, k, w + o * k, k, k0, k1, &acc[(b * outs + o) * lanes], outs);
            }
        }
        for (; o < outs; ++o) {
            for (std::size_t b = 0; b < rows; ++b) {
                detail::dot_block<1, 1>(x + b * k, k, w + o * k, k, k0, k1, &acc[(b * outs + o) * lanes], outs);
            }
        }
    }
    for (std::size_t b = 0; b < rows; ++b) {
        for (std::size_t o = 0; o < outs; ++o) {
            float* a = &acc[(b * outs + o) * lanes];
            for (std::size_t span = lanes / 2; span > 0; span /= 2) {
                for (std::size_t l = 0; l < span; ++l) {
                    a[l] += a[l + span];
                }
            }
            float total = a[0];
            for (std::size_t kk = kv; kk < k; ++kk) {
                total = std::fma(x[b * k + kk], w[o * k + kk], total);
            }
            y[b * outs + o] = total + (bias ? bias[o] : 0.0f);
        }
    }
}

/// dw[outs x k] += dy[rows x outs]^T * x[rows x k]
inline void accumulate_weight_grad(const float* dy, std::size_t rows, const float* x, std::size_t outs,
                                   std::size_t k, float* dw)
{
    ConstMatMap dym(dy, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(outs));
    ConstMatMap xm(x, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    MatMap dwm(dw, static_cast<Eigen::Index>(outs), static_cast<Eigen::Index>(k));
    dwm.noalias() += dym.transpose() * xm;
}

/// dx[rows x k] += dy[rows x outs] * w[outs x k]
inline void accumulate_input_grad(const float* dy, std::size_t rows, const float* w, std::size_t outs,
                                  std::size_t k, float* dx)
{
    ConstMatMap dym(dy, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(outs));
    ConstMatMap wm(w, static_cast<Eigen::Index>(outs), static_cast<Eigen::Index>(k));
    MatMap dxm(dx, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    dxm.noalias() += dym * wm;
}

/// Unfolds a zero-padded (pad 1) 3x3 neighbourhood of every pixel:
/// col[(c*9 + ky*3 + kx), y*width + x] = in[c, y+ky-1, x+kx-1].
inline void im2col3x3(const float* in, std::size_t channels, std::size_t height, std::size_t width, float* col)
{
    const std::size_t hw = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        const float* plane = in + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                float* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    float* dst = row + y * width;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + width, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(sy) * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) ? 0.0f
                                                                                         : src[sx];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col3x3: scatters column gradients back onto the image.
inline void col2im3x3(const float* col, std::size_t channels, std::size_t height, std::size_t width, float* out)
{
    const std::size_t hw = height * width;
    for (std::size_t c = 0; c < channels; ++c) {
        float* plane = out + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const float* row = col + ((c * 3 + ky) * 3 + kx) * hw;
                for (std::size_t y = 0; y < height; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    float* dst = plane + static_cast<std::size_t>(sy) * width;
                    const float* src = row + y * width;
                    for (std::size_t x = 0; x < width; ++x) {
                        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
                        if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(width)) {
                            dst[sx] += src[x];
                        }
                    }
                }
            }
        }
    }
}

} // namespace viewret::kernels
