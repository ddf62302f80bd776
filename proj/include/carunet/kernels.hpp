#pragma once

// Raw compute kernels behind the differentiable ops.
//
// kernels:: are the production versions, parallelised with OpenMP over
// independent output planes. No kernel reduces across threads, so results do
// not depend on the thread count. reference:: holds plain serial loops kept
// as test oracles and benchmark baselines; for conv2d, the transposed conv
// and the pooling ops, both sides accumulate in the same order and must
// agree bit-for-bit.

#include <cstddef>
#include <span>

#include "carunet/precision.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

/// Cross-correlation geometry: input [batch, in_channels, in_h, in_w],
/// weight [out_channels, in_channels, kernel_h, kernel_w].
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

namespace kernels {

/// y = conv(x, w) + b. `bias` may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y);

/// dx = conv2d adjoint applied to dy. Each dx channel starts at init[c]
/// (or 0 when `init` is empty); this doubles as the transposed-conv forward.
void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> w, std::span<const Real> dy,
                           std::span<const Real> init, std::span<Real> dx);

/// dw and (optionally) db from x and dy. Overwrites the outputs.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dw, std::span<Real> db);

/// 2x2 / stride 2 max pooling over [planes, h, w]. argmax holds the
/// in-plane flat index of the winner; ties go to the first in row-major order.
void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> x,
                        std::span<Real> y, std::span<std::size_t> argmax);

void maxpool2x2_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> dy,
                         std::span<const std::size_t> argmax, std::span<Real> dx);

/// Per-channel mean and biased variance of x [batch, channels, plane].
void channel_moments(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const Real> x,
                     std::span<Real> mean, std::span<Real> var);

}  // namespace kernels

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y);

/// Scatter-add transposed convolution. x [batch, g.out_channels, out_h, out_w]
/// is spread into y [batch, g.in_channels, in_h, in_w] through w laid out as
/// [g.out_channels, g.in_channels, kh, kw]; y starts at bias (or 0).
void conv_transpose2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                              std::span<const Real> bias, std::span<Real> y);

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dw, std::span<Real> db);

void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> x,
                        std::span<Real> y, std::span<std::size_t> argmax);

/// out[n,c] = k0*in[n,c-1] + k1*in[n,c] + k2*in[n,c+1], zero-padded ends.
void conv1d3_forward(std::size_t batch, std::size_t channels, std::span<const Real> in,
                     std::span<const Real> kernel, std::span<Real> out);

}  // namespace reference

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
