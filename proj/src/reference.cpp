#include "carunet/kernels.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {
namespace reference {

using Index = std::ptrdiff_t;

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y) {
  const Index N = g.batch, Ci = g.in_channels, H = g.in_h, W = g.in_w, Co = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index OH = g.out_h(), OW = g.out_w();
  for (Index n = 0; n < N; ++n)
    for (Index co = 0; co < Co; ++co)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox) {
          Real acc = bias.empty() ? Real(0) : bias[co];
          for (Index ci = 0; ci < Ci; ++ci)
            for (Index ky = 0; ky < KH; ++ky)
              for (Index kx = 0; kx < KW; ++kx) {
                const Index iy = oy * S + ky - P;
                const Index ix = ox * S + kx - P;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w[((co * Ci + ci) * KH + ky) * KW + kx] * x[((n * Ci + ci) * H + iy) * W + ix];
              }
          y[((n * Co + co) * OH + oy) * OW + ox] = acc;
        }
}

void conv_transpose2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                              std::span<const Real> bias, std::span<Real> y) {
  // Here x lives in the conv's output space and y in its input space.
  const Index N = g.batch, Co = g.in_channels, H = g.in_h, W = g.in_w, Ci = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index IH = g.out_h(), IW = g.out_w();
  for (Index n = 0; n < N; ++n)
    for (Index co = 0; co < Co; ++co)
      for (Index i = 0; i < H * W; ++i) y[(n * Co + co) * H * W + i] = bias.empty() ? Real(0) : bias[co];
  for (Index n = 0; n < N; ++n)
    for (Index ci = 0; ci < Ci; ++ci)
      for (Index ky = 0; ky < KH; ++ky)
        for (Index kx = 0; kx < KW; ++kx)
          for (Index iy = 0; iy < IH; ++iy)
            for (Index ix = 0; ix < IW; ++ix) {
              const Index oy = iy * S + ky - P;
              const Index ox = ix * S + kx - P;
              if (oy < 0 || oy >= H || ox < 0 || ox >= W) continue;
              const Real v = x[((n * Ci + ci) * IH + iy) * IW + ix];
              for (Index co = 0; co < Co; ++co)
                y[((n * Co + co) * H + oy) * W + ox] += v * w[((ci * Co + co) * KH + ky) * KW + kx];
            }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dw, std::span<Real> db) {
  const Index N = g.batch, Ci = g.in_channels, H = g.in_h, W = g.in_w, Co = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index OH = g.out_h(), OW = g.out_w();
  for (Index co = 0; co < Co; ++co) {
    for (Index ci = 0; ci < Ci; ++ci)
      for (Index ky = 0; ky < KH; ++ky)
        for (Index kx = 0; kx < KW; ++kx) {
          Real acc = 0;
          for (Index n = 0; n < N; ++n)
            for (Index oy = 0; oy < OH; ++oy)
              for (Index ox = 0; ox < OW; ++ox) {
                const Index iy = oy * S + ky - P;
                const Index ix = ox * S + kx - P;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += dy[((n * Co + co) * OH + oy) * OW + ox] * x[((n * Ci + ci) * H + iy) * W + ix];
              }
          dw[((co * Ci + ci) * KH + ky) * KW + kx] = acc;
        }
    if (!db.empty()) {
      Real acc = 0;
      for (Index n = 0; n < N; ++n)
        for (Index i = 0; i < OH * OW; ++i) acc += dy[(n * Co + co) * OH * OW + i];
      db[co] = acc;
    }
  }
}

void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> x,
                        std::span<Real> y, std::span<std::size_t> argmax) {
  const std::size_t oh = h / 2, ow = w / 2;
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = 2 * oy * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (x[p * h * w + idx] > x[p * h * w + best]) best = idx;
          }
        y[p * oh * ow + oy * ow + ox] = x[p * h * w + best];
        argmax[p * oh * ow + oy * ow + ox] = best;
      }
}

void conv1d3_forward(std::size_t batch, std::size_t channels, std::span<const Real> in,
                     std::span<const Real> kernel, std::span<Real> out) {
  const Index C = channels;
  for (std::size_t n = 0; n < batch; ++n)
    for (Index c = 0; c < C; ++c) {
      Real acc = 0;
      for (Index j = -1; j <= 1; ++j) {
        const Index src = c + j;
        if (src < 0 || src >= C) continue;
        acc += kernel[j + 1] * in[n * C + src];
      }
      out[n * C + c] = acc;
    }
}

}  // namespace reference
}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
