#include "carunet/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

using Index = std::ptrdiff_t;

// Output positions o in [lo, hi) whose input coordinate o*stride + k - pad
// falls inside [0, extent).
struct Span1d {
  Index lo;
  Index hi;
};

Span1d valid_outputs(Index extent, Index out_extent, Index k, Index stride, Index pad) {
  const Index shift = pad - k;
  const Index lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const Index top = extent - 1 + shift;
  if (top < 0) return {0, 0};
  const Index hi = std::min(out_extent, top / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

namespace kernels {

void conv2d_forward(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> w,
                    std::span<const Real> bias, std::span<Real> y) {
  const Index N = g.batch, Ci = g.in_channels, H = g.in_h, W = g.in_w, Co = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index OH = g.out_h(), OW = g.out_w();
  const Real* xp = x.data();
  const Real* wp = w.data();
  Real* yp = y.data();
  const bool has_bias = !bias.empty();

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < N; ++n) {
    for (Index co = 0; co < Co; ++co) {
      const Real b = has_bias ? bias[co] : Real(0);
      Real* yplane = yp + (n * Co + co) * OH * OW;
      for (Index oy = 0; oy < OH; ++oy) {
        Real* yrow = yplane + oy * OW;
        std::fill(yrow, yrow + OW, b);
        for (Index ci = 0; ci < Ci; ++ci) {
          const Real* xplane = xp + (n * Ci + ci) * H * W;
          const Real* wk = wp + (co * Ci + ci) * KH * KW;
          for (Index ky = 0; ky < KH; ++ky) {
            const Index iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            const Real* xrow = xplane + iy * W;
            for (Index kx = 0; kx < KW; ++kx) {
              const Real wv = wk[ky * KW + kx];
              const Span1d r = valid_outputs(W, OW, kx, S, P);
              if (S == 1) {
                const Real* src = xrow + (r.lo + kx - P);
                Real* dst = yrow + r.lo;
                const Index len = r.hi - r.lo;
#pragma omp simd
                for (Index i = 0; i < len; ++i) dst[i] += wv * src[i];
              } else {
                for (Index ox = r.lo; ox < r.hi; ++ox) yrow[ox] += wv * xrow[ox * S + kx - P];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const Real> w, std::span<const Real> dy,
                           std::span<const Real> init, std::span<Real> dx) {
  const Index N = g.batch, Ci = g.in_channels, H = g.in_h, W = g.in_w, Co = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index OH = g.out_h(), OW = g.out_w();
  const Real* wp = w.data();
  const Real* dyp = dy.data();
  Real* dxp = dx.data();
  const bool has_init = !init.empty();

#pragma omp parallel for collapse(2) schedule(static)
  for (Index n = 0; n < N; ++n) {
    for (Index ci = 0; ci < Ci; ++ci) {
      const Real start = has_init ? init[ci] : Real(0);
      Real* dxplane = dxp + (n * Ci + ci) * H * W;
      for (Index iy = 0; iy < H; ++iy) {
        Real* dxrow = dxplane + iy * W;
        std::fill(dxrow, dxrow + W, start);
        for (Index co = 0; co < Co; ++co) {
          const Real* dyplane = dyp + (n * Co + co) * OH * OW;
          const Real* wk = wp + (co * Ci + ci) * KH * KW;
          for (Index ky = 0; ky < KH; ++ky) {
            const Index t = iy + P - ky;
            if (t < 0 || t % S != 0) continue;
            const Index oy = t / S;
            if (oy >= OH) continue;
            const Real* dyrow = dyplane + oy * OW;
            for (Index kx = 0; kx < KW; ++kx) {
              const Real wv = wk[ky * KW + kx];
              const Span1d r = valid_outputs(W, OW, kx, S, P);
              if (S == 1) {
                Real* dst = dxrow + (r.lo + kx - P);
                const Real* src = dyrow + r.lo;
                const Index len = r.hi - r.lo;
#pragma omp simd
                for (Index i = 0; i < len; ++i) dst[i] += wv * src[i];
              } else {
                for (Index ox = r.lo; ox < r.hi; ++ox) dxrow[ox * S + kx - P] += wv * dyrow[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dw, std::span<Real> db) {
  const Index N = g.batch, Ci = g.in_channels, H = g.in_h, W = g.in_w, Co = g.out_channels;
  const Index KH = g.kernel_h, KW = g.kernel_w, S = g.stride, P = g.padding;
  const Index OH = g.out_h(), OW = g.out_w();
  const Real* xp = x.data();
  const Real* dyp = dy.data();
  Real* dwp = dw.data();
  const bool has_bias = !db.empty();

#pragma omp parallel for schedule(static)
  for (Index co = 0; co < Co; ++co) {
    Real* dwk = dwp + co * Ci * KH * KW;
    std::fill(dwk, dwk + Ci * KH * KW, Real(0));
    Real bsum = 0;
    for (Index n = 0; n < N; ++n) {
      const Real* dyplane = dyp + (n * Co + co) * OH * OW;
      for (Index oy = 0; oy < OH; ++oy) {
        const Real* dyrow = dyplane + oy * OW;
        if (has_bias) {
          for (Index ox = 0; ox < OW; ++ox) bsum += dyrow[ox];
        }
        for (Index ci = 0; ci < Ci; ++ci) {
          const Real* xplane = xp + (n * Ci + ci) * H * W;
          for (Index ky = 0; ky < KH; ++ky) {
            const Index iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            const Real* xrow = xplane + iy * W;
            for (Index kx = 0; kx < KW; ++kx) {
              const Span1d r = valid_outputs(W, OW, kx, S, P);
              Real acc = 0;
              if (S == 1) {
                const Real* src = xrow + (r.lo + kx - P);
                const Real* gy = dyrow + r.lo;
                const Index len = r.hi - r.lo;
#pragma omp simd reduction(+ : acc)
                for (Index i = 0; i < len; ++i) acc += gy[i] * src[i];
              } else {
                for (Index ox = r.lo; ox < r.hi; ++ox) acc += dyrow[ox] * xrow[ox * S + kx - P];
              }
              dwk[(ci * KH + ky) * KW + kx] += acc;
            }
          }
        }
      }
    }
    if (has_bias) db[co] = bsum;
  }
}

void maxpool2x2_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> x,
                        std::span<Real> y, std::span<std::size_t> argmax) {
  const Index P = planes, H = h, W = w, OH = H / 2, OW = W / 2;
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < P; ++p) {
    const Real* xp = x.data() + p * H * W;
    Real* yp = y.data() + p * OH * OW;
    std::size_t* ap = argmax.data() + p * OH * OW;
    for (Index oy = 0; oy < OH; ++oy) {
      for (Index ox = 0; ox < OW; ++ox) {
        Index best = (2 * oy) * W + 2 * ox;
        const Index cand[3] = {best + 1, best + W, best + W + 1};
        for (Index c : cand) {
          if (xp[c] > xp[best]) best = c;
        }
        yp[oy * OW + ox] = xp[best];
        ap[oy * OW + ox] = static_cast<std::size_t>(best);
      }
    }
  }
}

void maxpool2x2_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const Real> dy,
                         std::span<const std::size_t> argmax, std::span<Real> dx) {
  const Index P = planes, H = h, W = w, OHW = (H / 2) * (W / 2);
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < P; ++p) {
    Real* dxp = dx.data() + p * H * W;
    std::fill(dxp, dxp + H * W, Real(0));
    for (Index i = 0; i < OHW; ++i) dxp[argmax[p * OHW + i]] += dy[p * OHW + i];
  }
}

void channel_moments(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const Real> x,
                     std::span<Real> mean, std::span<Real> var) {
  const Index N = batch, C = channels, M = plane;
  const Real count = static_cast<Real>(batch * plane);
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < C; ++c) {
    Real sum = 0;
    for (Index n = 0; n < N; ++n) {
      const Real* p = x.data() + (n * C + c) * M;
      for (Index i = 0; i < M; ++i) sum += p[i];
    }
    const Real mu = sum / count;
    Real sq = 0;
    for (Index n = 0; n < N; ++n) {
      const Real* p = x.data() + (n * C + c) * M;
      for (Index i = 0; i < M; ++i) {
        const Real d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[c] = mu;
    var[c] = sq / count;
  }
}

}  // namespace kernels

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
