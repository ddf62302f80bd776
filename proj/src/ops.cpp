#include "carunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "carunet/kernels.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

using Index = std::ptrdiff_t;

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
  if (!t.defined()) fail(ErrorKind::shape, std::string(op) + ": undefined input");
  if (t.shape().rank() != rank) {
    fail(ErrorKind::shape, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + t.shape().str());
  }
}

Tensor finish(std::string_view op, Tensor out) {
  check_finite(op, out.data());
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  const Index n = o.size();
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < n; ++i) o[i] = x[i] + y[i];
  if (should_record({&a, &b})) {
    record("add", {&a, &b}, out, [a, b](std::span<const Real> g) mutable {
      for (const Tensor* t : {&a, &b}) {
        accumulate_grad(*t, [&](std::span<Real> d) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        });
      }
    });
  }
  return finish("add", out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (should_record({&a, &b})) {
    record("sub", {&a, &b}, out, [a, b](std::span<const Real> g) mutable {
      accumulate_grad(a, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      });
      accumulate_grad(b, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
      });
    });
  }
  return finish("sub", out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (should_record({&a, &b})) {
    record("mul", {&a, &b}, out, [a, b](std::span<const Real> g) mutable {
      auto x = a.data(), y = b.data();
      accumulate_grad(a, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
      });
      accumulate_grad(b, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
      });
    });
  }
  return finish("mul", out);
}

Tensor scale(const Tensor& a, Real factor) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (should_record({&a})) {
    record("scale", {&a}, out, [a, factor](std::span<const Real> g) mutable {
      accumulate_grad(a, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
      });
    });
  }
  return finish("scale", out);
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (should_record({&a})) {
    record("sum", {&a}, out, [a](std::span<const Real> g) mutable {
      accumulate_grad(a, [&](std::span<Real> d) {
        for (Real& v : d) v += g[0];
      });
    });
  }
  return finish("sum", out);
}

Tensor mean(const Tensor& a) {
  const Real inv = Real(1) / static_cast<Real>(a.numel());
  Real total = 0;
  for (Real v : a.data()) total += v;
  Tensor out = Tensor::scalar(total * inv);
  if (should_record({&a})) {
    record("mean", {&a}, out, [a, inv](std::span<const Real> g) mutable {
      accumulate_grad(a, [&](std::span<Real> d) {
        for (Real& v : d) v += g[0] * inv;
      });
    });
  }
  return finish("mean", out);
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  const Index n = o.size();
#pragma omp parallel for simd schedule(static)
  for (Index i = 0; i < n; ++i) o[i] = in[i] > Real(0) ? in[i] : Real(0);
  if (BranchTrace* trace = active_branch_trace()) {
    for (Real v : in) trace->add(v > Real(0));
  }
  if (should_record({&x})) {
    record("relu", {&x}, out, [x](std::span<const Real> g) mutable {
      auto in = x.data();
      accumulate_grad(x, [&](std::span<Real> d) {
        const Index n = d.size();
#pragma omp parallel for simd schedule(static)
        for (Index i = 0; i < n; ++i) d[i] += in[i] > Real(0) ? g[i] : Real(0);
      });
    });
  }
  return finish("relu", out);
}

Tensor sigmoid(const Tensor& x) {
  constexpr Real lo = std::numeric_limits<Real>::min();
  const Real hi = std::nextafter(Real(1), Real(0));
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  const Index n = o.size();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    const Real v = in[i];
    Real s;
    if (v >= 0) {
      s = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      s = e / (Real(1) + e);
    }
    o[i] = std::clamp(s, lo, hi);
  }
  if (BranchTrace* trace = active_branch_trace()) {
    for (Real v : o) trace->add(v == lo ? 1 : v == hi ? 2 : 0);
  }
  if (should_record({&x})) {
    record("sigmoid", {&x}, out, [x, out](std::span<const Real> g) mutable {
      auto y = out.data();
      accumulate_grad(x, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (Real(1) - y[i]);
      });
    });
  }
  return finish("sigmoid", out);
}

namespace {

ConvGeometry conv_geometry(std::string_view op, const Tensor& x, const Tensor& weight, std::size_t stride,
                           std::size_t padding) {
  require_rank(op, x, 4);
  require_rank(op, weight, 4);
  if (stride == 0) fail(ErrorKind::shape, std::string(op) + ": stride must be positive");
  ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (weight.dim(1) != g.in_channels) {
    fail(ErrorKind::shape, std::string(op) + ": input has " + std::to_string(g.in_channels) +
                               " channels but weight " + weight.shape().str() + " expects " +
                               std::to_string(weight.dim(1)));
  }
  const std::size_t ph = g.in_h + 2 * padding, pw = g.in_w + 2 * padding;
  if (ph < g.kernel_h || pw < g.kernel_w) {
    fail(ErrorKind::shape, std::string(op) + ": padded input " + x.shape().str() + " smaller than kernel " +
                               weight.shape().str());
  }
  if ((ph - g.kernel_h) % stride != 0 || (pw - g.kernel_w) % stride != 0) {
    fail(ErrorKind::shape, std::string(op) + ": output size not integral for input " + x.shape().str() +
                               ", kernel " + weight.shape().str() + ", stride " + std::to_string(stride) +
                               ", padding " + std::to_string(padding));
  }
  return g;
}

void check_bias(std::string_view op, const Tensor& bias, std::size_t channels) {
  if (bias.defined() && (bias.shape().rank() != 1 || bias.dim(0) != channels)) {
    fail(ErrorKind::shape, std::string(op) + ": bias " + bias.shape().str() + " does not match " +
                               std::to_string(channels) + " output channels");
  }
}

std::span<const Real> data_or_empty(const Tensor& t) { return t.defined() ? t.data() : std::span<const Real>{}; }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry("conv2d", x, weight, stride, padding);
  check_bias("conv2d", bias, g.out_channels);
  Tensor out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.data(), weight.data(), data_or_empty(bias), out.data());

  const bool has_bias = bias.defined();
  if (has_bias ? should_record({&x, &weight, &bias}) : should_record({&x, &weight})) {
    auto body = [x, weight, bias, g](std::span<const Real> gy) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        std::vector<Real> dx(g.input_size());
        kernels::conv2d_backward_input(g, weight.data(), gy, {}, dx);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
      });
      const bool want_w = weight.requires_grad();
      const bool want_b = bias.defined() && bias.requires_grad();
      if (want_w || want_b) {
        std::vector<Real> dw(g.weight_size());
        std::vector<Real> db(want_b ? g.out_channels : 0);
        kernels::conv2d_backward_weight(g, x.data(), gy, dw, db);
        accumulate_grad(weight, [&](std::span<Real> d) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += dw[i];
        });
        if (want_b) {
          accumulate_grad(bias, [&](std::span<Real> d) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += db[i];
          });
        }
      }
    };
    if (has_bias) {
      record("conv2d", {&x, &weight, &bias}, out, body);
    } else {
      record("conv2d", {&x, &weight}, out, body);
    }
  }
  return finish("conv2d", out);
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                        std::size_t padding) {
  require_rank("conv_transpose2d", x, 4);
  require_rank("conv_transpose2d", weight, 4);
  if (stride == 0) fail(ErrorKind::shape, "conv_transpose2d: stride must be positive");
  if (weight.dim(0) != x.dim(1)) {
    fail(ErrorKind::shape, "conv_transpose2d: input has " + std::to_string(x.dim(1)) + " channels but weight " +
                               weight.shape().str() + " expects " + std::to_string(weight.dim(0)));
  }
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t full_h = (x.dim(2) - 1) * stride + kh, full_w = (x.dim(3) - 1) * stride + kw;
  if (full_h <= 2 * padding || full_w <= 2 * padding) fail(ErrorKind::shape, "conv_transpose2d: padding too large");
  // The transposed conv is the adjoint of a conv from the output space back
  // to the input space.
  ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = weight.dim(1);
  g.in_h = full_h - 2 * padding;
  g.in_w = full_w - 2 * padding;
  g.out_channels = weight.dim(0);
  g.kernel_h = kh;
  g.kernel_w = kw;
  g.stride = stride;
  g.padding = padding;
  check_bias("conv_transpose2d", bias, g.in_channels);

  Tensor out(Shape{g.batch, g.in_channels, g.in_h, g.in_w});
  kernels::conv2d_backward_input(g, weight.data(), x.data(), data_or_empty(bias), out.data());

  const bool has_bias = bias.defined();
  if (has_bias ? should_record({&x, &weight, &bias}) : should_record({&x, &weight})) {
    auto body = [x, weight, bias, g](std::span<const Real> gy) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        std::vector<Real> dx(g.output_size());
        kernels::conv2d_forward(g, gy, weight.data(), {}, dx);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
      });
      accumulate_grad(weight, [&](std::span<Real> d) {
        std::vector<Real> dw(g.weight_size());
        kernels::conv2d_backward_weight(g, gy, x.data(), dw, {});
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dw[i];
      });
      if (bias.defined()) {
        accumulate_grad(bias, [&](std::span<Real> d) {
          const std::size_t plane = g.in_h * g.in_w;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t c = 0; c < g.in_channels; ++c) {
              const Real* p = gy.data() + (n * g.in_channels + c) * plane;
              Real acc = 0;
              for (std::size_t i = 0; i < plane; ++i) acc += p[i];
              d[c] += acc;
            }
        });
      }
    };
    if (has_bias) {
      record("conv_transpose2d", {&x, &weight, &bias}, out, body);
    } else {
      record("conv_transpose2d", {&x, &weight}, out, body);
    }
  }
  return finish("conv_transpose2d", out);
}

PoolResult maxpool2d_2x2(const Tensor& x) {
  require_rank("maxpool2d_2x2", x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    fail(ErrorKind::shape, "maxpool2d_2x2: spatial dims must be even, got " + x.shape().str());
  }
  PoolResult r{Tensor(Shape{n, c, h / 2, w / 2}), std::vector<std::size_t>(n * c * (h / 2) * (w / 2))};
  kernels::maxpool2x2_forward(n * c, h, w, x.data(), r.output.data(), r.argmax);
  if (BranchTrace* trace = active_branch_trace()) {
    for (std::size_t a : r.argmax) trace->add(a);
  }
  if (should_record({&x})) {
    record("maxpool2d_2x2", {&x}, r.output, [x, argmax = r.argmax, n, c, h, w](std::span<const Real> g) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        std::vector<Real> dx(d.size());
        kernels::maxpool2x2_backward(n * c, h, w, g, argmax, dx);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dx[i];
      });
    });
  }
  return r;
}

BatchNormState BatchNormState::make(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::full(Shape{channels}, Real(1), true);
  s.beta = Tensor::zeros(Shape{channels}, true);
  s.running_mean = Tensor::zeros(Shape{channels});
  s.running_var = Tensor::full(Shape{channels}, Real(1));
  return s;
}

Tensor batchnorm2d(const Tensor& x, BatchNormState& state, Mode mode) {
  require_rank("batchnorm2d", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
  if (state.gamma.numel() != C) {
    fail(ErrorKind::shape, "batchnorm2d: state has " + std::to_string(state.gamma.numel()) + " channels, input " +
                               x.shape().str());
  }
  const std::size_t count = N * M;
  if (mode == Mode::train && count < 2) {
    fail(ErrorKind::shape, "batchnorm2d: train mode needs at least 2 values per channel, input " + x.shape().str());
  }

  std::vector<Real> mu(C), var(C);
  if (mode == Mode::train) {
    kernels::channel_moments(N, C, M, x.data(), mu, var);
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    const Real m = state.momentum;
    const Real unbias = static_cast<Real>(count) / static_cast<Real>(count - 1);
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = (Real(1) - m) * rm[c] + m * mu[c];
      rv[c] = (Real(1) - m) * rv[c] + m * var[c] * unbias;
    }
  } else {
    std::copy(state.running_mean.data().begin(), state.running_mean.data().end(), mu.begin());
    std::copy(state.running_var.data().begin(), state.running_var.data().end(), var.begin());
  }

  std::vector<Real> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = Real(1) / std::sqrt(var[c] + state.epsilon);

  Tensor out(x.shape());
  std::vector<Real> xhat(x.numel());
  {
    auto in = x.data();
    auto o = out.data();
    auto ga = state.gamma.data();
    auto be = state.beta.data();
    const Index planes = N * C;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < planes; ++p) {
      const std::size_t c = static_cast<std::size_t>(p) % C;
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t k = p * M + i;
        xhat[k] = (in[k] - mu[c]) * inv_std[c];
        o[k] = ga[c] * xhat[k] + be[c];
      }
    }
  }

  const Tensor& gamma = state.gamma;
  const Tensor& beta = state.beta;
  if (should_record({&x, &gamma, &beta})) {
    record("batchnorm2d", {&x, &gamma, &beta}, out,
           [x, gamma, beta, xhat = std::move(xhat), inv_std, N, C, M, count,
            train = mode == Mode::train](std::span<const Real> g) mutable {
             std::vector<Real> sum_g(C, 0), sum_gx(C, 0);
             for (std::size_t n = 0; n < N; ++n)
               for (std::size_t c = 0; c < C; ++c) {
                 const std::size_t base = (n * C + c) * M;
                 for (std::size_t i = 0; i < M; ++i) {
                   sum_g[c] += g[base + i];
                   sum_gx[c] += g[base + i] * xhat[base + i];
                 }
               }
             accumulate_grad(gamma, [&](std::span<Real> d) {
               for (std::size_t c = 0; c < C; ++c) d[c] += sum_gx[c];
             });
             accumulate_grad(beta, [&](std::span<Real> d) {
               for (std::size_t c = 0; c < C; ++c) d[c] += sum_g[c];
             });
             accumulate_grad(x, [&](std::span<Real> d) {
               auto ga = gamma.data();
               const Real inv_count = Real(1) / static_cast<Real>(count);
               for (std::size_t n = 0; n < N; ++n)
                 for (std::size_t c = 0; c < C; ++c) {
                   const std::size_t base = (n * C + c) * M;
                   const Real k = ga[c] * inv_std[c];
                   for (std::size_t i = 0; i < M; ++i) {
                     if (train) {
                       d[base + i] += k * (g[base + i] - inv_count * (sum_g[c] + xhat[base + i] * sum_gx[c]));
                     } else {
                       d[base + i] += k * g[base + i];
                     }
                   }
                 }
             });
           });
  }
  return finish("batchnorm2d", out);
}

double dropblock_gamma(const DropBlockConfig& config, std::size_t h, std::size_t w) {
  const double bs = static_cast<double>(config.block_size);
  const double valid = static_cast<double>(h - config.block_size + 1) * static_cast<double>(w - config.block_size + 1);
  return config.drop_rate / (bs * bs) * (static_cast<double>(h) * static_cast<double>(w)) / valid;
}

Tensor dropblock(const Tensor& x, const DropBlockConfig& config, Mode mode, Rng& rng) {
  require_rank("dropblock", x, 4);
  if (mode == Mode::eval || config.drop_rate == 0.0) return x;
  if (config.drop_rate < 0.0 || config.drop_rate >= 1.0) {
    fail(ErrorKind::usage, "dropblock: drop_rate must lie in [0, 1)");
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (config.block_size == 0 || config.block_size % 2 == 0) {
    fail(ErrorKind::usage, "dropblock: block_size must be odd and positive");
  }
  const std::size_t bs = config.block_size;
  if (bs > H || bs > W) {
    fail(ErrorKind::shape, "dropblock: block_size " + std::to_string(bs) + " exceeds feature map " + x.shape().str());
  }
  const double gamma = dropblock_gamma(config, H, W);
  const std::size_t half = bs / 2;

  std::vector<unsigned char> keep(x.numel(), 1);
  for (std::size_t p = 0; p < N * C; ++p) {
    unsigned char* plane = keep.data() + p * H * W;
    for (std::size_t cy = half; cy + half < H; ++cy) {
      for (std::size_t cx = half; cx + half < W; ++cx) {
        if (!rng.bernoulli(gamma)) continue;
        for (std::size_t y = cy - half; y <= cy + half; ++y) {
          std::fill(plane + y * W + cx - half, plane + y * W + cx + half + 1, 0);
        }
      }
    }
  }
  std::size_t ones = 0;
  for (unsigned char k : keep) ones += k;
  const Real factor = ones == 0 ? Real(0) : static_cast<Real>(keep.size()) / static_cast<Real>(ones);

  std::vector<Real> mask(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) mask[i] = keep[i] ? factor : Real(0);

  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * mask[i];
  if (should_record({&x})) {
    record("dropblock", {&x}, out, [x, mask = std::move(mask)](std::span<const Real> g) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * mask[i];
      });
    });
  }
  return finish("dropblock", out);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) fail(ErrorKind::shape, "concat_channels: both operands must be non-empty");
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    fail(ErrorKind::shape, "concat_channels: batch/spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), M = a.dim(2) * a.dim(3);
  Tensor out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
  auto o = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data().data() + n * Ca * M, Ca * M, o.data() + n * (Ca + Cb) * M);
    std::copy_n(b.data().data() + n * Cb * M, Cb * M, o.data() + (n * (Ca + Cb) + Ca) * M);
  }
  if (should_record({&a, &b})) {
    record("concat_channels", {&a, &b}, out, [a, b, N, Ca, Cb, M](std::span<const Real> g) mutable {
      accumulate_grad(a, [&](std::span<Real> d) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < Ca * M; ++i) d[n * Ca * M + i] += g[n * (Ca + Cb) * M + i];
      });
      accumulate_grad(b, [&](std::span<Real> d) {
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t i = 0; i < Cb * M; ++i) d[n * Cb * M + i] += g[(n * (Ca + Cb) + Ca) * M + i];
      });
    });
  }
  return out;
}

Tensor spatial_max_pool(const Tensor& x) {
  require_rank("spatial_max_pool", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
  Tensor out(Shape{N, C});
  std::vector<std::size_t> argmax(N * C);
  auto in = x.data();
  auto o = out.data();
  for (std::size_t p = 0; p < N * C; ++p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < M; ++i) {
      if (in[p * M + i] > in[p * M + best]) best = i;
    }
    argmax[p] = best;
    o[p] = in[p * M + best];
  }
  if (BranchTrace* trace = active_branch_trace()) {
    for (std::size_t a : argmax) trace->add(a);
  }
  if (should_record({&x})) {
    record("spatial_max_pool", {&x}, out, [x, argmax = std::move(argmax), M](std::span<const Real> g) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        for (std::size_t p = 0; p < argmax.size(); ++p) d[p * M + argmax[p]] += g[p];
      });
    });
  }
  return out;
}

Tensor spatial_avg_pool(const Tensor& x) {
  require_rank("spatial_avg_pool", x, 4);
  const std::size_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
  const Real inv = Real(1) / static_cast<Real>(M);
  Tensor out(Shape{N, C});
  auto in = x.data();
  auto o = out.data();
  for (std::size_t p = 0; p < N * C; ++p) {
    Real acc = 0;
    for (std::size_t i = 0; i < M; ++i) acc += in[p * M + i];
    o[p] = acc * inv;
  }
  if (should_record({&x})) {
    record("spatial_avg_pool", {&x}, out, [x, M, inv](std::span<const Real> g) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i / M] * inv;
      });
    });
  }
  return out;
}

Tensor conv1d_shared(const Tensor& v, const Tensor& kernel) {
  if (!kernel.defined() || kernel.shape().rank() != 1 || kernel.dim(0) != 3) {
    fail(ErrorKind::shape, "conv1d_shared: kernel must have exactly 3 taps, got " +
                               (kernel.defined() ? kernel.shape().str() : std::string("undefined")));
  }
  if (!v.defined() || v.shape().rank() > 2) fail(ErrorKind::shape, "conv1d_shared: input must be [C] or [N, C]");
  const std::size_t N = v.shape().rank() == 2 ? v.dim(0) : 1;
  const std::size_t C = v.shape().rank() == 2 ? v.dim(1) : v.dim(0);
  Tensor out(v.shape());
  const Index Ci = C;
  {
    auto in = v.data();
    auto k = kernel.data();
    auto o = out.data();
    for (std::size_t n = 0; n < N; ++n)
      for (Index c = 0; c < Ci; ++c) {
        Real acc = 0;
        for (Index j = -1; j <= 1; ++j) {
          const Index src = c + j;
          if (src < 0 || src >= Ci) continue;
          acc += k[j + 1] * in[n * C + src];
        }
        o[n * C + c] = acc;
      }
  }
  if (should_record({&v, &kernel})) {
    record("conv1d_shared", {&v, &kernel}, out, [v, kernel, N, C](std::span<const Real> g) mutable {
      const Index Ci = C;
      auto in = v.data();
      auto k = kernel.data();
      accumulate_grad(v, [&](std::span<Real> d) {
        for (std::size_t n = 0; n < N; ++n)
          for (Index c = 0; c < Ci; ++c)
            for (Index j = -1; j <= 1; ++j) {
              const Index src = c + j;
              if (src < 0 || src >= Ci) continue;
              d[n * C + src] += k[j + 1] * g[n * C + c];
            }
      });
      accumulate_grad(kernel, [&](std::span<Real> d) {
        for (std::size_t n = 0; n < N; ++n)
          for (Index c = 0; c < Ci; ++c)
            for (Index j = -1; j <= 1; ++j) {
              const Index src = c + j;
              if (src < 0 || src >= Ci) continue;
              d[j + 1] += g[n * C + c] * in[n * C + src];
            }
      });
    });
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& m) {
  require_rank("channel_scale", x, 4);
  require_rank("channel_scale", m, 2);
  if (m.dim(0) != x.dim(0) || m.dim(1) != x.dim(1)) {
    fail(ErrorKind::shape, "channel_scale: gate " + m.shape().str() + " does not match features " + x.shape().str());
  }
  const std::size_t P = x.dim(0) * x.dim(1), M = x.dim(2) * x.dim(3);
  Tensor out(x.shape());
  {
    auto in = x.data();
    auto s = m.data();
    auto o = out.data();
    const Index planes = P;
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < M; ++i) o[p * M + i] = in[p * M + i] * s[p];
  }
  if (should_record({&x, &m})) {
    record("channel_scale", {&x, &m}, out, [x, m, P, M](std::span<const Real> g) mutable {
      auto in = x.data();
      auto s = m.data();
      accumulate_grad(x, [&](std::span<Real> d) {
        for (std::size_t p = 0; p < P; ++p)
          for (std::size_t i = 0; i < M; ++i) d[p * M + i] += g[p * M + i] * s[p];
      });
      accumulate_grad(m, [&](std::span<Real> d) {
        for (std::size_t p = 0; p < P; ++p) {
          Real acc = 0;
          for (std::size_t i = 0; i < M; ++i) acc += g[p * M + i] * in[p * M + i];
          d[p] += acc;
        }
      });
    });
  }
  return finish("channel_scale", out);
}

Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps) {
  require_same_shape("bce_loss", pred, target);
  const Real lo = static_cast<Real>(eps), hi = Real(1) - static_cast<Real>(eps);
  auto p = pred.data();
  auto y = target.data();
  // Double accumulator.
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], lo, hi);
    total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  if (BranchTrace* trace = active_branch_trace()) {
    for (Real v : p) trace->add(v < lo ? 1 : v > hi ? 2 : 0);
  }
  const double n = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(static_cast<Real>(total / n));
  if (should_record({&pred})) {
    record("bce_loss", {&pred}, out, [pred, target, lo, hi, n](std::span<const Real> g) mutable {
      auto p = pred.data();
      auto y = target.data();
      const Real scale_factor = static_cast<Real>(g[0] / n);
      accumulate_grad(pred, [&](std::span<Real> d) {
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (p[i] < lo || p[i] > hi) continue;
          d[i] += scale_factor * (-y[i] / p[i] + (Real(1) - y[i]) / (Real(1) - p[i]));
        }
      });
    });
  }
  return finish("bce_loss", out);
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
