#include "carunet/checks.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "carunet/car_unet.hpp"
#include "carunet/kernels.hpp"
#include "carunet/metrics.hpp"
#include "carunet/oracles.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

std::vector<double> to_double(std::span<const Real> v) { return std::vector<double>(v.begin(), v.end()); }

/// Reduces any output to a scalar through fixed random weights, so every
/// output element contributes a distinct amount.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

struct OpCase {
  std::string name;
  std::function<void(Rng&, std::vector<Tensor>&, ScalarFunction&)> setup;
  bool composite = false;
};

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, std::function<Tensor(const Tensor&)> op, double lo = -1.0, double hi = 1.0) {
    cases.push_back({name, [op, lo, hi](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                       in = {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)},
                                           rng, lo, hi)};
                       const std::uint64_t ws = rng.next();
                       fn = [op, ws](std::span<const Tensor> x) { return weighted_sum(op(x[0]), ws); };
                     }});
  };
  auto binary = [&](std::string name, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    cases.push_back({name, [op](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                       const Shape s{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
                       in = {random_tensor(s, rng), random_tensor(s, rng)};
                       const std::uint64_t ws = rng.next();
                       fn = [op, ws](std::span<const Tensor> x) { return weighted_sum(op(x[0], x[1]), ws); };
                     }});
  };
  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  unary("scale", [](const Tensor& a) { return scale(a, Real(-1.7)); });
  unary("sum", [](const Tensor& a) { return mul(sum(a), sum(a)); });
  unary("mean", [](const Tensor& a) { return mul(mean(a), mean(a)); });
  unary("relu", [](const Tensor& a) { return relu(a); });
  unary("sigmoid", [](const Tensor& a) { return sigmoid(a); }, -4.0, 4.0);
  unary("spatial_max_pool", [](const Tensor& a) { return spatial_max_pool(a); });
  unary("spatial_avg_pool", [](const Tensor& a) { return spatial_avg_pool(a); });
  binary("concat_channels", [](const Tensor& a, const Tensor& b) { return concat_channels(a, b); });

  cases.push_back({"maxpool2d_2x2", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     in = {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 3), 2 * pick(rng, 1, 3), 2 * pick(rng, 1, 3)},
                                         rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws](std::span<const Tensor> x) { return weighted_sum(maxpool2d_2x2(x[0]).output, ws); };
                   }});
  cases.push_back({"conv2d", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3), k = rng.bernoulli(0.5) ? 3 : 1;
                     const std::size_t stride = pick(rng, 1, 2), pad = k / 2;
                     const std::size_t h = stride == 1 ? pick(rng, 3, 6) : 5, w = stride == 1 ? pick(rng, 3, 6) : 7;
                     in = {random_tensor(Shape{pick(rng, 1, 2), ci, h, w}, rng), random_tensor(Shape{co, ci, k, k}, rng),
                           random_tensor(Shape{co}, rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws, stride, pad](std::span<const Tensor> x) {
                       return weighted_sum(conv2d(x[0], x[1], x[2], stride, pad), ws);
                     };
                   }});
  cases.push_back({"conv_transpose2d", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                     in = {random_tensor(Shape{pick(rng, 1, 2), ci, pick(rng, 1, 4), pick(rng, 1, 4)}, rng),
                           random_tensor(Shape{ci, co, 2, 2}, rng), random_tensor(Shape{co}, rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws](std::span<const Tensor> x) { return weighted_sum(conv_transpose2d(x[0], x[1], x[2], 2, 0), ws); };
                   }});
  for (Mode mode : {Mode::train, Mode::eval}) {
    cases.push_back({mode == Mode::train ? "batchnorm2d_train" : "batchnorm2d_eval",
                     [mode](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                       const std::size_t c = pick(rng, 1, 3);
                       auto bn = std::make_shared<BatchNormState>(BatchNormState::make(c));
                       bn->gamma = random_tensor(Shape{c}, rng, 0.5, 1.5);
                       bn->beta = random_tensor(Shape{c}, rng);
                       bn->running_mean = random_tensor(Shape{c}, rng, -0.5, 0.5);
                       bn->running_var = random_tensor(Shape{c}, rng, 0.5, 1.5);
                       in = {random_tensor(Shape{pick(rng, 2, 3), c, pick(rng, 2, 4), pick(rng, 2, 4)}, rng), bn->gamma,
                             bn->beta};
                       const std::uint64_t ws = rng.next();
                       fn = [bn, mode, ws](std::span<const Tensor> x) {
                         return weighted_sum(batchnorm2d(x[0], *bn, mode), ws);
                       };
                     }});
  }
  cases.push_back({"dropblock", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     in = {random_tensor(Shape{2, 2, 7, 7}, rng)};
                     const std::uint64_t ws = rng.next(), ds = rng.next();
                     fn = [ws, ds](std::span<const Tensor> x) {
                       Rng drop(ds);
                       return weighted_sum(dropblock(x[0], DropBlockConfig{3, 0.3}, Mode::train, drop), ws);
                     };
                   }});
  cases.push_back({"conv1d_shared", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     in = {random_tensor(Shape{pick(rng, 1, 3), pick(rng, 1, 6)}, rng), random_tensor(Shape{3}, rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws](std::span<const Tensor> x) { return weighted_sum(conv1d_shared(x[0], x[1]), ws); };
                   }});
  cases.push_back({"channel_scale", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3);
                     in = {random_tensor(Shape{n, c, pick(rng, 1, 4), pick(rng, 1, 4)}, rng), random_tensor(Shape{n, c}, rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws](std::span<const Tensor> x) { return weighted_sum(channel_scale(x[0], x[1]), ws); };
                   }});
  cases.push_back({"bce_loss", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     const Shape s{pick(rng, 1, 2), 1, pick(rng, 2, 4), pick(rng, 2, 4)};
                     in = {random_tensor(s, rng, 0.1, 0.9)};
                     Tensor target(s);
                     for (Real& v : target.data()) v = rng.bernoulli(0.5) ? Real(1) : Real(0);
                     fn = [target](std::span<const Tensor> x) { return bce_loss(x[0], target); };
                   }});
  cases.push_back({"bce_sigmoid_conv2d", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     in = {random_tensor(Shape{1, 2, 4, 4}, rng), random_tensor(Shape{1, 2, 3, 3}, rng),
                           random_tensor(Shape{1}, rng)};
                     Tensor target(Shape{1, 1, 4, 4});
                     for (Real& v : target.data()) v = rng.bernoulli(0.3) ? Real(1) : Real(0);
                     fn = [target](std::span<const Tensor> x) { return bce_loss(sigmoid(conv2d(x[0], x[1], x[2], 1, 1)), target); };
                   }, true});
  cases.push_back({"meca_apply", [](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                     in = {random_tensor(Shape{pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 2, 4), pick(rng, 2, 4)}, rng),
                           random_tensor(Shape{3}, rng)};
                     const std::uint64_t ws = rng.next();
                     fn = [ws](std::span<const Tensor> x) { return weighted_sum(Meca{x[1]}.apply(x[0]), ws); };
                   }, true});
  for (bool project : {false, true}) {
    cases.push_back({project ? "residual_unit_projection" : "residual_unit_identity",
                     [project](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                       const std::size_t c = pick(rng, 1, 3);
                       auto unit = std::make_shared<ResidualUnit>(
                           ResidualUnit::make(c, project ? c + 1 : c, DropBlockConfig{3, 0.2}, rng));
                       in = {random_tensor(Shape{2, c, 4, 4}, rng)};
                       ParameterList params;
                       unit->collect(params, "u");
                       for (const NamedTensor& p : params) {
                         if (p.trainable) in.push_back(p.tensor);
                       }
                       const std::uint64_t ws = rng.next(), ds = rng.next();
                       fn = [unit, ws, ds](std::span<const Tensor> x) {
                         Rng drop(ds);
                         return weighted_sum(unit->forward(x[0], ForwardContext{Mode::train, &drop, 1.0}), ws);
                       };
                     }, true});
  }
  for (MecaPlacement placement : {MecaPlacement::post_block, MecaPlacement::pre_sum}) {
    cases.push_back({std::string("cadrb_") + std::string(to_string(placement)),
                     [placement](Rng& rng, std::vector<Tensor>& in, ScalarFunction& fn) {
                       const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
                       auto block = std::make_shared<Cadrb>(Cadrb::make(ci, co, DropBlockConfig{3, 0.2}, placement, rng));
                       in = {random_tensor(Shape{2, ci, 4, 4}, rng)};
                       ParameterList params;
                       block->collect(params, "b");
                       for (const NamedTensor& p : params) {
                         if (p.trainable) in.push_back(p.tensor);
                       }
                       const std::uint64_t ds = rng.next();
                       fn = [block, ds](std::span<const Tensor> x) {
                         Rng drop(ds);
                         return mean(block->forward(x[0], ForwardContext{Mode::train, &drop, 1.0}));
                       };
                     }, true});
  }
  return cases;
}

}  // namespace

std::vector<OpGradResult> check_op_gradients(std::size_t seeds, const GradCheckOptions& options) {
  std::vector<OpGradResult> results;
  for (const OpCase& c : op_cases()) {
    OpGradResult r;
    r.op = c.name;
    r.composite = c.composite;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = Rng::derive(0x6c3a, std::hash<std::string>{}(c.name) & 0xffff, s);
      std::vector<Tensor> inputs;
      ScalarFunction fn;
      c.setup(rng, inputs, fn);
      const GradCheckResult g = grad_check(fn, inputs, options);
      r.worst = std::max(r.worst, g.max_relative_error);
      r.worst_raw = std::max(r.worst_raw, g.raw_max_relative_error);
      r.crossings += g.branch_crossings;
      r.elements += g.elements_checked;
      ++r.seeds;
    }
    results.push_back(r);
  }
  return results;
}

NetworkGradResult check_network_gradients(std::size_t seeds, Mode mode, const GradCheckOptions& options,
                                          std::size_t size) {
  NetworkGradResult result;
  for (std::size_t s = 0; s < seeds; ++s) {
    CarUnetConfig config;
    config.base_channels = 2;
    config.depth = 2;
    config.dropblock.drop_rate = 0.0;
    config.seed = s;
    CarUnet net = CarUnet::build(config);
    Rng rng = Rng::derive(0x9e7, s);
    const std::size_t batch = mode == Mode::train ? 2 : 1;
    std::vector<Tensor> inputs{random_tensor(Shape{batch, 3, size, size}, rng, 0.0, 1.0)};
    std::vector<std::string> names{"image"};
    for (const NamedTensor& p : net.parameters()) {
      if (!p.trainable) continue;
      inputs.push_back(p.tensor);
      names.push_back(p.name);
    }
    const std::uint64_t ws = rng.next();
    const ScalarFunction fn = [&net, mode, ws](std::span<const Tensor> x) {
      return weighted_sum(net.forward(x[0], ForwardContext{mode, nullptr, 1.0}), ws);
    };
    const GradCheckResult g = grad_check(fn, inputs, options);
    result.per_seed.push_back(g.max_relative_error);
    if (g.max_relative_error >= result.worst) {
      result.worst = g.max_relative_error;
      result.worst_parameter = names[g.worst_input];
    }
    result.worst_raw = std::max(result.worst_raw, g.raw_max_relative_error);
    result.crossings += g.branch_crossings;
    result.elements += g.elements_checked;
  }
  return result;
}

namespace {

// Test fixture: correct forward, input gradient taken with the kernel not
// flipped (a classic transcription slip).
Tensor corrupted_conv2d(const Tensor& x, const Tensor& w) {
  ConvGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = w.dim(0);
  g.kernel_h = g.kernel_w = w.dim(2);
  g.padding = w.dim(2) / 2;
  Tensor out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.data(), w.data(), {}, out.data());
  if (should_record({&x, &w})) {
    record("corrupted_conv2d", {&x, &w}, out, [x, w, g](std::span<const Real> gy) mutable {
      accumulate_grad(x, [&](std::span<Real> d) {
        const long P = static_cast<long>(g.padding), H = static_cast<long>(g.in_h), W = static_cast<long>(g.in_w);
        const long K = static_cast<long>(g.kernel_h);
        auto wd = w.data();
        for (std::size_t n = 0; n < g.batch; ++n)
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (long y = 0; y < H; ++y)
              for (long xx = 0; xx < W; ++xx) {
                double acc = 0;
                for (std::size_t co = 0; co < g.out_channels; ++co)
                  for (long ky = 0; ky < K; ++ky)
                    for (long kx = 0; kx < K; ++kx) {
                      const long oy = y + ky - P, ox = xx + kx - P;
                      if (oy < 0 || ox < 0 || oy >= H || ox >= W) continue;
                      acc += gy[((n * g.out_channels + co) * H + oy) * W + ox] *
                             wd[((co * g.in_channels + ci) * K + ky) * K + kx];
                    }
                d[((n * g.in_channels + ci) * H + y) * W + xx] += static_cast<Real>(acc);
              }
      });
      accumulate_grad(w, [&](std::span<Real> d) {
        std::vector<Real> dw(g.weight_size());
        kernels::conv2d_backward_weight(g, x.data(), gy, dw, {});
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dw[i];
      });
    });
  }
  return out;
}

}  // namespace

double corrupted_conv_gradient_error(const GradCheckOptions& options) {
  Rng rng(0xbad);
  std::vector<Tensor> inputs{random_tensor(Shape{1, 2, 5, 5}, rng), random_tensor(Shape{2, 2, 3, 3}, rng)};
  const ScalarFunction fn = [](std::span<const Tensor> x) { return weighted_sum(corrupted_conv2d(x[0], x[1]), 17); };
  return grad_check(fn, inputs, options).max_relative_error;
}

MecaParamResult check_meca_parameters() {
  MecaParamResult r;
  Rng rng(3);
  const DropBlockConfig drop{};
  for (std::size_t ci : {1, 2, 3, 8, 16, 32, 64}) {
    for (std::size_t co : {1, 4, 16, 32, 128}) {
      const std::size_t cadrb = parameter_count(Cadrb::make(ci, co, drop, MecaPlacement::post_block, rng));
      const std::size_t drb = parameter_count(Cadrb::make_drb(ci, co, drop, rng));
      ++r.configs;
      if (cadrb - drb != 3) {
        r.ok = false;
        r.failures.push_back("CADRB(" + std::to_string(ci) + "," + std::to_string(co) + ") - DRB = " +
                             std::to_string(cadrb - drb));
      }
    }
  }
  if (parameter_count(Meca::make(rng)) != 3) {
    r.ok = false;
    r.failures.push_back("MECA alone is not 3 parameters");
  }
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    CarUnetConfig config;
    config.depth = depth;
    config.base_channels = 4;
    const CarUnet net = CarUnet::build(config);
    std::size_t skip = 0, skip_modules = 0;
    for (const NamedTensor& p : net.parameters()) {
      if (p.name.rfind("skip", 0) == 0) {
        skip += p.tensor.numel();
        ++skip_modules;
        if (p.tensor.numel() != 3) {
          r.ok = false;
          r.failures.push_back(p.name + " holds " + std::to_string(p.tensor.numel()) + " parameters");
        }
      }
    }
    ++r.configs;
    if (skip_modules != depth || skip != 3 * depth || net.skip_attention_count() != depth) {
      r.ok = false;
      r.failures.push_back("depth " + std::to_string(depth) + ": skip attention adds " + std::to_string(skip));
    }
  }
  return r;
}

MecaTranscriptionResult check_meca_transcription(std::size_t cases, std::uint64_t seed) {
  MecaTranscriptionResult r;
  NoGradScope no_grad;
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng = Rng::derive(seed, i);
    const std::size_t n = pick(rng, 1, 3), c = pick(rng, 1, 12), h = pick(rng, 1, 9), w = pick(rng, 1, 9);
    const Tensor F = random_tensor(Shape{n, c, h, w}, rng, -3.0, 3.0);
    const std::array<double, 3> k{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Meca meca = Meca::with_kernel(static_cast<Real>(k[0]), static_cast<Real>(k[1]), static_cast<Real>(k[2]));
    const Tensor M = meca.map(F);
    const oracle::MecaTrace t = oracle::meca(to_double(F.data()), n, c, h, w, k);
    const Tensor mp = spatial_max_pool(F), ap = spatial_avg_pool(F);
    for (std::size_t j = 0; j < n * c; ++j) {
      r.max_abs_diff = std::max(r.max_abs_diff, std::abs(static_cast<double>(M.data()[j]) - t.map[j]));
      if (mp.data()[j] < ap.data()[j] || t.f_mp[j] < t.f_ap[j]) r.descriptors_ordered = false;
    }
    ++r.cases;
  }
  return r;
}

DropBlockStats check_dropblock_statistics(std::size_t trials, std::size_t size, const DropBlockConfig& config,
                                          std::uint64_t seed) {
  DropBlockStats s;
  NoGradScope no_grad;
  double dropped = 0, total = 0, mean_in = 0, mean_out = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng data_rng = Rng::derive(seed, t, 1);
    Rng drop_rng = Rng::derive(seed, t, 2);
    const Tensor x = random_tensor(Shape{1, 1, size, size}, data_rng, 0.5, 1.5);
    const Tensor y = dropblock(x, config, Mode::train, drop_rng);
    double si = 0, so = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      si += x.data()[i];
      so += y.data()[i];
      if (y.data()[i] == Real(0)) dropped += 1;
    }
    total += static_cast<double>(x.numel());
    mean_in += si / static_cast<double>(x.numel());
    mean_out += so / static_cast<double>(x.numel());
    ++s.trials;
  }
  s.dropped_fraction = dropped / total;
  s.mean_ratio = mean_out / mean_in;
  s.expected_fraction =
      oracle::dropblock_expected_drop_fraction(size, size, config.block_size, dropblock_gamma(config, size, size));
  return s;
}

AucEquivalence check_auc_equivalence(std::size_t cases, std::size_t max_n, std::uint64_t seed) {
  AucEquivalence r;
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng = Rng::derive(seed, i);
    const std::size_t n = pick(rng, 2, max_n);
    const std::size_t levels = rng.bernoulli(0.5) ? pick(rng, 1, 6) : 0;  // 0: continuous scores
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t j = 0; j < n; ++j) {
      scores[j] = levels ? static_cast<double>(rng.below(levels)) / static_cast<double>(levels) : rng.uniform();
      labels[j] = rng.bernoulli(0.3) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    if (auc(scores, labels) != oracle::pairwise_auc(scores, labels)) ++r.mismatches;
    ++r.cases;
  }
  r.worked_example = auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<std::uint8_t>{0, 0, 1, 1});
  return r;
}

std::vector<LayerOracleResult> check_layer_oracles(std::size_t cases, std::uint64_t seed) {
  LayerOracleResult conv{"conv2d vs naive loops", 0.0, false};
  LayerOracleResult convt{"conv_transpose2d vs scatter-add", 0.0, false};
  LayerOracleResult pool{"maxpool2d_2x2 vs naive scan", 0.0, true};
  LayerOracleResult conv1{"conv1d_shared vs naive loop", 0.0, true};
  LayerOracleResult bn{"batchnorm2d (train) vs two-pass formula", 0.0, false};
  LayerOracleResult kref{"parallel kernels vs serial references", 0.0, true};
  NoGradScope no_grad;
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng = Rng::derive(seed, i);
    const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, stride = pick(rng, 1, 2);
    std::size_t h = pick(rng, 3, 9), w = pick(rng, 3, 9);
    if (stride == 2) {
      h |= 1;
      w |= 1;
    }
    const std::size_t pad = k / 2;
    const Tensor x = random_tensor(Shape{n, ci, h, w}, rng);
    const Tensor wt = random_tensor(Shape{co, ci, k, k}, rng);
    const Tensor b = random_tensor(Shape{co}, rng);
    const Tensor y = conv2d(x, wt, b, stride, pad);
    const auto yo = oracle::conv2d(to_double(x.data()), n, ci, h, w, to_double(wt.data()), co, k,
                                   to_double(b.data()), stride, pad);
    for (std::size_t j = 0; j < yo.size(); ++j) {
      conv.max_abs_diff = std::max(conv.max_abs_diff, std::abs(static_cast<double>(y.data()[j]) - yo[j]));
    }

    ConvGeometry g{n, ci, h, w, co, k, k, stride, pad};
    std::vector<Real> yr(g.output_size());
    reference::conv2d_forward(g, x.data(), wt.data(), b.data(), yr);
    for (std::size_t j = 0; j < yr.size(); ++j) {
      if (yr[j] != y.data()[j]) kref.max_abs_diff = std::max(kref.max_abs_diff, std::abs(double(yr[j] - y.data()[j])));
    }

    const Tensor xt = random_tensor(Shape{n, ci, pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
    const Tensor wtt = random_tensor(Shape{ci, co, 2, 2}, rng);
    const Tensor yt = conv_transpose2d(xt, wtt, b, 2, 0);
    const auto yto = oracle::conv_transpose2d(to_double(xt.data()), n, ci, xt.dim(2), xt.dim(3), to_double(wtt.data()),
                                              co, 2, to_double(b.data()), 2);
    for (std::size_t j = 0; j < yto.size(); ++j) {
      convt.max_abs_diff = std::max(convt.max_abs_diff, std::abs(static_cast<double>(yt.data()[j]) - yto[j]));
    }
    ConvGeometry gt{n, co, yt.dim(2), yt.dim(3), ci, 2, 2, 2, 0};
    std::vector<Real> ytr(yt.numel());
    reference::conv_transpose2d_forward(gt, xt.data(), wtt.data(), b.data(), ytr);
    for (std::size_t j = 0; j < ytr.size(); ++j) {
      if (ytr[j] != yt.data()[j]) kref.max_abs_diff = std::max(kref.max_abs_diff, std::abs(double(ytr[j] - yt.data()[j])));
    }

    const std::size_t ph = 2 * pick(rng, 1, 4), pw = 2 * pick(rng, 1, 4);
    Tensor xp = random_tensor(Shape{n, ci, ph, pw}, rng);
    for (Real& v : xp.data()) v = std::round(v * 4) / 4;  // force ties
    const PoolResult pr = maxpool2d_2x2(xp);
    for (std::size_t p = 0; p < n * ci; ++p)
      for (std::size_t oy = 0; oy < ph / 2; ++oy)
        for (std::size_t ox = 0; ox < pw / 2; ++ox) {
          double best = -1e300;
          std::size_t arg = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (2 * oy + dy) * pw + 2 * ox + dx;
              if (xp.data()[p * ph * pw + idx] > best) {
                best = xp.data()[p * ph * pw + idx];
                arg = idx;
              }
            }
          const std::size_t o = (p * (ph / 2) + oy) * (pw / 2) + ox;
          pool.max_abs_diff = std::max(pool.max_abs_diff, std::abs(best - double(pr.output.data()[o])));
          if (pr.argmax[o] != arg) pool.max_abs_diff = std::max(pool.max_abs_diff, 1.0);
        }
    std::vector<Real> pref(pr.output.numel());
    std::vector<std::size_t> aref(pr.output.numel());
    reference::maxpool2x2_forward(n * ci, ph, pw, xp.data(), pref, aref);
    for (std::size_t j = 0; j < pref.size(); ++j) {
      if (pref[j] != pr.output.data()[j] || aref[j] != pr.argmax[j]) kref.max_abs_diff = std::max(kref.max_abs_diff, 1.0);
    }

    const Tensor v = random_tensor(Shape{n, pick(rng, 1, 9)}, rng);
    const Tensor kern = random_tensor(Shape{3}, rng);
    const Tensor cv = conv1d_shared(v, kern);
    const std::size_t C = v.dim(1);
    for (std::size_t b0 = 0; b0 < n; ++b0)
      for (std::size_t c = 0; c < C; ++c) {
        Real acc = 0;
        if (c >= 1) acc += kern.data()[0] * v.data()[b0 * C + c - 1];
        acc += kern.data()[1] * v.data()[b0 * C + c];
        if (c + 1 < C) acc += kern.data()[2] * v.data()[b0 * C + c + 1];
        conv1.max_abs_diff = std::max(conv1.max_abs_diff, std::abs(double(acc - cv.data()[b0 * C + c])));
      }

    const std::size_t nb = pick(rng, 2, 3);
    const Tensor xb = random_tensor(Shape{nb, ci, pick(rng, 1, 5), pick(rng, 1, 5)}, rng, -2.0, 3.0);
    BatchNormState state = BatchNormState::make(ci);
    state.gamma = random_tensor(Shape{ci}, rng, 0.5, 1.5);
    state.beta = random_tensor(Shape{ci}, rng);
    const Tensor yb = batchnorm2d(xb, state, Mode::train);
    const auto ybo = oracle::batchnorm_train(to_double(xb.data()), nb, ci, xb.dim(2) * xb.dim(3),
                                             to_double(state.gamma.data()), to_double(state.beta.data()),
                                             static_cast<double>(state.epsilon));
    for (std::size_t j = 0; j < ybo.size(); ++j) {
      bn.max_abs_diff = std::max(bn.max_abs_diff, std::abs(static_cast<double>(yb.data()[j]) - ybo[j]));
    }
  }
  return {conv, convt, pool, conv1, bn, kref};
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
