#include <cmath>

#include "carunet/cadrb.hpp"
#include "carunet/checks.hpp"
#include "carunet/grad_check.hpp"
#include "carunet/kernels.hpp"
#include "carunet/oracles.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

using test::from_values;
using test::random_tensor;

Real at(const Tensor& t, std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return t.data()[((n * t.dim(1) + c) * t.dim(2) + y) * t.dim(3) + x];
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  const Tensor x = Tensor::full(Shape{1, 1, 3, 3}, 1);
  const Tensor w = Tensor::full(Shape{1, 1, 3, 3}, 1);
  const Tensor y = conv2d(x, w, Tensor(), 1, 1);
  EXPECT_EQ(at(y, 0, 0, 1, 1), 9);
  EXPECT_EQ(at(y, 0, 0, 0, 0), 4);
  EXPECT_EQ(at(y, 0, 0, 2, 2), 4);
  EXPECT_EQ(at(y, 0, 0, 0, 1), 6);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(2);
  const Tensor x = random_tensor(Shape{2, 1, 4, 5}, rng);
  const Tensor y = conv2d(x, Tensor::full(Shape{1, 1, 1, 1}, 1), Tensor::zeros(Shape{1}), 1, 0);
  EXPECT_TRUE(test::bitwise_equal(x, y));
}

TEST(Conv2d, RejectsChannelMismatchAndNonIntegralOutput) {
  const Tensor x = Tensor::full(Shape{1, 2, 6, 6}, 1);
  EXPECT_ERROR_KIND(conv2d(x, Tensor::full(Shape{1, 3, 3, 3}, 1), Tensor(), 1, 1), ErrorKind::shape);
  EXPECT_ERROR_KIND(conv2d(x, Tensor::full(Shape{1, 2, 3, 3}, 1), Tensor(), 2, 1), ErrorKind::shape);
  EXPECT_ERROR_KIND(conv2d(Tensor::full(Shape{1, 2, 2, 2}, 1), Tensor::full(Shape{1, 2, 5, 5}, 1), Tensor(), 1, 0),
                    ErrorKind::shape);
}

TEST(Conv2d, ThreeByThreeWithBiasHas160Parameters) {
  Rng rng(0);
  EXPECT_EQ(parameter_count(Conv2d::make(1, 16, 3, 1, true, rng)), 160u);
  EXPECT_EQ(parameter_count(Conv2d::make(1, 16, 3, 1, false, rng)), 144u);
}

TEST(Conv2d, MatchesNaiveLoopsBitForBit) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t k = rng.bernoulli(0.5) ? 3 : 1, h = 3 + 2 * rng.below(4), w = 3 + 2 * rng.below(4);
    const std::size_t stride = 1 + rng.below(2), pad = k / 2;
    const Tensor x = random_tensor(Shape{n, ci, h, w}, rng);
    const Tensor wt = random_tensor(Shape{co, ci, k, k}, rng);
    const Tensor b = random_tensor(Shape{co}, rng);
    const Tensor y = conv2d(x, wt, b, stride, pad);
    const auto ref = oracle::conv2d({x.data().begin(), x.data().end()}, n, ci, h, w,
                                    {wt.data().begin(), wt.data().end()}, co, k, {b.data().begin(), b.data().end()},
                                    stride, pad);
    ASSERT_EQ(ref.size(), y.numel());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.data()[i], ref[i]) << "seed " << seed << " at " << i;
  }
}

TEST(ConvTranspose2d, SinglePixelSpreadsOverTwoByTwo) {
  const Tensor y = conv_transpose2d(Tensor::full(Shape{1, 1, 1, 1}, 2.5), Tensor::full(Shape{1, 1, 2, 2}, 1),
                                    Tensor(), 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (Real v : y.data()) EXPECT_EQ(v, 2.5);
}

TEST(ConvTranspose2d, DoublesSpatialSizeAndMatchesScatterAdd) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(4), co = 1 + rng.below(4);
    const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
    const Tensor x = random_tensor(Shape{n, ci, h, w}, rng);
    const Tensor wt = random_tensor(Shape{ci, co, 2, 2}, rng);
    const Tensor b = random_tensor(Shape{co}, rng);
    const Tensor y = conv_transpose2d(x, wt, b, 2, 0);
    ASSERT_EQ(y.shape(), (Shape{n, co, 2 * h, 2 * w}));
    const auto ref = oracle::conv_transpose2d({x.data().begin(), x.data().end()}, n, ci, h, w,
                                              {wt.data().begin(), wt.data().end()}, co, 2,
                                              {b.data().begin(), b.data().end()}, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y.data()[i], ref[i]) << "seed " << seed;
  }
}

TEST(ConvTranspose2d, InputGradientIsConvOfUpstreamGradient) {
  Rng rng(5);
  const Tensor wt = random_tensor(Shape{3, 2, 2, 2}, rng);
  Tensor x = random_tensor(Shape{1, 3, 3, 4}, rng);
  const Tensor g = random_tensor(Shape{1, 2, 6, 8}, rng);
  Tape tape;
  TapeScope scope(tape);
  x.set_requires_grad(true);
  tape.backward(sum(mul(conv_transpose2d(x, wt, Tensor(), 2, 0), g)));
  // The adjoint of a stride-2 transposed conv is the stride-2 conv with the
  // same weight read as [out=3, in=2, 2, 2].
  NoGradScope no_grad;
  const Tensor expected = conv2d(g, wt, Tensor(), 2, 0);
  ASSERT_EQ(expected.numel(), x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x.grad()[i], expected.data()[i], 1e-14);
}

TEST(MaxPool, PicksMaximumAndRoutesGradient) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = from_values(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  const PoolResult r = maxpool2d_2x2(x);
  EXPECT_EQ(r.output.item(), 4);
  EXPECT_EQ(r.argmax[0], 3u);
  tape.backward(sum(r.output));
  EXPECT_EQ(x.grad()[3], 1);
  EXPECT_EQ(x.grad()[0] + x.grad()[1] + x.grad()[2], 0);
}

TEST(MaxPool, ConstantInputTiesGoToFirstElement) {
  const PoolResult r = maxpool2d_2x2(Tensor::full(Shape{1, 2, 4, 4}, 0.5));
  for (Real v : r.output.data()) EXPECT_EQ(v, 0.5);
  const std::vector<std::size_t> first{0, 2, 8, 10};
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.argmax[p * 4 + i], first[i]);
}

TEST(MaxPool, RejectsOddSpatialSize) {
  EXPECT_ERROR_KIND(maxpool2d_2x2(Tensor::full(Shape{1, 1, 3, 4}, 1)), ErrorKind::shape);
}

TEST(MaxPool, MatchesNaiveScanOnRandomEightByEight) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor x = random_tensor(Shape{2, 3, 8, 8}, rng);
    if (seed % 2) {
      for (Real& v : x.data()) v = std::round(v * 2) / 2;
    }
    const PoolResult r = maxpool2d_2x2(x);
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 4; ++ox) {
          Real best = -2;
          std::size_t arg = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (2 * oy + dy) * 8 + 2 * ox + dx;
              if (x.data()[p * 64 + idx] > best) {
                best = x.data()[p * 64 + idx];
                arg = idx;
              }
            }
          ASSERT_EQ(r.output.data()[p * 16 + oy * 4 + ox], best);
          ASSERT_EQ(r.argmax[p * 16 + oy * 4 + ox], arg);
        }
  }
}

TEST(Conv1d, Examples) {
  const Tensor v = from_values(Shape{3}, {1, 2, 3});
  const Tensor id = conv1d_shared(v, from_values(Shape{3}, {0, 1, 0}));
  EXPECT_TRUE(test::bitwise_equal(id, v));
  const Tensor s = conv1d_shared(v, from_values(Shape{3}, {1, 1, 1}));
  EXPECT_EQ(s.data()[0], 3);
  EXPECT_EQ(s.data()[1], 6);
  EXPECT_EQ(s.data()[2], 5);
}

TEST(Conv1d, RejectsKernelsThatAreNotThreeTaps) {
  EXPECT_ERROR_KIND(conv1d_shared(Tensor::full(Shape{4}, 1), Tensor::full(Shape{5}, 1)), ErrorKind::shape);
}

TEST(Conv1d, SingleChannelSeesOnlyCentreTap) {
  const Tensor s = conv1d_shared(from_values(Shape{1, 1}, {2}), from_values(Shape{3}, {5, 3, 7}));
  EXPECT_EQ(s.item(), 6);
}

TEST(BatchNorm, NormalisedInputPassesThrough) {
  // Zero mean, unit (biased) variance per channel.
  const Tensor x = from_values(Shape{2, 1, 1, 2}, {1, -1, 1, -1});
  BatchNormState s = BatchNormState::make(1);
  const Tensor y = batchnorm2d(x, s, Mode::train);
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], x.data()[i] * k, 1e-15);
}

TEST(BatchNorm, TrainOutputMeanEqualsBeta) {
  Rng rng(8);
  const Tensor x = random_tensor(Shape{3, 2, 4, 4}, rng, -3, 5);
  BatchNormState s = BatchNormState::make(2);
  s.beta.data()[0] = 0.7;
  s.beta.data()[1] = -1.3;
  s.gamma.data()[1] = 2.0;
  const Tensor y = batchnorm2d(x, s, Mode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) m += y.data()[(n * 2 + c) * 16 + i];
    EXPECT_NEAR(m / 48, s.beta.data()[c], 1e-12);
  }
}

TEST(BatchNorm, UpdatesRunningStatisticsAndEvalUsesThem) {
  Rng rng(9);
  const Tensor x = random_tensor(Shape{2, 1, 3, 3}, rng, 1, 3);
  BatchNormState s = BatchNormState::make(1);
  batchnorm2d(x, s, Mode::train);
  double mean = 0, var = 0;
  for (Real v : x.data()) mean += v;
  mean /= 18;
  for (Real v : x.data()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(s.running_mean.data()[0], 0.1 * mean, 1e-14);
  EXPECT_NEAR(s.running_var.data()[0], 0.9 + 0.1 * var / 17, 1e-14);
  EXPECT_GE(s.running_var.data()[0], 0);

  const Tensor y = batchnorm2d(x, s, Mode::eval);
  const double inv = 1.0 / std::sqrt(s.running_var.data()[0] + 1e-5);
  for (std::size_t i = 0; i < 18; ++i) EXPECT_NEAR(y.data()[i], (x.data()[i] - s.running_mean.data()[0]) * inv, 1e-14);
}

TEST(BatchNorm, TrainModeWithOneValuePerChannelIsAnError) {
  BatchNormState s = BatchNormState::make(3);
  EXPECT_ERROR_KIND(batchnorm2d(Tensor::full(Shape{1, 3, 1, 1}, 1), s, Mode::train), ErrorKind::shape);
  EXPECT_NO_THROW(batchnorm2d(Tensor::full(Shape{1, 3, 1, 1}, 1), s, Mode::eval));
}

TEST(BatchNorm, MatchesTwoPassFormula) {
  for (const LayerOracleResult& r : check_layer_oracles(30, 4)) {
    if (r.name.rfind("batchnorm", 0) == 0) {
      EXPECT_LT(r.max_abs_diff, 1e-12);
    }
  }
}

TEST(DropBlock, ZeroRateAndEvalModeAreIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor(Shape{2, 3, 9, 9}, rng);
  Rng d(2);
  EXPECT_TRUE(test::bitwise_equal(dropblock(x, DropBlockConfig{7, 0.0}, Mode::train, d), x));
  EXPECT_TRUE(test::bitwise_equal(dropblock(x, DropBlockConfig{7, 0.9}, Mode::eval, d), x));
  // Eval mode ignores the block size even when it does not fit.
  EXPECT_TRUE(test::bitwise_equal(dropblock(x, DropBlockConfig{11, 0.5}, Mode::eval, d), x));
}

TEST(DropBlock, RejectsBadConfigurations) {
  const Tensor x = Tensor::full(Shape{1, 1, 5, 5}, 1);
  Rng d(0);
  EXPECT_ERROR_KIND(dropblock(x, DropBlockConfig{7, 0.15}, Mode::train, d), ErrorKind::shape);
  EXPECT_ERROR_KIND(dropblock(x, DropBlockConfig{4, 0.15}, Mode::train, d), ErrorKind::usage);
  EXPECT_ERROR_KIND(dropblock(x, DropBlockConfig{3, 1.0}, Mode::train, d), ErrorKind::usage);
}

TEST(DropBlock, GammaFollowsValidSeedRegionFormula) {
  const double g = dropblock_gamma(DropBlockConfig{7, 0.15}, 32, 32);
  EXPECT_DOUBLE_EQ(g, 0.15 / 49.0 * 1024.0 / (26.0 * 26.0));
}

TEST(DropBlock, DroppedPixelsFormWholeBlocksAndSurvivorsAreRescaled) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng d(seed);
    const Tensor x = Tensor::full(Shape{1, 1, 16, 16}, 1);
    const Tensor y = dropblock(x, DropBlockConfig{3, 0.3}, Mode::train, d);
    std::size_t zeros = 0;
    Real kept = -1;
    for (Real v : y.data()) {
      if (v == 0) {
        ++zeros;
      } else {
        if (kept < 0) kept = v;
        ASSERT_EQ(v, kept);
      }
    }
    if (zeros == 0) continue;
    EXPECT_NEAR(kept, 256.0 / (256.0 - zeros), 1e-12);
    // Every zero lies in some fully zero 3x3 square.
    for (std::size_t py = 0; py < 16; ++py)
      for (std::size_t px = 0; px < 16; ++px) {
        if (y.data()[py * 16 + px] != 0) continue;
        bool covered = false;
        for (std::size_t cy = 1; cy < 15 && !covered; ++cy)
          for (std::size_t cx = 1; cx < 15 && !covered; ++cx) {
            if (cy + 1 < py || py + 1 < cy || cx + 1 < px || px + 1 < cx) continue;
            bool all = true;
            for (std::size_t dy = 0; dy < 3; ++dy)
              for (std::size_t dx = 0; dx < 3; ++dx) all = all && y.data()[(cy - 1 + dy) * 16 + cx - 1 + dx] == 0;
            covered = all;
          }
        ASSERT_TRUE(covered) << "seed " << seed << " pixel " << py << "," << px;
      }
  }
}

TEST(DropBlock, MonteCarloMatchesAnalyticDropFractionAndKeepsMeanMass) {
  const DropBlockStats s = check_dropblock_statistics(10000, 32, DropBlockConfig{7, 0.15}, 77);
  EXPECT_NEAR(s.dropped_fraction, 0.15, 0.02);
  EXPECT_NEAR(s.dropped_fraction, s.expected_fraction, 0.005);
  EXPECT_NEAR(s.mean_ratio, 1.0, 0.05);
}

TEST(Activations, Examples) {
  EXPECT_EQ(sigmoid(Tensor::full(Shape{1}, 0)).item(), 0.5);
  EXPECT_EQ(relu(Tensor::full(Shape{1}, -2.5)).item(), 0);
  EXPECT_EQ(relu(Tensor::full(Shape{1}, 2.5)).item(), 2.5);
  const Tensor s = sigmoid(from_values(Shape{4}, {-800, -40, 40, 800}));
  for (Real v : s.data()) {
    EXPECT_GT(v, 0);
    EXPECT_LT(v, 1);
  }
}

TEST(Activations, ReluDerivativeAtZeroIsZero) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = from_values(Shape{3}, {-1, 0, 1});
  x.set_requires_grad(true);
  tape.backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0);
  EXPECT_EQ(x.grad()[1], 0);
  EXPECT_EQ(x.grad()[2], 1);
}

TEST(Concat, PreservesOrderAndSplitsGradient) {
  Tape tape;
  TapeScope scope(tape);
  Rng rng(4);
  Tensor a = random_tensor(Shape{2, 1, 2, 3}, rng);
  Tensor b = random_tensor(Shape{2, 2, 2, 3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const Tensor c = concat_channels(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 2, 3}));
  const Tensor g = random_tensor(c.shape(), rng);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(c.data()[(n * 3) * 6 + i], a.data()[n * 6 + i]);
      EXPECT_EQ(c.data()[(n * 3 + 1) * 6 + i], b.data()[(n * 2) * 6 + i]);
      EXPECT_EQ(c.data()[(n * 3 + 2) * 6 + i], b.data()[(n * 2 + 1) * 6 + i]);
    }
  tape.backward(sum(mul(c, g)));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(a.grad()[n * 6 + i], g.data()[(n * 3) * 6 + i]);
      EXPECT_EQ(b.grad()[(n * 2) * 6 + i], g.data()[(n * 3 + 1) * 6 + i]);
      EXPECT_EQ(b.grad()[(n * 2 + 1) * 6 + i], g.data()[(n * 3 + 2) * 6 + i]);
    }
}

TEST(Concat, RejectsEmptyOperandAndSpatialMismatch) {
  const Tensor a = Tensor::full(Shape{1, 1, 2, 2}, 1);
  EXPECT_ERROR_KIND(concat_channels(a, Tensor()), ErrorKind::shape);
  EXPECT_ERROR_KIND(concat_channels(a, Tensor::full(Shape{1, 1, 2, 3}, 1)), ErrorKind::shape);
}

TEST(Bce, HalfEverywhereIsLnTwo) {
  const Tensor target = from_values(Shape{4}, {0, 1, 1, 0});
  EXPECT_NEAR(bce_loss(Tensor::full(Shape{4}, 0.5), target).item(), std::log(2.0), 1e-15);
}

TEST(Bce, PerfectPredictionHitsClampFloor) {
  const Tensor target = from_values(Shape{4}, {0, 1, 1, 0});
  const double loss = bce_loss(target, target).item();
  EXPECT_NEAR(loss, -std::log(1 - 1e-7), 1e-15);
  EXPECT_ERROR_KIND(bce_loss(target, Tensor::full(Shape{3}, 0)), ErrorKind::shape);
}

TEST(Kernels, ParallelKernelsMatchSerialReferences) {
  for (const LayerOracleResult& r : check_layer_oracles(60, 12)) {
    if (r.bitwise) {
      EXPECT_EQ(r.max_abs_diff, 0.0) << r.name;
    } else {
      EXPECT_LT(r.max_abs_diff, 1e-12) << r.name;
    }
  }
}

}  // namespace
}  // namespace carunet
