#include "carunet/cadrb.hpp"
#include "carunet/checks.hpp"
#include "carunet/grad_check.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

using test::random_tensor;

void zero_convs(ResidualUnit& u) {
  for (Tensor* t : {&u.conv1.weight, &u.conv2.weight}) {
    for (Real& v : t->data()) v = 0;
  }
}

Tensor relu_of(const Tensor& x) {
  NoGradScope no_grad;
  return relu(x);
}

TEST(ResidualUnit, ShortcutIsIdentityOnlyWhenChannelsMatch) {
  Rng rng(0);
  EXPECT_FALSE(ResidualUnit::make(4, 4, {}, rng).shortcut.has_value());
  const ResidualUnit p = ResidualUnit::make(3, 5, {}, rng);
  ASSERT_TRUE(p.shortcut.has_value());
  EXPECT_EQ(p.shortcut->weight.shape(), (Shape{5, 3, 1, 1}));
}

TEST(ResidualUnit, ZeroBranchWithIdentityShortcutIsRelu) {
  Rng rng(1);
  for (Mode mode : {Mode::train, Mode::eval}) {
    ResidualUnit u = ResidualUnit::make(3, 3, DropBlockConfig{3, 0.0}, rng);
    zero_convs(u);
    const Tensor x = random_tensor(Shape{2, 3, 5, 5}, rng);
    const Tensor y = u.forward(x, ForwardContext{mode, nullptr, 1.0});
    EXPECT_TRUE(test::bitwise_equal(y, relu_of(x)));
  }
}

TEST(ResidualUnit, ZeroInputGivesZeroOutputInEvalMode) {
  Rng rng(2);
  ResidualUnit u = ResidualUnit::make(4, 4, {}, rng);
  const Tensor y = u.forward(Tensor::zeros(Shape{1, 4, 6, 6}), ForwardContext{});
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(ResidualUnit, RejectsChannelMismatch) {
  Rng rng(3);
  ResidualUnit u = ResidualUnit::make(4, 4, {}, rng);
  EXPECT_ERROR_KIND(u.forward(Tensor::zeros(Shape{1, 3, 6, 6}), ForwardContext{}), ErrorKind::shape);
}

TEST(ResidualUnit, TrainModeDropBlockNeedsAnRng) {
  Rng rng(3);
  ResidualUnit u = ResidualUnit::make(2, 2, DropBlockConfig{3, 0.2}, rng);
  EXPECT_ERROR_KIND(u.forward(Tensor::full(Shape{2, 2, 6, 6}, 1), ForwardContext{Mode::train, nullptr, 1.0}),
                    ErrorKind::state);
}

TEST(Cadrb, ZeroMecaKernelHalvesTheDrb) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    Cadrb block = Cadrb::make(3, 4, DropBlockConfig{3, 0.2}, MecaPlacement::post_block, rng);
    for (Real& v : block.meca->kernel.data()) v = 0;
    Cadrb drb = block;
    drb.meca.reset();
    const Tensor x = random_tensor(Shape{2, 3, 6, 6}, rng);
    const Tensor y = block.forward(x, ForwardContext{});
    const Tensor d = drb.forward(x, ForwardContext{});
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], Real(0.5) * d.data()[i]);
  }
}

TEST(Cadrb, ZeroConvolutionsGiveHalfOfDoubleRelu) {
  Rng rng(4);
  for (Mode mode : {Mode::train, Mode::eval}) {
    Cadrb block = Cadrb::make(3, 3, DropBlockConfig{3, 0.0}, MecaPlacement::post_block, rng);
    zero_convs(block.unit1);
    zero_convs(block.unit2);
    for (Real& v : block.meca->kernel.data()) v = 0;
    const Tensor x = random_tensor(Shape{2, 3, 4, 4}, rng);
    const Tensor y = block.forward(x, ForwardContext{mode, nullptr, 1.0});
    const Tensor r = relu_of(relu_of(x));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], Real(0.5) * r.data()[i]);
  }
}

TEST(Cadrb, SpatiallyConstantNonNegativeInputIsHalved) {
  Rng rng(5);
  Cadrb block = Cadrb::make(4, 4, {}, MecaPlacement::post_block, rng);
  zero_convs(block.unit1);
  zero_convs(block.unit2);
  for (Real& v : block.meca->kernel.data()) v = 0;
  Tensor x(Shape{1, 4, 8, 8});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 64; ++i) x.data()[c * 64 + i] = static_cast<Real>(0.25 * c + 0.5);
  const Tensor y = block.forward(x, ForwardContext{});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(y.data()[c * 64 + i], Real(0.5) * x.data()[c * 64 + i]);
}

TEST(Cadrb, OutputChannelsFollowConfig) {
  Rng rng(6);
  for (MecaPlacement p : {MecaPlacement::post_block, MecaPlacement::pre_sum}) {
    Cadrb block = Cadrb::make(2, 7, {}, p, rng);
    EXPECT_EQ(block.out_channels(), 7u);
    EXPECT_EQ(block.forward(Tensor::full(Shape{1, 2, 8, 8}, 1), ForwardContext{}).shape(), (Shape{1, 7, 8, 8}));
  }
}

TEST(Cadrb, PreSumPlacementGatesTheBranchOnly) {
  // With zero convolutions the branch is zero, so gating it changes nothing.
  Rng rng(7);
  Cadrb block = Cadrb::make(3, 3, {}, MecaPlacement::pre_sum, rng);
  zero_convs(block.unit1);
  zero_convs(block.unit2);
  const Tensor x = random_tensor(Shape{1, 3, 4, 4}, rng);
  EXPECT_TRUE(test::bitwise_equal(block.forward(x, ForwardContext{}), relu_of(x)));
}

TEST(Cadrb, EvalModeIsDeterministic) {
  Rng rng(8);
  Cadrb block = Cadrb::make(3, 6, {}, MecaPlacement::post_block, rng);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, rng);
  EXPECT_TRUE(test::bitwise_equal(block.forward(x, ForwardContext{}), block.forward(x, ForwardContext{})));
}

TEST(Cadrb, AddsExactlyThreeParametersOverDrb) {
  Rng rng(9);
  for (std::size_t ci : {1u, 2u, 3u, 5u, 16u, 32u, 64u, 128u}) {
    for (std::size_t co : {1u, 4u, 16u, 33u, 256u}) {
      const std::size_t with = parameter_count(Cadrb::make(ci, co, {}, MecaPlacement::post_block, rng));
      const std::size_t pre = parameter_count(Cadrb::make(ci, co, {}, MecaPlacement::pre_sum, rng));
      const std::size_t without = parameter_count(Cadrb::make_drb(ci, co, {}, rng));
      EXPECT_EQ(with - without, 3u) << ci << "->" << co;
      EXPECT_EQ(pre - without, 3u) << ci << "->" << co;
    }
  }
  const MecaParamResult r = check_meca_parameters();
  EXPECT_TRUE(r.ok) << (r.failures.empty() ? "" : r.failures.front());
}

TEST(Cadrb, DrbParameterCountByHand) {
  // unit1: 3x3 ci->co, 3x3 co->co, two BNs, 1x1 projection with bias; unit2: same without projection.
  Rng rng(10);
  const std::size_t ci = 3, co = 8;
  const std::size_t unit = 2 * 9 * co * co + 4 * co;
  const std::size_t expected = (9 * ci * co + 9 * co * co + 4 * co + ci * co + co) + unit;
  EXPECT_EQ(parameter_count(Cadrb::make_drb(ci, co, {}, rng)), expected);
}

TEST(Cadrb, GradientCheckOnResidualUnitAndBlock) {
  GradCheckOptions o;
  o.exclude_branch_crossings = true;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    auto unit = std::make_shared<ResidualUnit>(ResidualUnit::make(2, 2, DropBlockConfig{3, 0.2}, rng));
    std::vector<Tensor> in{random_tensor(Shape{2, 2, 4, 4}, rng)};
    const Tensor w = random_tensor(Shape{2, 2, 4, 4}, rng);
    const auto r = grad_check(
        [&](std::span<const Tensor> x) {
          Rng drop(seed + 100);
          return sum(mul(unit->forward(x[0], ForwardContext{Mode::train, &drop, 1.0}), w));
        },
        in, o);
    EXPECT_LT(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

}  // namespace
}  // namespace carunet
