#include <cmath>

#include "carunet/grad_check.hpp"
#include "carunet/ops.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

using test::from_values;
using test::random_tensor;

TEST(Shape, RejectsZeroDimensionsAndCountsElements) {
  EXPECT_EQ(Shape({2, 3, 4}).numel(), 24u);
  EXPECT_ERROR_KIND(Shape({2, 0}), ErrorKind::shape);
  EXPECT_ERROR_KIND(Tensor(Shape{2, 2}, std::vector<Real>{1, 2, 3}), ErrorKind::shape);
}

TEST(Tensor, CopiesAliasCloneDoesNot) {
  Tensor a = Tensor::full(Shape{3}, 1);
  Tensor b = a;
  Tensor c = a.clone();
  b.data()[0] = 5;
  EXPECT_EQ(a.data()[0], 5);
  EXPECT_EQ(c.data()[0], 1);
}

TEST(Tape, AddForwardAndBackwardOfSum) {
  Tape tape;
  TapeScope scope(tape);
  Tensor a = from_values(Shape{2}, {1, 2});
  Tensor b = from_values(Shape{2}, {3, 4});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor y = add(a, b);
  EXPECT_EQ(y.data()[0], 4);
  EXPECT_EQ(y.data()[1], 6);
  tape.backward(sum(y));
  for (const Tensor* t : {&a, &b}) {
    EXPECT_EQ(t->grad()[0], 1);
    EXPECT_EQ(t->grad()[1], 1);
  }
}

TEST(Tape, SquareHasGradientTwoX) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = from_values(Shape{1}, {3});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  EXPECT_EQ(y.item(), 9);
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 6);
}

TEST(Tape, SigmoidOfSquareMatchesFiniteDifferences) {
  std::vector<Tensor> in{from_values(Shape{1}, {0.5})};
  const auto r = grad_check([](std::span<const Tensor> x) { return sigmoid(mul(x[0], x[0])); }, in, 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-4);
  const double s = 1.0 / (1.0 + std::exp(-0.25));
  EXPECT_NEAR(in[0].grad()[0], s * (1 - s) * 2 * 0.5, 1e-15);
}

TEST(Tape, SumGivesOnesAndZeroScaleGivesZeros) {
  Rng rng(1);
  for (const Shape& shape : {Shape{1}, Shape{3, 2}, Shape{2, 1, 3, 2}}) {
    Tape tape;
    TapeScope scope(tape);
    Tensor w = random_tensor(shape, rng);
    w.set_requires_grad(true);
    tape.backward(sum(w));
    for (Real g : w.grad()) EXPECT_EQ(g, 1);

    Tape tape2;
    TapeScope scope2(tape2);
    Tensor v = random_tensor(shape, rng);
    v.set_requires_grad(true);
    tape2.backward(sum(scale(v, 0)));
    for (Real g : v.grad()) EXPECT_EQ(g, 0);
  }
}

TEST(Tape, RandomThreeOpGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const Shape s{1 + rng.below(3), 1 + rng.below(4)};
    std::vector<Tensor> in{random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)};
    const int pattern = static_cast<int>(rng.below(3));
    const auto fn = [pattern](std::span<const Tensor> x) {
      switch (pattern) {
        case 0: return sum(mul(sigmoid(x[0]), sub(x[1], x[2])));
        case 1: return mean(mul(add(x[0], x[1]), mul(x[2], x[0])));
        default: return sum(sigmoid(mul(scale(x[0], 2), add(x[1], x[2]))));
      }
    };
    EXPECT_LT(grad_check(fn, in, 1e-3).max_relative_error, 1e-4) << "seed " << seed;
  }
}

TEST(Tape, FanOutAccumulatesGradients) {
  // y = sum(x * a + x * b + sigmoid(x))  =>  dy/dx = a + b + s(1 - s)
  Rng rng(7);
  Tape tape;
  TapeScope scope(tape);
  Tensor x = random_tensor(Shape{5}, rng);
  const Tensor a = random_tensor(Shape{5}, rng), b = random_tensor(Shape{5}, rng);
  x.set_requires_grad(true);
  tape.backward(sum(add(add(mul(x, a), mul(x, b)), sigmoid(x))));
  for (std::size_t i = 0; i < 5; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x.data()[i])));
    EXPECT_NEAR(x.grad()[i], a.data()[i] + b.data()[i] + s * (1 - s), 1e-15);
  }
}

TEST(Tape, ReplaysInReverseRecordOrder) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::full(Shape{2}, 1, true);
  Tensor y = sigmoid(mul(x, x));
  Tensor loss = sum(y);
  ASSERT_EQ(tape.size(), 3u);
  EXPECT_EQ(tape.op_at(0), "mul");
  EXPECT_EQ(tape.op_at(1), "sigmoid");
  EXPECT_EQ(tape.op_at(2), "sum");
  EXPECT_EQ(*loss.node_id(), 2u);
}

TEST(Tape, RejectsNonScalarLossAndSecondBackward) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::full(Shape{2}, 1, true);
  Tensor y = mul(x, x);
  EXPECT_ERROR_KIND(tape.backward(y), ErrorKind::shape);
  Tensor loss = sum(y);
  tape.backward(loss);
  EXPECT_ERROR_KIND(tape.backward(loss), ErrorKind::state);
}

TEST(Tape, TensorsWithoutRequiresGradNeverReceiveGradients) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::full(Shape{3}, 2, true);
  Tensor c = Tensor::full(Shape{3}, 3);
  tape.backward(sum(mul(x, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Tape, UnreachableLeafHasNoGradient) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::full(Shape{3}, 2, true);
  Tensor unused = Tensor::full(Shape{3}, 2, true);
  Tensor other = mul(unused, unused);
  tape.backward(sum(x));
  EXPECT_FALSE(unused.has_grad());
  (void)other;
}

TEST(Tape, NoGradScopeRecordsNothing) {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::full(Shape{3}, 2, true);
  {
    NoGradScope no_grad;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.node_id().has_value());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(GradCheck, IdentitySumIsExact) {
  Rng rng(3);
  std::vector<Tensor> in{random_tensor(Shape{4, 3}, rng)};
  EXPECT_LT(grad_check([](std::span<const Tensor> x) { return sum(x[0]); }, in, 1e-3).max_relative_error, 1e-10);
}

TEST(GradCheck, RejectsNonScalarAndNonFiniteFunctions) {
  std::vector<Tensor> in{Tensor::full(Shape{2}, 1)};
  EXPECT_ERROR_KIND(grad_check([](std::span<const Tensor> x) { return mul(x[0], x[0]); }, in, 1e-3),
                    ErrorKind::shape);
  std::vector<Tensor> zero{Tensor::full(Shape{1}, 0)};
  EXPECT_ERROR_KIND(grad_check([](std::span<const Tensor> x) { return bce_loss(x[0], Tensor::full(Shape{1}, 1), 0); },
                               zero, 1e-3),
                    ErrorKind::numeric);
}

TEST(GradCheck, FlagsKinkCrossings) {
  // relu at 1e-4 with eps 1e-3: the stencil straddles zero.
  std::vector<Tensor> in{from_values(Shape{2}, {1e-4, 0.5})};
  GradCheckOptions o;
  o.exclude_branch_crossings = true;
  const auto r = grad_check([](std::span<const Tensor> x) { return sum(relu(x[0])); }, in, o);
  EXPECT_EQ(r.branch_crossings, 1u);
  EXPECT_GT(r.raw_max_relative_error, 0.1);
  EXPECT_LT(r.max_relative_error, 1e-10);
}

TEST(Forward, RepeatedRunsAreBitIdentical) {
  Rng rng(11);
  const Tensor x = random_tensor(Shape{2, 3, 6, 6}, rng);
  const Tensor w = random_tensor(Shape{4, 3, 3, 3}, rng);
  const Tensor b = random_tensor(Shape{4}, rng);
  const Tensor y1 = sigmoid(conv2d(x, w, b, 1, 1));
  const Tensor y2 = sigmoid(conv2d(x, w, b, 1, 1));
  EXPECT_TRUE(test::bitwise_equal(y1, y2));
}

TEST(Forward, NonFiniteValuesAreCaughtInCheckedBuilds) {
  Tensor x = from_values(Shape{2}, {1, std::nan("")});
  EXPECT_ERROR_KIND(add(x, x), ErrorKind::numeric);
}

}  // namespace
}  // namespace carunet
