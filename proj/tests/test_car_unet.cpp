#include <cmath>
#include <map>

#include "carunet/car_unet.hpp"
#include "helpers.hpp"

namespace carunet {
namespace {

using test::random_tensor;

CarUnetConfig small(std::size_t depth, std::size_t base, std::uint64_t seed = 0) {
  CarUnetConfig c;
  c.depth = depth;
  c.base_channels = base;
  c.seed = seed;
  c.dropblock = {3, 0.1};
  return c;
}

const Tensor& find(const ParameterList& list, const std::string& name) {
  for (const NamedTensor& p : list) {
    if (p.name == name) return p.tensor;
  }
  throw std::runtime_error("no parameter " + name);
}

TEST(CarUnet, ChannelLadderDoublesPerLevel) {
  const CarUnet net = CarUnet::build(CarUnetConfig{});
  const ParameterList params = net.parameters();
  const std::size_t widths[] = {16, 32, 64, 128};
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(net.width(l), widths[l]);
    EXPECT_EQ(find(params, "enc" + std::to_string(l) + ".unit2.conv2.weight").dim(0), widths[l]);
    EXPECT_EQ(find(params, "dec" + std::to_string(l) + ".unit1.conv1.weight").dim(1), 2 * widths[l]);
    EXPECT_EQ(find(params, "up" + std::to_string(l) + ".weight").shape(), (Shape{2 * widths[l], widths[l], 2, 2}));
  }
  EXPECT_EQ(net.width(4), 256u);
  EXPECT_EQ(find(params, "bottleneck.unit2.conv2.weight").dim(0), 256u);
  EXPECT_EQ(find(params, "head.weight").shape(), (Shape{1, 16, 1, 1}));
}

TEST(CarUnet, OutputShapeMatchesInputAndIsAProbability) {
  for (std::size_t depth : {1u, 2u, 3u}) {
    CarUnet net = CarUnet::build(small(depth, 2, depth));
    Rng rng(depth);
    const std::size_t side = std::size_t{1} << (depth + 1);
    const Tensor x = random_tensor(Shape{2, 3, side, 2 * side}, rng, 0, 1);
    const Tensor y = net.forward(x, ForwardContext{});
    EXPECT_EQ(y.shape(), (Shape{2, 1, side, 2 * side}));
    for (Real v : y.data()) {
      EXPECT_GT(v, 0);
      EXPECT_LT(v, 1);
    }
  }
}

TEST(CarUnet, SmallestNetworkRunsOnFourByFour) {
  CarUnet net = CarUnet::build(small(1, 1));
  Rng rng(1);
  EXPECT_EQ(net.forward(random_tensor(Shape{1, 3, 4, 4}, rng), ForwardContext{}).shape(), (Shape{1, 1, 4, 4}));
}

TEST(CarUnet, SameSeedGivesIdenticalWeightsAndOutputs) {
  CarUnet a = CarUnet::build(small(2, 4, 42));
  CarUnet b = CarUnet::build(small(2, 4, 42));
  CarUnet c = CarUnet::build(small(2, 4, 43));
  const ParameterList pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_difference = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(test::bitwise_equal(pa[i].tensor, pb[i].tensor)) << pa[i].name;
    if (!test::bitwise_equal(pa[i].tensor, pc[i].tensor)) any_difference = true;
  }
  EXPECT_TRUE(any_difference);
  Rng rng(5);
  const Tensor x = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  EXPECT_TRUE(test::bitwise_equal(a.forward(x, ForwardContext{}), b.forward(x, ForwardContext{})));
}

TEST(CarUnet, RejectsIndivisibleAndMisshapenInputs) {
  CarUnet net = CarUnet::build(small(2, 2));
  EXPECT_ERROR_KIND(net.forward(Tensor::zeros(Shape{1, 3, 6, 8}), ForwardContext{}), ErrorKind::shape);
  EXPECT_ERROR_KIND(net.forward(Tensor::zeros(Shape{1, 1, 8, 8}), ForwardContext{}), ErrorKind::shape);
  EXPECT_ERROR_KIND(net.forward(Tensor::zeros(Shape{3, 8, 8}), ForwardContext{}), ErrorKind::shape);
  EXPECT_ERROR_KIND(CarUnet::build(small(0, 2)), ErrorKind::usage);
  EXPECT_ERROR_KIND(CarUnet::build(small(2, 0)), ErrorKind::usage);
}

TEST(CarUnet, SkipAttentionAddsThreeParametersPerLevel) {
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    const CarUnet net = CarUnet::build(small(depth, 2));
    EXPECT_EQ(net.skip_attention_count(), depth);
    std::size_t skip = 0, meca_buffers = 0;
    for (const NamedTensor& p : net.parameters()) {
      if (p.name.rfind("skip", 0) == 0) skip += p.tensor.numel();
      if (p.name.ends_with(".meca.kernel")) ++meca_buffers;
    }
    EXPECT_EQ(skip, 3 * depth);
    // One per CADRB (2*depth + 1 blocks) plus one per skip connection.
    EXPECT_EQ(meca_buffers, 3 * depth + 1);
  }
}

TEST(CarUnet, TrainableExcludesRunningStatistics) {
  const CarUnet net = CarUnet::build(small(2, 2));
  std::size_t trainable = 0, total = 0;
  for (const NamedTensor& p : net.parameters()) {
    total += p.tensor.numel();
    if (p.trainable) trainable += p.tensor.numel();
    EXPECT_EQ(p.trainable, !p.name.ends_with("running_mean") && !p.name.ends_with("running_var")) << p.name;
  }
  EXPECT_EQ(net.parameter_count(), trainable);
  EXPECT_LT(trainable, total);
  std::size_t from_list = 0;
  for (const Tensor& t : net.trainable()) from_list += t.numel();
  EXPECT_EQ(from_list, trainable);
}

TEST(CarUnet, EveryParameterGroupReceivesGradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CarUnet net = CarUnet::build(small(2, 4, seed));
    for (Tensor t : net.trainable()) {
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Rng rng(seed + 10);
    const Tensor x = random_tensor(Shape{2, 3, 16, 16}, rng, 0, 1);
    Tensor target(Shape{2, 1, 16, 16});
    for (Real& v : target.data()) v = rng.bernoulli(0.3) ? 1 : 0;
    Rng drop(seed);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(bce_loss(net.forward(x, ForwardContext{Mode::train, &drop, 1.0}), target, 1e-7));
    std::map<std::string, double> group_norm;
    for (const NamedTensor& p : net.parameters()) {
      if (!p.trainable) continue;
      const std::string group = p.name.substr(0, p.name.find('.'));
      double s = 0;
      if (p.tensor.has_grad()) {
        for (Real g : p.tensor.grad()) s += std::abs(g);
      }
      group_norm[group] += s;
    }
    for (const auto& [group, norm] : group_norm) {
      EXPECT_GT(norm, 0) << group << " seed " << seed;
      EXPECT_TRUE(std::isfinite(norm));
    }
  }
}

}  // namespace
}  // namespace carunet
