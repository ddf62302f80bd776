#include "carunet/cadrb.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

ResidualUnit ResidualUnit::make(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                                Rng& rng) {
  ResidualUnit u;
  // No bias ahead of batch norm.
  u.conv1 = Conv2d::make(in_channels, out_channels, 3, 1, false, rng);
  u.bn1 = BatchNormState::make(out_channels);
  u.conv2 = Conv2d::make(out_channels, out_channels, 3, 1, false, rng);
  u.bn2 = BatchNormState::make(out_channels);
  if (in_channels != out_channels) u.shortcut = Conv2d::make(in_channels, out_channels, 1, 0, true, rng);
  u.dropblock = dropblock;
  return u;
}

Tensor ResidualUnit::forward(const Tensor& x, const ForwardContext& ctx, const Meca* branch_gate) {
  if (x.shape().rank() != 4 || x.dim(1) != in_channels()) {
    fail(ErrorKind::shape, "residual unit expects " + std::to_string(in_channels()) + " input channels, got " +
                               x.shape().str());
  }
  DropBlockConfig drop = dropblock;
  drop.drop_rate *= ctx.drop_rate_scale;
  const bool dropping = ctx.mode == Mode::train && drop.drop_rate > 0.0;
  if (dropping && ctx.rng == nullptr) fail(ErrorKind::state, "DropBlock in train mode needs an rng");

  auto stage = [&](const Conv2d& conv, BatchNormState& bn, const Tensor& in) {
    Tensor h = conv.forward(in);
    if (dropping) h = carunet::dropblock(h, drop, ctx.mode, *ctx.rng);
    h = batchnorm2d(h, bn, ctx.mode);
    return relu(h);
  };
  Tensor branch = stage(conv2, bn2, stage(conv1, bn1, x));
  if (branch_gate != nullptr) branch = branch_gate->apply(branch);
  const Tensor identity = shortcut ? shortcut->forward(x) : x;
  return relu(add(identity, branch));
}

void ResidualUnit::collect(ParameterList& out, const std::string& prefix) const {
  conv1.collect(out, prefix + ".conv1");
  carunet::collect(bn1, out, prefix + ".bn1");
  conv2.collect(out, prefix + ".conv2");
  carunet::collect(bn2, out, prefix + ".bn2");
  if (shortcut) shortcut->collect(out, prefix + ".shortcut");
}

Cadrb Cadrb::make(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                  MecaPlacement placement, Rng& rng) {
  Cadrb b = make_drb(in_channels, out_channels, dropblock, rng);
  b.meca = Meca::make(rng);
  b.placement = placement;
  return b;
}

Cadrb Cadrb::make_drb(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                      Rng& rng) {
  Cadrb b;
  b.unit1 = ResidualUnit::make(in_channels, out_channels, dropblock, rng);
  b.unit2 = ResidualUnit::make(out_channels, out_channels, dropblock, rng);
  return b;
}

Tensor Cadrb::forward(const Tensor& x, const ForwardContext& ctx) {
  const Tensor h = unit1.forward(x, ctx);
  if (!meca) return unit2.forward(h, ctx);
  if (placement == MecaPlacement::pre_sum) return unit2.forward(h, ctx, &*meca);
  return meca->apply(unit2.forward(h, ctx));
}

void Cadrb::collect(ParameterList& out, const std::string& prefix) const {
  unit1.collect(out, prefix + ".unit1");
  unit2.collect(out, prefix + ".unit2");
  if (meca) meca->collect(out, prefix + ".meca");
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
