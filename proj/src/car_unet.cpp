#include "carunet/car_unet.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

CarUnet CarUnet::build(const CarUnetConfig& config) {
  if (config.base_channels == 0) fail(ErrorKind::usage, "base_channels must be at least 1");
  if (config.in_channels == 0) fail(ErrorKind::usage, "in_channels must be at least 1");
  if (config.depth == 0 || config.depth > 8) fail(ErrorKind::usage, "depth must lie in [1, 8]");

  CarUnet net;
  net.config_ = config;
  Rng rng(config.seed);
  const auto& drop = config.dropblock;
  std::size_t in = config.in_channels;
  for (std::size_t level = 0; level < config.depth; ++level) {
    net.encoders_.push_back(Cadrb::make(in, net.width(level), drop, config.meca_placement, rng));
    in = net.width(level);
  }
  net.bottleneck_ = Cadrb::make(in, net.width(config.depth), drop, config.meca_placement, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::size_t level = config.depth - 1 - i;
    net.upconvs_.push_back(ConvTranspose2d::make(net.width(level + 1), net.width(level), 2, 2, rng));
    net.skip_meca_.push_back(Meca::make(rng));
    net.decoders_.push_back(Cadrb::make(2 * net.width(level), net.width(level), drop, config.meca_placement, rng));
  }
  net.head_ = Conv2d::make(net.width(0), 1, 1, 0, true, rng);
  return net;
}

void CarUnet::check_input(const Shape& shape) const {
  if (shape.rank() != 4 || shape[1] != config_.in_channels) {
    fail(ErrorKind::shape, "network expects input [N, " + std::to_string(config_.in_channels) + ", H, W], got " +
                               shape.str());
  }
  const std::size_t m = config_.size_multiple();
  if (shape[2] % m != 0 || shape[3] % m != 0) {
    fail(ErrorKind::shape, "input height and width must be divisible by " + std::to_string(m) + " (2^depth), got " +
                               shape.str());
  }
}

Tensor CarUnet::forward(const Tensor& image, const ForwardContext& ctx) {
  check_input(image.shape());
  std::vector<Tensor> skips;
  Tensor h = image;
  for (Cadrb& block : encoders_) {
    h = block.forward(h, ctx);
    skips.push_back(h);
    h = maxpool2d_2x2(h).output;
  }
  h = bottleneck_.forward(h, ctx);
  for (std::size_t i = 0; i < decoders_.size(); ++i) {
    const Tensor& skip = skips[skips.size() - 1 - i];
    const Tensor up = upconvs_[i].forward(h);
    h = decoders_[i].forward(concat_channels(up, skip_meca_[i].apply(skip)), ctx);
  }
  return sigmoid(head_.forward(h));
}

ParameterList CarUnet::parameters() const {
  ParameterList list;
  for (std::size_t level = 0; level < encoders_.size(); ++level) {
    encoders_[level].collect(list, "enc" + std::to_string(level));
  }
  bottleneck_.collect(list, "bottleneck");
  for (std::size_t i = 0; i < decoders_.size(); ++i) {
    const std::string level = std::to_string(config_.depth - 1 - i);
    upconvs_[i].collect(list, "up" + level);
    skip_meca_[i].collect(list, "skip" + level + ".meca");
    decoders_[i].collect(list, "dec" + level);
  }
  head_.collect(list, "head");
  return list;
}

std::vector<Tensor> CarUnet::trainable() const {
  std::vector<Tensor> out;
  for (const NamedTensor& p : parameters()) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

std::size_t CarUnet::parameter_count() const { return carunet::parameter_count(parameters()); }

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
