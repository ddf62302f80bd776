#include "carunet/layers.hpp"

#include <cmath>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const NamedTensor& p : params) {
    if (p.trainable) n += p.tensor.numel();
  }
  return n;
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t(std::move(shape), true);
  for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

Conv2d Conv2d::make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding,
                    bool with_bias, Rng& rng) {
  Conv2d c;
  c.weight = kaiming_uniform(Shape{out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
  if (with_bias) c.bias = Tensor::zeros(Shape{out_channels}, true);
  c.padding = padding;
  return c;
}

void Conv2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

ConvTranspose2d ConvTranspose2d::make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                                      std::size_t stride, Rng& rng) {
  ConvTranspose2d c;
  // Each output pixel of a k=2/s=2 transposed conv sees in_channels inputs.
  c.weight = kaiming_uniform(Shape{in_channels, out_channels, kernel, kernel}, in_channels, rng);
  c.bias = Tensor::zeros(Shape{out_channels}, true);
  c.stride = stride;
  return c;
}

void ConvTranspose2d::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, true});
}

void collect(const BatchNormState& bn, ParameterList& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", bn.gamma, true});
  out.push_back({prefix + ".beta", bn.beta, true});
  out.push_back({prefix + ".running_mean", bn.running_mean, false});
  out.push_back({prefix + ".running_var", bn.running_var, false});
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
