#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "carunet/ops.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for batch-norm running statistics
};

using ParameterList = std::vector<NamedTensor>;

/// Number of trainable scalars.
std::size_t parameter_count(const ParameterList& params);

/// Forward-pass settings shared by every block of a network.
struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required in train mode when DropBlock is active
  /// Multiplies the configured DropBlock rate (drop-rate schedules).
  double drop_rate_scale = 1.0;
};

/// 2D convolution weight [out, in, k, k] with optional bias.
struct Conv2d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Kaiming-uniform weights (fan-in, ReLU gain); zero bias when present.
  static Conv2d make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding,
                     bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Transposed convolution weight [in, out, k, k] with bias.
struct ConvTranspose2d {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 2;
  std::size_t padding = 0;

  static ConvTranspose2d make(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                              std::size_t stride, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv_transpose2d(x, weight, bias, stride, padding); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

void collect(const BatchNormState& bn, ParameterList& out, const std::string& prefix);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
