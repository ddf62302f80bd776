#pragma once

#include <string>
#include <vector>

#include "carunet/cadrb.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

/// Channel Attention Residual U-Net.
///
/// Contracting path: CADRB then 2x2 max pooling at each of `depth` levels,
/// with widths base, 2*base, ..., and a CADRB bottleneck of base*2^depth.
/// Expansive path: 2x2/stride-2 transposed conv, concatenation
/// [upsampled, MECA(skip)], CADRB. Head: 1x1 conv and sigmoid.
class CarUnet {
 public:
  /// Deterministic in config.seed.
  static CarUnet build(const CarUnetConfig& config);

  /// image [N, in_channels, H, W] -> probabilities [N, 1, H, W].
  Tensor forward(const Tensor& image, const ForwardContext& ctx);

  const CarUnetConfig& config() const { return config_; }

  /// All named tensors in a fixed order, including batch-norm statistics.
  ParameterList parameters() const;
  /// Trainable tensors only, same order.
  std::vector<Tensor> trainable() const;
  std::size_t parameter_count() const;

  /// Channel width at encoder level `level` (level == depth is the bottleneck).
  std::size_t width(std::size_t level) const { return config_.base_channels << level; }

  std::size_t skip_attention_count() const { return skip_meca_.size(); }

  /// Throws a shape error unless `shape` is a legal input.
  void check_input(const Shape& shape) const;

 private:
  CarUnetConfig config_;
  std::vector<Cadrb> encoders_;
  Cadrb bottleneck_;
  std::vector<ConvTranspose2d> upconvs_;
  std::vector<Meca> skip_meca_;
  std::vector<Cadrb> decoders_;
  Conv2d head_;
};

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
