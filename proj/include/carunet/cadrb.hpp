#pragma once

#include <optional>
#include <string>

#include "carunet/meca.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

/// One residual unit:
///   branch   = [conv3x3 -> DropBlock -> BN -> ReLU] x 2
///   shortcut = identity, or a 1x1 conv projection when channels change
///   y        = relu(shortcut(x) + gate(branch(x)))
/// The optional gate is how a CADRB can attend before the residual sum.
struct ResidualUnit {
  Conv2d conv1;
  BatchNormState bn1;
  Conv2d conv2;
  BatchNormState bn2;
  std::optional<Conv2d> shortcut;
  DropBlockConfig dropblock;

  static ResidualUnit make(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                           Rng& rng);

  std::size_t in_channels() const { return conv1.weight.dim(1); }
  std::size_t out_channels() const { return conv1.weight.dim(0); }

  Tensor forward(const Tensor& x, const ForwardContext& ctx, const Meca* branch_gate = nullptr);
  void collect(ParameterList& out, const std::string& prefix) const;
};

/// Double Residual Block (two stacked units). With attention enabled it
/// becomes a Channel Attention DRB holding exactly one MECA.
struct Cadrb {
  ResidualUnit unit1;
  ResidualUnit unit2;
  std::optional<Meca> meca;
  MecaPlacement placement = MecaPlacement::post_block;

  static Cadrb make(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                    MecaPlacement placement, Rng& rng);
  /// Same structure without attention.
  static Cadrb make_drb(std::size_t in_channels, std::size_t out_channels, const DropBlockConfig& dropblock,
                        Rng& rng);

  std::size_t out_channels() const { return unit2.out_channels(); }

  Tensor forward(const Tensor& x, const ForwardContext& ctx);
  void collect(ParameterList& out, const std::string& prefix) const;
};

template <typename Module>
std::size_t parameter_count(const Module& m) {
  ParameterList list;
  m.collect(list, "m");
  return parameter_count(list);
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
