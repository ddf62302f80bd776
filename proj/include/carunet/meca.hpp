#pragma once

#include <string>

#include "carunet/layers.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

/// Modified Efficient Channel Attention.
///
/// Both spatial descriptors of a feature map, the per-channel maximum and
/// the per-channel mean, pass through one shared 3-tap channel convolution.
/// The two responses are summed and squashed:
///
///   M = sigmoid(conv1d(avg_pool(F)) + conv1d(max_pool(F)))
///
/// and the features are gated channel-wise, F * M. The kernel is a single
/// tensor used by both branches, so the module owns exactly 3 scalars and
/// receives the sum of both branches' gradients.
struct Meca {
  Tensor kernel;  // [3], no bias

  /// Kernel drawn uniformly from [-1/sqrt(3), 1/sqrt(3)].
  static Meca make(Rng& rng);
  static Meca with_kernel(Real left, Real centre, Real right);

  /// Channel gate M in (0, 1), shape [N, C].
  Tensor map(const Tensor& features) const;
  /// features * M, broadcast over space.
  Tensor apply(const Tensor& features) const;

  void collect(ParameterList& out, const std::string& prefix) const;
};

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
