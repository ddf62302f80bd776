#pragma once

// Differentiable operations. Each op computes its forward value with the
// kernels and, when recording is active, pushes a node onto the tape.

#include <cstddef>
#include <span>
#include <vector>

#include "carunet/config_types.hpp"
#include "carunet/rng.hpp"
#include "carunet/tensor.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);

/// Sum of all elements as a [1] tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// ReLU with derivative 0 at exactly 0.
Tensor relu(const Tensor& x);
/// Logistic sigmoid; outputs are kept strictly inside (0, 1).
Tensor sigmoid(const Tensor& x);

/// NCHW cross-correlation. `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

/// NCHW transposed convolution, weight [in_ch, out_ch, kh, kw]. Output
/// spatial size is (in - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                        std::size_t padding);

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // in-plane flat index per output element
};

/// 2x2 max pooling with stride 2. H and W must be even.
PoolResult maxpool2d_2x2(const Tensor& x);

enum class Mode { train, eval };

/// Batch normalisation parameters and running statistics for C channels.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  Real momentum = Real(0.1);
  Real epsilon = Real(1e-5);

  static BatchNormState make(std::size_t channels);
};

/// Train mode normalises with batch statistics and updates the running
/// estimates (unbiased variance); eval mode uses the running estimates only.
Tensor batchnorm2d(const Tensor& x, BatchNormState& state, Mode mode);

/// DropBlock. Seeds are Bernoulli(gamma) over the valid centre region of
/// each (n, c) plane, each seed zeroes a block_size^2 square, and survivors
/// are rescaled by count(mask) / count_ones(mask). Identity in eval mode or
/// at drop_rate 0. In train mode the block must fit inside the map.
Tensor dropblock(const Tensor& x, const DropBlockConfig& config, Mode mode, Rng& rng);

/// Seed probability gamma for a feature map of h x w.
double dropblock_gamma(const DropBlockConfig& config, std::size_t h, std::size_t w);

/// Channel concatenation [a, b] along dim 1.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Per-channel spatial maximum / mean of NCHW input, as [N, C].
Tensor spatial_max_pool(const Tensor& x);
Tensor spatial_avg_pool(const Tensor& x);

/// 3-tap zero-padded convolution along the channel axis of [N, C] (or [C])
/// with no bias.
Tensor conv1d_shared(const Tensor& v, const Tensor& kernel);

/// out[n,c,h,w] = x[n,c,h,w] * m[n,c].
Tensor channel_scale(const Tensor& x, const Tensor& m);

/// Mean binary cross-entropy; pred is clamped to [eps, 1 - eps] and the
/// gradient is zero where the clamp is active.
Tensor bce_loss(const Tensor& pred, const Tensor& target, double eps = 1e-7);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
