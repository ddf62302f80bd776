#pragma once

// Verification routines shared by the acceptance suite and the selfcheck
// command. Gradient checks need the 64-bit build.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "carunet/grad_check.hpp"
#include "carunet/ops.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct OpGradResult {
  std::string op;
  bool composite = false;  // built from several ops (MECA, residual unit, CADRB)
  double worst = 0.0;      // max scored relative error over all seeds
  double worst_raw = 0.0;  // including stencils that cross a kink
  std::size_t crossings = 0;
  std::size_t elements = 0;
  std::size_t seeds = 0;
};

/// Gradient checks of every differentiable op (and the residual unit, MECA
/// and CADRB compositions) on random shapes, one run per seed.
std::vector<OpGradResult> check_op_gradients(std::size_t seeds, const GradCheckOptions& options);

struct NetworkGradResult {
  std::vector<double> per_seed;  // scored max relative error per seed
  double worst = 0.0;
  double worst_raw = 0.0;
  std::size_t crossings = 0;
  std::size_t elements = 0;
  std::string worst_parameter;
};

/// Depth-2, base-2 CAR-UNet on size x size inputs, checked over the image and
/// every trainable tensor. Train mode uses batch statistics with DropBlock off.
NetworkGradResult check_network_gradients(std::size_t seeds, Mode mode, const GradCheckOptions& options,
                                          std::size_t size = 8);

/// Gradient check of a conv2d whose recorded input gradient uses the
/// unflipped kernel. Returns the scored max relative error, which must be large.
double corrupted_conv_gradient_error(const GradCheckOptions& options);

struct MecaParamResult {
  bool ok = true;
  std::vector<std::string> failures;
  std::size_t configs = 0;
};
/// CADRB minus DRB is exactly 3 for many channel configs, a MECA holds 3,
/// and the skip attentions of networks of depth 1..4 add exactly 3 each.
MecaParamResult check_meca_parameters();

struct MecaTranscriptionResult {
  double max_abs_diff = 0.0;
  bool descriptors_ordered = true;  // f_mp >= f_ap everywhere
  std::size_t cases = 0;
};
MecaTranscriptionResult check_meca_transcription(std::size_t cases, std::uint64_t seed);

struct DropBlockStats {
  double dropped_fraction = 0.0;
  double expected_fraction = 0.0;  // analytic oracle
  double mean_ratio = 0.0;         // sum mean(out) / sum mean(in)
  std::size_t trials = 0;
};
DropBlockStats check_dropblock_statistics(std::size_t trials, std::size_t size, const DropBlockConfig& config,
                                          std::uint64_t seed);

struct AucEquivalence {
  std::size_t cases = 0;
  std::size_t mismatches = 0;
  double worked_example = 0.0;  // labels [0,0,1,1], scores [0.1,0.4,0.35,0.8]
};
AucEquivalence check_auc_equivalence(std::size_t cases, std::size_t max_n, std::uint64_t seed);

struct LayerOracleResult {
  std::string name;
  double max_abs_diff = 0.0;
  bool bitwise = false;  // compared for exact equality
};
/// conv2d, conv_transpose2d, maxpool, conv1d and batch norm against naive
/// loops, and the parallel kernels against the serial references.
std::vector<LayerOracleResult> check_layer_oracles(std::size_t cases, std::uint64_t seed);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
