#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "carunet/tensor.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct GradCheckResult {
  /// Over the scored elements (all of them unless crossings are excluded).
  double max_relative_error = 0.0;
  /// Over every element, including stencils that cross a kink.
  double raw_max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
  /// Elements whose f(x + eps) or f(x - eps) took a different branch of a
  /// piecewise op (ReLU side, pooling winner, clamp) than f(x).
  std::size_t branch_crossings = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-3;
  /// Leave stencils that straddle a kink out of max_relative_error. There
  /// the central difference averages two one-sided slopes and is not an
  /// estimate of the derivative at x.
  bool exclude_branch_crossings = false;
  /// Lower bound on the relative-error denominator. Raising it turns the
  /// check into a mixed absolute / relative one for near-zero gradients.
  double denominator_floor = 1e-8;
};

/// Scalar-valued function of the checked inputs. It is evaluated once on a
/// tape and then twice per input element with recording suspended, so any
/// randomness inside must be reseeded on every call.
using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

/// Compares reverse-mode gradients of `fn` against central differences
///   (f(x + eps) - f(x - eps)) / (2 eps)
/// and returns the maximum over all input elements of
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Inputs are treated as leaves and receive requires_grad. Only meaningful
/// in the 64-bit build; the 32-bit build rejects the call.
GradCheckResult grad_check(const ScalarFunction& fn, std::span<Tensor> inputs, const GradCheckOptions& options);
GradCheckResult grad_check(const ScalarFunction& fn, std::span<Tensor> inputs, double epsilon = 1e-3);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
