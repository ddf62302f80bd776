#include "carunet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

double evaluate(const ScalarFunction& fn, std::span<const Tensor> inputs, std::uint64_t& branches) {
  BranchTrace trace;
  BranchTraceScope scope(trace);
  const Tensor out = fn(inputs);
  branches = trace.hash();
  if (out.numel() != 1) fail(ErrorKind::shape, "grad_check: function must be scalar, got " + out.shape().str());
  const double v = out.item();
  if (!std::isfinite(v)) fail(ErrorKind::numeric, "grad_check: function produced a non-finite value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& fn, std::span<Tensor> inputs, double epsilon) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  return grad_check(fn, inputs, options);
}

GradCheckResult grad_check(const ScalarFunction& fn, std::span<Tensor> inputs, const GradCheckOptions& options) {
  const double epsilon = options.epsilon;
  if constexpr (!std::is_same_v<Real, double>) {
    fail(ErrorKind::state, "grad_check requires the 64-bit build");
  }
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<Real>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor out = fn(inputs);
    if (out.numel() != 1) fail(ErrorKind::shape, "grad_check: function must be scalar, got " + out.shape().str());
    if (!std::isfinite(out.item())) fail(ErrorKind::numeric, "grad_check: function produced a non-finite value");
    if (out.node_id()) tape.backward(out);
    for (const Tensor& t : inputs) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(t.numel(), Real(0));
      }
    }
  }

  GradCheckResult result;
  NoGradScope no_grad;
  std::uint64_t base_branches = 0, plus_branches = 0, minus_branches = 0;
  evaluate(fn, inputs, base_branches);
  bool first_scored = true;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = saved + static_cast<Real>(epsilon);
      const double plus = evaluate(fn, inputs, plus_branches);
      values[i] = saved - static_cast<Real>(epsilon);
      const double minus = evaluate(fn, inputs, minus_branches);
      values[i] = saved;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.elements_checked;
      result.raw_max_relative_error = std::max(result.raw_max_relative_error, err);
      const bool crossed = plus_branches != base_branches || minus_branches != base_branches;
      if (crossed) ++result.branch_crossings;
      if (crossed && options.exclude_branch_crossings) continue;
      if (err > result.max_relative_error || first_scored) {
        first_scored = false;
        result.max_relative_error = err;
        result.worst_input = k;
        result.worst_element = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (Tensor& t : inputs) t.zero_grad();
  return result;
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
