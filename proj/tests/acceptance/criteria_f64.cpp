#include <chrono>
#include <cmath>
#include <cstdio>

#include "acceptance.hpp"
#include "carunet/checks.hpp"

namespace carunet::acceptance {

namespace {

constexpr std::size_t kGradSeeds = 20;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradEpsilon = 1e-3;
constexpr double kGradSeconds = 120.0;
constexpr std::size_t kNetworkImage = 16;

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

Verdict gradient_correctness() {
  GradCheckOptions o;
  o.epsilon = kGradEpsilon;
  o.exclude_branch_crossings = true;

  const auto start = std::chrono::steady_clock::now();
  const std::vector<OpGradResult> ops = check_op_gradients(kGradSeeds, o);
  const NetworkGradResult eval = check_network_gradients(kGradSeeds, Mode::eval, o, kNetworkImage);
  const NetworkGradResult train = check_network_gradients(kGradSeeds, Mode::train, o);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::size_t failing = 0;
  std::string worst_op;
  double worst = 0;
  for (const OpGradResult& r : ops) {
    if (r.worst >= kGradTolerance) ++failing;
    if (r.worst > worst) {
      worst = r.worst;
      worst_op = r.op;
    }
  }
  const bool nets_ok = eval.worst < kGradTolerance && train.worst < kGradTolerance;
  const bool pass = failing == 0 && nets_ok && seconds < kGradSeconds;

  // Informational: the same networks at a smaller step.
  GradCheckOptions fine = o;
  fine.epsilon = 1e-4;
  const NetworkGradResult eval_fine = check_network_gradients(3, Mode::eval, fine, kNetworkImage);

  std::string d = std::to_string(ops.size() - failing) + "/" + std::to_string(ops.size()) + " ops < 1e-4 (worst " +
                  worst_op + fmt(" %.2e)", worst) + fmt("; net eval %.2e", eval.worst) + " at " +
                  eval.worst_parameter + fmt(", net train %.2e", train.worst) + " at " + train.worst_parameter +
                  fmt("; %.1f s", seconds) + fmt("; net eval at eps 1e-4: %.2e", eval_fine.worst);
  for (const OpGradResult& r : ops) {
    if (r.worst >= kGradTolerance) d += "; " + r.op + fmt(" %.2e", r.worst);
  }
  return {pass, d};
}

Verdict meca_parameter_count() {
  const MecaParamResult r = check_meca_parameters();
  std::string d = std::to_string(r.configs) + " configurations";
  for (const std::string& f : r.failures) d += "; " + f;
  return {r.ok && r.configs > 0, d};
}

Verdict meca_transcription() {
  const MecaTranscriptionResult r = check_meca_transcription(100, 2718);
  // 64-bit rounding: a handful of ulps on values in (0, 1).
  const bool pass = r.cases == 100 && r.max_abs_diff <= 1e-15 && r.descriptors_ordered;
  return {pass, std::to_string(r.cases) + " inputs" + fmt(", max abs diff %.2e", r.max_abs_diff) +
                    (r.descriptors_ordered ? ", f_mp >= f_ap everywhere" : ", f_mp < f_ap seen")};
}

Verdict dropblock_statistics() {
  const DropBlockStats s = check_dropblock_statistics(10000, 32, DropBlockConfig{7, 0.15}, 31337);
  const bool pass = s.trials == 10000 && s.dropped_fraction >= 0.13 && s.dropped_fraction <= 0.17 &&
                    std::abs(s.mean_ratio - 1.0) <= 0.05;
  return {pass, std::to_string(s.trials) + " trials" + fmt(", dropped fraction %.4f", s.dropped_fraction) +
                    fmt(" (analytic %.4f)", s.expected_fraction) + fmt(", mean ratio %.4f", s.mean_ratio)};
}

Verdict auc_exactness() {
  const AucEquivalence r = check_auc_equivalence(2000, 400, 4242);
  const bool pass = r.cases == 2000 && r.mismatches == 0 && r.worked_example == 0.75;
  return {pass, std::to_string(r.mismatches) + "/" + std::to_string(r.cases) + " mismatches" +
                    fmt(", worked example %.4f", r.worked_example)};
}

}  // namespace carunet::acceptance
