#include "carunet/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>

#include "carunet/checks.hpp"

namespace carunet {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kNetworkTolerance = 1e-2;
constexpr double kCorruptedFloor = 1e-1;

std::string fmt(const char* pattern, double a, double b = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a, b);
  return buf;
}

struct Row {
  std::string name;
  bool pass;
  std::string detail;
};

}  // namespace

int run_selfcheck(std::ostream& out, const SelfcheckOptions& options) {
  int failures = 0;
  const auto start = std::chrono::steady_clock::now();
  auto emit = [&](const Row& row) {
    if (!row.pass) ++failures;
    char line[96];
    std::snprintf(line, sizeof line, "%-48s %-4s ", row.name.c_str(), row.pass ? "PASS" : "FAIL");
    out << line << row.detail << '\n' << std::flush;
  };

  GradCheckOptions grad;
  grad.epsilon = 1e-3;
  grad.exclude_branch_crossings = true;

  for (const OpGradResult& r : check_op_gradients(options.seeds, grad)) {
    emit({"grad " + r.op, r.worst < (r.composite ? kNetworkTolerance : kOpTolerance),
          fmt("max rel err %.2e (raw %.2e)", r.worst, r.worst_raw) + ", " + std::to_string(r.crossings) +
              " kink stencils"});
  }
  const NetworkGradResult net = check_network_gradients(options.seeds, Mode::eval, grad);
  emit({"grad car-unet depth 2 (eval)", net.worst < kNetworkTolerance,
        fmt("max rel err %.2e (raw %.2e)", net.worst, net.worst_raw) + " at " + net.worst_parameter});
  const double corrupted = corrupted_conv_gradient_error(grad);
  emit({"grad negative control (bad conv)", corrupted > kCorruptedFloor, fmt("max rel err %.2e, detected", corrupted)});

  for (const LayerOracleResult& r : check_layer_oracles(50, options.seed)) {
    const bool ok = r.bitwise ? r.max_abs_diff == 0.0 : r.max_abs_diff < 1e-12;
    emit({"oracle " + r.name, ok, fmt("max abs diff %.2e", r.max_abs_diff)});
  }

  const MecaTranscriptionResult meca = check_meca_transcription(100, options.seed);
  emit({"meca map vs straight-line", meca.max_abs_diff < 1e-12 && meca.descriptors_ordered,
        fmt("max abs diff %.2e", meca.max_abs_diff) + (meca.descriptors_ordered ? "" : ", f_mp < f_ap seen")});

  const MecaParamResult params = check_meca_parameters();
  emit({"meca adds 3 parameters", params.ok,
        std::to_string(params.configs) + " configs" + (params.ok ? "" : ", " + params.failures.front())});

  const DropBlockStats drop = check_dropblock_statistics(2000, 32, DropBlockConfig{7, 0.15}, options.seed);
  emit({"dropblock monte carlo", std::abs(drop.dropped_fraction - drop.expected_fraction) < 0.01 &&
                                     std::abs(drop.mean_ratio - 1.0) < 0.05,
        fmt("dropped %.4f (expected %.4f)", drop.dropped_fraction, drop.expected_fraction) +
            fmt(", mean ratio %.4f", drop.mean_ratio)});

  const AucEquivalence auc = check_auc_equivalence(500, 200, options.seed);
  emit({"auc vs pairwise oracle", auc.mismatches == 0 && auc.worked_example == 0.75,
        std::to_string(auc.mismatches) + "/" + std::to_string(auc.cases) + " mismatches" +
            fmt(", worked example %.4f", auc.worked_example)});

  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << (failures == 0 ? "selfcheck: all checks passed" : "selfcheck: " + std::to_string(failures) + " failed")
      << fmt(" in %.1f s", seconds) << '\n';
  return failures;
}

}  // namespace carunet
