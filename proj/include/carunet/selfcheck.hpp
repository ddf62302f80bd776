#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>

namespace carunet {

struct SelfcheckOptions {
  std::size_t seeds = 5;  // gradient-check seeds per op and for the network
  std::uint64_t seed = 0;
};

/// Runs gradient checks (64-bit), layer oracles, the DropBlock Monte-Carlo
/// test, AUC oracle equivalence and the MECA parameter assertion, printing
/// one row per check. Returns the number of failed checks.
int run_selfcheck(std::ostream& out, const SelfcheckOptions& options = {});

}  // namespace carunet
