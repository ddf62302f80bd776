#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace carunet::cli {

/// Exit codes.
enum Exit : int { ok = 0, usage = 1, data = 2, numeric = 3 };

/// Runs one command line (args excludes the program name). Errors are
/// reported on `err` as a single `error: <category>: <detail>` line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace carunet::cli
