#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "carunet/config_types.hpp"

namespace carunet {

struct DataConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::string root;
  std::size_t synthetic_count = 20;
  std::size_t synthetic_size = 64;
  /// Test fold for STARE's 4-fold cross-validation.
  std::size_t fold = 0;
  std::uint64_t seed = 0;
};

/// Everything a command needs, resolved from a preset, a config file and
/// command-line overrides (in that order).
///
/// File format: `[section]` headers followed by `key = value` lines; `#` and
/// `;` start comments. Sections are model, train, data and output. Unknown
/// sections or keys are errors.
struct RunConfig {
  CarUnetConfig model;
  TrainConfig train;
  DataConfig data;
  std::string output_dir = "run";
};

/// Names: drive, chase, stare, smoke.
RunConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// Parses config text on top of `base`. `origin` is used in error messages.
RunConfig parse_config(std::string_view text, RunConfig base, std::string_view origin = "config");
RunConfig load_config(const std::filesystem::path& path, RunConfig base);

/// Applies one `section.key=value` override.
void apply_override(RunConfig& config, std::string_view assignment);
void set_value(RunConfig& config, std::string_view section, std::string_view key, std::string_view value);

/// Applies `key=value` lines (no section headers) to one section.
void apply_section_text(RunConfig& config, std::string_view section, std::string_view text);

/// Full config in file format; parse_config(serialize(c), RunConfig{}) == c.
std::string serialize(const RunConfig& config);
/// `key=value` lines of the model section only.
std::string section_text(const CarUnetConfig& model);

/// Human-readable list of differing architecture fields (empty if equal).
std::vector<std::string> architecture_diff(const CarUnetConfig& a, const CarUnetConfig& b);

}  // namespace carunet
