#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace carunet {

struct DropBlockConfig {
  std::size_t block_size = 7;
  double drop_rate = 0.15;
  bool operator==(const DropBlockConfig&) const = default;
};

/// Where the attention gate sits inside a CADRB.
enum class MecaPlacement {
  post_block,  // gate the block output after the second residual sum
  pre_sum,     // gate the second unit's branch before its residual sum
};

struct CarUnetConfig {
  std::size_t in_channels = 3;
  std::size_t base_channels = 16;
  std::size_t depth = 4;
  DropBlockConfig dropblock{};
  MecaPlacement meca_placement = MecaPlacement::post_block;
  std::uint64_t seed = 0;

  /// Input H and W must be multiples of this.
  std::size_t size_multiple() const { return std::size_t{1} << depth; }
  bool operator==(const CarUnetConfig&) const = default;
};

enum class DatasetKind { drive, chase, stare, synthetic };

enum class DropBlockSchedule {
  constant,  // drop_rate for every step
  linear,    // ramp 0 -> drop_rate over the run
};

struct TrainConfig {
  DatasetKind dataset = DatasetKind::synthetic;
  std::size_t batch_size = 2;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double bce_epsilon = 1e-7;
  double validation_fraction = 0.10;
  /// Augmented copies generated per training image (0 disables augmentation).
  std::size_t augment_copies = 4;
  /// Stop after this many optimizer steps; 0 means no limit.
  std::size_t max_steps = 0;
  DropBlockSchedule dropblock_schedule = DropBlockSchedule::constant;
  std::uint64_t seed = 0;
};

std::string_view to_string(MecaPlacement placement);
std::string_view to_string(DatasetKind kind);
std::string_view to_string(DropBlockSchedule schedule);
std::optional<MecaPlacement> parse_meca_placement(std::string_view text);
std::optional<DatasetKind> parse_dataset_kind(std::string_view text);
std::optional<DropBlockSchedule> parse_dropblock_schedule(std::string_view text);

/// Zero-padded network input size (square) for each dataset.
std::size_t padded_size(DatasetKind kind);

}  // namespace carunet
