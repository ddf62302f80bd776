#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "carunet/config_types.hpp"
#include "carunet/image_io.hpp"
#include "carunet/rng.hpp"
#include "carunet/tensor.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct Extent {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const Extent&) const = default;
};

struct Offsets {
  std::size_t top = 0;
  std::size_t left = 0;
  bool operator==(const Offsets&) const = default;
};

/// One fundus image and its vessel mask. `original_size` and `pad_offsets`
/// remember where the unpadded image sits so predictions can be cropped
/// back before scoring.
struct FundusSample {
  std::string id;
  Tensor image;  // [3, H, W], values in [0, 1]
  Tensor mask;   // [1, H, W], values in {0, 1}
  Extent original_size;
  Offsets pad_offsets;
};

struct PadResult {
  Tensor padded;
  Offsets offsets;
};

/// Zero-pads a [C, H, W] tensor to [C, target_h, target_w], centred with the
/// odd remainder going to the bottom / right.
PadResult pad_to_target(const Tensor& image, std::size_t target_h, std::size_t target_w);

/// Inverse of pad_to_target for the given offsets and original extent.
Tensor crop_to_original(const Tensor& padded, const Offsets& offsets, const Extent& original);

/// Pads image and mask together and records the bookkeeping.
FundusSample pad_sample(const FundusSample& sample, std::size_t target_h, std::size_t target_w);

/// Smallest multiple of `multiple` not below `size`.
std::size_t round_up(std::size_t size, std::size_t multiple);

struct AugmentOptions {
  double rotate_probability = 1.0;  // chance of drawing a rotation at all
  bool right_angles_only = true;    // rotate by k*90 degrees, lossless
  double max_angle_degrees = 180.0; // range for arbitrary-angle rotation
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;
  double transpose_probability = 0.5;  // "diagonal" flip
};

/// Applies one random geometric transform to image and mask alike.
/// Arbitrary-angle rotation resamples the image bilinearly and the mask
/// with nearest neighbour, filling uncovered pixels with zero.
FundusSample augment(const FundusSample& sample, Rng& rng, const AugmentOptions& options = {});

// Individual transforms on [C, H, W] tensors.
Tensor flip_horizontal(const Tensor& t);
Tensor flip_vertical(const Tensor& t);
Tensor transpose_hw(const Tensor& t);
/// Counter-clockwise rotation by quarter_turns * 90 degrees.
Tensor rotate90(const Tensor& t, int quarter_turns);
Tensor rotate_angle(const Tensor& t, double degrees, bool nearest);

struct SplitPlan {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  /// STARE: four disjoint test folds covering every image once.
  std::vector<std::vector<std::string>> folds;
};

struct Dataset {
  std::vector<FundusSample> samples;  // sorted by id, original size (unpadded)
  SplitPlan plan;

  const FundusSample& find(const std::string& id) const;
  std::vector<FundusSample> select(const std::vector<std::string>& ids) const;
};

/// Reads `root/images/<stem>.<ext>` with masks at `root/masks/<stem>.<ext>`.
///
/// drive: 40 images. Stems containing "training" / "test" decide the split;
///        otherwise the first 20 sorted stems train and the rest test.
/// chase: 28 images, first 20 sorted train, last 8 test.
/// stare: 20 images, four seeded folds of 5; `fold` picks the test fold.
/// synthetic: any number of images (as written by make-synthetic), each
///        used for both training and testing.
Dataset load_dataset(const std::filesystem::path& root, DatasetKind kind, std::uint64_t seed = 0,
                     std::size_t fold = 0);

/// STARE-style k-fold partition of ids, a permutation-stable function of seed.
std::vector<std::vector<std::string>> make_folds(std::vector<std::string> ids, std::size_t k, std::uint64_t seed);

/// Procedural fundus-like images: random-walk vessels 1-3 px wide on a
/// noisy reddish background, with exact masks. size must be >= 16.
std::vector<FundusSample> make_synthetic(std::size_t n, std::size_t size, Rng& rng);

/// Converts an 8/16-bit image to [3, H, W] scaled per image to [0, 1]
/// (gray inputs are replicated to 3 channels).
Tensor image_to_tensor(const Image& image);
/// Binary [1, H, W] mask, pixel > half of max_value is vessel.
Tensor mask_to_tensor(const Image& image);

/// Augmented training pool and its held-out validation subset.
struct TrainingPool {
  std::vector<FundusSample> train;
  std::vector<FundusSample> validation;
};

/// Pads every sample to target x target, adds `copies` augmented versions
/// of each, then moves round(fraction * pool size) randomly chosen entries
/// into validation. With fraction 0 the validation set is the training pool.
TrainingPool make_training_pool(const std::vector<FundusSample>& samples, std::size_t target, std::size_t copies,
                                double validation_fraction, std::uint64_t seed);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
