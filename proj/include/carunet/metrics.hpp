#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "carunet/car_unet.hpp"
#include "carunet/data.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts for binary predictions against a binary mask (values exactly 0 or 1).
ConfusionCounts confusion(std::span<const Real> pred_binary, std::span<const Real> mask);
ConfusionCounts confusion(const Tensor& pred_binary, const Tensor& mask);

/// Counts with pred = (probability > threshold).
ConfusionCounts threshold_confusion(std::span<const Real> probability, std::span<const Real> mask,
                                    double threshold);

// NaN when the denominator is zero.
double specificity(const ConfusionCounts& c);
double sensitivity(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);
double dice(const ConfusionCounts& c);

/// Mann-Whitney AUC with ties counted one half, by sorting. Labels must be
/// 0 or 1 with both present; scores must not be NaN.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
/// Same, taking probabilities and a binary mask.
double auc(std::span<const Real> scores, std::span<const Real> mask);

struct ImageMetrics {
  std::string id;
  ConfusionCounts counts;
  double spe = 0, sen = 0, acc = 0;
  double auc = 0;  // NaN when the image holds a single class
};

struct MetricsReport {
  double threshold = 0.5;
  double spe = 0, sen = 0, acc = 0, auc = 0;
  ConfusionCounts counts;  // pooled over every pixel of every image
  std::vector<ImageMetrics> per_image;
};

/// One probability map and its ground truth, both [1, H, W] at original size.
struct ScoredImage {
  std::string id;
  Tensor probability;
  Tensor mask;
};

/// Pooled-pixel and per-image metrics.
MetricsReport score_predictions(const std::vector<ScoredImage>& images, double threshold);

/// Rounds probabilities to the nearest 16-bit level, the resolution of the
/// probability maps the CLI writes.
Tensor quantize16(const Tensor& probability);
std::vector<std::uint16_t> to_uint16(const Tensor& probability);
Tensor from_uint16(std::span<const std::uint16_t> levels, std::size_t height, std::size_t width);

/// Pads a sample to at least `target` (and to the network's size multiple),
/// runs the network in eval mode without recording, and crops the
/// probabilities back to the sample's original extent: [1, H, W].
Tensor predict_probability(CarUnet& net, const FundusSample& sample, std::size_t target = 0);

struct EvalOptions {
  double threshold = 0.5;
  std::size_t target = 0;  // pad size; 0 rounds up to the size multiple
  bool quantize = true;    // score 16-bit quantised probabilities
};

/// Errors from individual samples are rethrown with the sample id.
MetricsReport evaluate_model(CarUnet& net, const std::vector<FundusSample>& samples, const EvalOptions& options,
                             std::vector<ScoredImage>* predictions = nullptr);

/// Human-readable table with Spe, Sen, Acc and AUC columns.
std::string format_table(const MetricsReport& report);
/// `key=value` lines: threshold, spe, sen, acc, auc, tp, fp, tn, fn, images,
/// then image.<id>.<metric> entries.
std::string format_structured(const MetricsReport& report);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
