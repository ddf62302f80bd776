#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "carunet/car_unet.hpp"
#include "carunet/data.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment buffers mirroring the parameter list.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;

  static AdamState make(std::span<const Tensor> params);
};

/// One bias-corrected Adam update from the parameters' gradients (a
/// parameter without a gradient counts as zero gradient).
void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& options);

using Snapshot = std::vector<std::vector<Real>>;
Snapshot snapshot(const ParameterList& params);
void restore(const ParameterList& params, const Snapshot& values);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean batch loss over the epoch
  double val_loss = 0;
  double val_auc = 0;
  std::size_t steps = 0;  // optimizer steps so far
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_auc = 0;
  double best_val_loss = 0;
  std::size_t steps = 0;
};

struct ValidationResult {
  double loss = 0;
  double auc = 0;
};

/// Eval-mode loss and pooled AUC over samples cropped back to their original
/// extent, in batches of `batch_size`.
ValidationResult validate(CarUnet& net, const std::vector<FundusSample>& samples, std::size_t batch_size,
                          double bce_epsilon);

/// Stacks equally sized samples into [N, 3, H, W] images and [N, 1, H, W] masks.
std::pair<Tensor, Tensor> make_batch(const std::vector<FundusSample>& samples, std::span<const std::size_t> indices);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains with Adam on BCE. Batches are reshuffled every epoch from
/// (seed, epoch); DropBlock draws come from (seed, epoch, step). After every
/// epoch the network is validated and the best epoch by validation AUC
/// (ties: lower loss) is kept; on return `net` holds those weights. A
/// non-finite loss aborts with a numeric error naming epoch, batch and value.
TrainResult train(CarUnet& net, const TrainingPool& pool, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// CSV text: header `epoch,train_loss,val_loss,val_auc` then one row per epoch.
std::string format_history(const std::vector<EpochRecord>& history);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
