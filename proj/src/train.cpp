#include "carunet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "carunet/metrics.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

AdamState AdamState::make(std::span<const Tensor> params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamOptions& o) {
  if (state.m.size() != params.size()) fail(ErrorKind::state, "adam_step: state does not match parameter list");
  ++state.t;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.numel()) fail(ErrorKind::state, "adam_step: moment buffer size mismatch");
    auto w = p.data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double step = o.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.epsilon);
      if (step != 0.0) w[i] = static_cast<Real>(w[i] - step);
    }
  }
}

Snapshot snapshot(const ParameterList& params) {
  Snapshot s;
  for (const NamedTensor& p : params) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

void restore(const ParameterList& params, const Snapshot& values) {
  if (params.size() != values.size()) fail(ErrorKind::state, "restore: snapshot does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    if (t.numel() != values[k].size()) fail(ErrorKind::state, "restore: size mismatch for " + params[k].name);
    std::copy(values[k].begin(), values[k].end(), t.data().begin());
  }
}

std::pair<Tensor, Tensor> make_batch(const std::vector<FundusSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::usage, "make_batch: empty batch");
  const Shape& is = samples[indices[0]].image.shape();
  const Shape& ms = samples[indices[0]].mask.shape();
  const std::size_t n = indices.size();
  Tensor images(Shape{n, is[0], is[1], is[2]});
  Tensor masks(Shape{n, ms[0], ms[1], ms[2]});
  for (std::size_t b = 0; b < n; ++b) {
    const FundusSample& s = samples[indices[b]];
    if (s.image.shape() != is || s.mask.shape() != ms) {
      fail(ErrorKind::shape, "make_batch: sample " + s.id + " has shape " + s.image.shape().str() + ", expected " +
                                 is.str());
    }
    std::copy(s.image.data().begin(), s.image.data().end(), images.data().begin() + b * is.numel());
    std::copy(s.mask.data().begin(), s.mask.data().end(), masks.data().begin() + b * ms.numel());
  }
  return {images, masks};
}

ValidationResult validate(CarUnet& net, const std::vector<FundusSample>& samples, std::size_t batch_size,
                          double bce_epsilon) {
  if (samples.empty()) fail(ErrorKind::usage, "validate: no samples");
  NoGradScope no_grad;
  std::vector<ScoredImage> scored;
  double loss_sum = 0;
  std::size_t pixels = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) idx.push_back(i);
    auto [images, masks] = make_batch(samples, idx);
    const Tensor prob = net.forward(images, ForwardContext{});
    const Tensor loss = bce_loss(prob, masks, bce_epsilon);
    loss_sum += static_cast<double>(loss.item()) * static_cast<double>(prob.numel());
    pixels += prob.numel();
    const std::size_t plane = samples[idx[0]].mask.numel();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const FundusSample& s = samples[idx[b]];
      Tensor p(s.mask.shape(), std::vector<Real>(prob.data().begin() + b * plane, prob.data().begin() + (b + 1) * plane));
      const Extent extent = s.original_size.height ? s.original_size : Extent{s.mask.dim(1), s.mask.dim(2)};
      scored.push_back(ScoredImage{s.id, crop_to_original(p, s.pad_offsets, extent),
                                   crop_to_original(s.mask, s.pad_offsets, extent)});
    }
  }
  const MetricsReport report = score_predictions(scored, 0.5);
  return ValidationResult{loss_sum / static_cast<double>(pixels), report.auc};
}

TrainResult train(CarUnet& net, const TrainingPool& pool, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (pool.train.empty()) fail(ErrorKind::usage, "train: empty training set");
  if (config.batch_size == 0) fail(ErrorKind::usage, "train: batch_size must be at least 1");
  const std::vector<FundusSample>& validation = pool.validation.empty() ? pool.train : pool.validation;

  const ParameterList params = net.parameters();
  std::vector<Tensor> trainable = net.trainable();
  AdamState adam = AdamState::make(trainable);
  const AdamOptions adam_options{config.learning_rate, config.beta1, config.beta2, config.adam_epsilon};

  const std::size_t batches_per_epoch = (pool.train.size() + config.batch_size - 1) / config.batch_size;
  std::size_t total_steps = config.epochs * batches_per_epoch;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  TrainResult result;
  Snapshot best;
  bool have_best = false;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs && step < total_steps; ++epoch) {
    std::vector<std::size_t> order(pool.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::derive(config.seed, epoch);
    shuffle(order, shuffle_rng);

    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size() && step < total_steps; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      auto [images, masks] = make_batch(pool.train, std::span(order).subspan(start, end - start));

      Rng drop_rng = Rng::derive(config.seed ^ 0xd20b10c4ULL, epoch, step);
      ForwardContext ctx{Mode::train, &drop_rng, 1.0};
      if (config.dropblock_schedule == DropBlockSchedule::linear) {
        ctx.drop_rate_scale = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
      }

      Tape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        const Tensor prob = net.forward(images, ctx);
        const Tensor loss = bce_loss(prob, masks, config.bce_epsilon);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
          fail(ErrorKind::numeric, "non-finite training loss " + std::to_string(loss_value) + " at epoch " +
                                       std::to_string(epoch) + ", batch " + std::to_string(batches));
        }
        tape.backward(loss);
      }
      {
        NoGradScope no_grad;
        adam_step(trainable, adam, adam_options);
      }
      for (Tensor& p : trainable) p.zero_grad();
      loss_sum += loss_value;
      ++batches;
      ++step;
    }

    const ValidationResult val = validate(net, validation, config.batch_size, config.bce_epsilon);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), val.loss, val.auc, step};
    result.history.push_back(rec);
    const bool better = !have_best || val.auc > result.best_val_auc ||
                        (val.auc == result.best_val_auc && val.loss < result.best_val_loss);
    if (better) {
      have_best = true;
      best = snapshot(params);
      result.best_epoch = epoch;
      result.best_val_auc = val.auc;
      result.best_val_loss = val.loss;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.steps = step;
  if (have_best) restore(params, best);
  return result;
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_loss,val_auc\n";
  char line[128];
  for (const EpochRecord& r : history) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss, r.val_loss, r.val_auc);
    out += line;
  }
  return out;
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
