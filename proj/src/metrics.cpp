#include "carunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

constexpr double nan = std::numeric_limits<double>::quiet_NaN();

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? nan : static_cast<double>(num) / static_cast<double>(den);
}

bool binary(Real v) { return v == Real(0) || v == Real(1); }

std::string fixed(double v, int digits = 4) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string exact(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(std::span<const Real> pred, std::span<const Real> mask) {
  if (pred.size() != mask.size()) {
    fail(ErrorKind::shape, "confusion: " + std::to_string(pred.size()) + " predictions vs " +
                               std::to_string(mask.size()) + " mask pixels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!binary(pred[i]) || !binary(mask[i])) {
      fail(ErrorKind::data, "confusion: non-binary value at index " + std::to_string(i));
    }
    const bool p = pred[i] == Real(1), y = mask[i] == Real(1);
    if (p) {
      ++(y ? c.tp : c.fp);
    } else {
      ++(y ? c.fn : c.tn);
    }
  }
  return c;
}

ConfusionCounts confusion(const Tensor& pred, const Tensor& mask) {
  if (pred.shape() != mask.shape()) {
    fail(ErrorKind::shape, "confusion: shapes " + pred.shape().str() + " and " + mask.shape().str() + " differ");
  }
  return confusion(pred.data(), mask.data());
}

ConfusionCounts threshold_confusion(std::span<const Real> probability, std::span<const Real> mask,
                                    double threshold) {
  if (probability.size() != mask.size()) {
    fail(ErrorKind::shape, "threshold_confusion: size mismatch");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < probability.size(); ++i) {
    if (!binary(mask[i])) fail(ErrorKind::data, "mask value at index " + std::to_string(i) + " is not 0 or 1");
    const bool p = probability[i] > threshold, y = mask[i] == Real(1);
    if (p) {
      ++(y ? c.tp : c.fp);
    } else {
      ++(y ? c.fn : c.tn);
    }
  }
  return c;
}

double specificity(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }
double sensitivity(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
double accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
double dice(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::shape, "auc: scores and labels differ in length");
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) fail(ErrorKind::data, "auc: label at index " + std::to_string(i) + " is not 0 or 1");
    if (std::isnan(scores[i])) fail(ErrorKind::numeric, "auc: NaN score at index " + std::to_string(i));
    positives += labels[i];
  }
  const std::uint64_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) fail(ErrorKind::data, "auc: labels hold a single class, AUC is undefined");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U: each positive beats every lower negative (2)
  // and ties with every equal negative (1).
  std::uint64_t twice_u = 0, negatives_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_u += pos * (2 * negatives_below + neg);
    negatives_below += neg;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double auc(std::span<const Real> scores, std::span<const Real> mask) {
  if (scores.size() != mask.size()) fail(ErrorKind::shape, "auc: scores and mask differ in length");
  std::vector<double> s(scores.begin(), scores.end());
  std::vector<std::uint8_t> y(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!binary(mask[i])) fail(ErrorKind::data, "auc: mask value at index " + std::to_string(i) + " is not 0 or 1");
    y[i] = mask[i] == Real(1) ? 1 : 0;
  }
  return auc(s, y);
}

MetricsReport score_predictions(const std::vector<ScoredImage>& images, double threshold) {
  MetricsReport report;
  report.threshold = threshold;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const ScoredImage& img : images) {
    try {
      if (img.probability.shape() != img.mask.shape()) {
        fail(ErrorKind::shape, "prediction " + img.probability.shape().str() + " vs mask " + img.mask.shape().str());
      }
      ImageMetrics m;
      m.id = img.id;
      m.counts = threshold_confusion(img.probability.data(), img.mask.data(), threshold);
      m.spe = specificity(m.counts);
      m.sen = sensitivity(m.counts);
      m.acc = accuracy(m.counts);
      const bool both = m.counts.tp + m.counts.fn > 0 && m.counts.tn + m.counts.fp > 0;
      m.auc = both ? auc(img.probability.data(), img.mask.data()) : nan;
      report.counts += m.counts;
      report.per_image.push_back(std::move(m));
      for (Real p : img.probability.data()) scores.push_back(p);
      for (Real y : img.mask.data()) labels.push_back(y == Real(1) ? 1 : 0);
    } catch (const Error& e) {
      fail(e.kind(), img.id + ": " + e.what());
    }
  }
  report.spe = specificity(report.counts);
  report.sen = sensitivity(report.counts);
  report.acc = accuracy(report.counts);
  const bool both = report.counts.tp + report.counts.fn > 0 && report.counts.tn + report.counts.fp > 0;
  report.auc = both ? auc(scores, labels) : nan;
  return report;
}

std::vector<std::uint16_t> to_uint16(const Tensor& probability) {
  std::vector<std::uint16_t> out;
  out.reserve(probability.numel());
  for (Real p : probability.data()) {
    const double v = std::clamp(static_cast<double>(p), 0.0, 1.0);
    out.push_back(static_cast<std::uint16_t>(std::lround(v * 65535.0)));
  }
  return out;
}

Tensor from_uint16(std::span<const std::uint16_t> levels, std::size_t height, std::size_t width) {
  if (levels.size() != height * width) fail(ErrorKind::shape, "from_uint16: size mismatch");
  Tensor t(Shape{1, height, width});
  auto d = t.data();
  for (std::size_t i = 0; i < levels.size(); ++i) d[i] = static_cast<Real>(levels[i] / 65535.0);
  return t;
}

Tensor quantize16(const Tensor& probability) {
  const auto levels = to_uint16(probability);
  Tensor t(probability.shape());
  auto d = t.data();
  for (std::size_t i = 0; i < levels.size(); ++i) d[i] = static_cast<Real>(levels[i] / 65535.0);
  return t;
}

Tensor predict_probability(CarUnet& net, const FundusSample& sample, std::size_t target) {
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  const std::size_t m = net.config().size_multiple();
  const std::size_t th = round_up(std::max(h, target), m), tw = round_up(std::max(w, target), m);
  const PadResult padded = pad_to_target(sample.image, th, tw);
  const std::size_t C = sample.image.dim(0);
  Tensor batch(Shape{1, C, th, tw}, std::vector<Real>(padded.padded.data().begin(), padded.padded.data().end()));

  NoGradScope no_grad;
  const Tensor prob = net.forward(batch, ForwardContext{});
  const Tensor plane(Shape{1, th, tw}, std::vector<Real>(prob.data().begin(), prob.data().end()));
  const Offsets at{padded.offsets.top + sample.pad_offsets.top, padded.offsets.left + sample.pad_offsets.left};
  const Extent extent = sample.original_size.height ? sample.original_size : Extent{h, w};
  return crop_to_original(plane, at, extent);
}

MetricsReport evaluate_model(CarUnet& net, const std::vector<FundusSample>& samples, const EvalOptions& options,
                             std::vector<ScoredImage>* predictions) {
  std::vector<ScoredImage> scored;
  for (const FundusSample& s : samples) {
    try {
      ScoredImage img;
      img.id = s.id;
      img.probability = predict_probability(net, s, options.target);
      if (options.quantize) img.probability = quantize16(img.probability);
      const Extent extent = s.original_size.height ? s.original_size : Extent{s.mask.dim(1), s.mask.dim(2)};
      img.mask = crop_to_original(s.mask, s.pad_offsets, extent);
      scored.push_back(std::move(img));
    } catch (const Error& e) {
      fail(e.kind(), s.id + ": " + e.what());
    }
  }
  MetricsReport report = score_predictions(scored, options.threshold);
  if (predictions) *predictions = std::move(scored);
  return report;
}

std::string format_table(const MetricsReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s\n", "image", "Spe", "Sen", "Acc", "AUC");
  out += line;
  for (const ImageMetrics& m : r.per_image) {
    std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s\n", m.id.c_str(), fixed(m.spe).c_str(),
                  fixed(m.sen).c_str(), fixed(m.acc).c_str(), fixed(m.auc).c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %8s\n", "pooled", fixed(r.spe).c_str(), fixed(r.sen).c_str(),
                fixed(r.acc).c_str(), fixed(r.auc).c_str());
  out += line;
  std::snprintf(line, sizeof line, "threshold %.4g  tp %llu  fp %llu  tn %llu  fn %llu\n", r.threshold,
                static_cast<unsigned long long>(r.counts.tp), static_cast<unsigned long long>(r.counts.fp),
                static_cast<unsigned long long>(r.counts.tn), static_cast<unsigned long long>(r.counts.fn));
  out += line;
  return out;
}

std::string format_structured(const MetricsReport& r) {
  std::string out;
  auto put = [&out](const std::string& key, const std::string& value) { out += key + "=" + value + "\n"; };
  put("threshold", exact(r.threshold));
  put("spe", exact(r.spe));
  put("sen", exact(r.sen));
  put("acc", exact(r.acc));
  put("auc", exact(r.auc));
  put("tp", std::to_string(r.counts.tp));
  put("fp", std::to_string(r.counts.fp));
  put("tn", std::to_string(r.counts.tn));
  put("fn", std::to_string(r.counts.fn));
  put("images", std::to_string(r.per_image.size()));
  for (const ImageMetrics& m : r.per_image) {
    const std::string p = "image." + m.id + ".";
    put(p + "spe", exact(m.spe));
    put(p + "sen", exact(m.sen));
    put(p + "acc", exact(m.acc));
    put(p + "auc", exact(m.auc));
    put(p + "tp", std::to_string(m.counts.tp));
    put(p + "fp", std::to_string(m.counts.fp));
    put(p + "tn", std::to_string(m.counts.tn));
    put(p + "fn", std::to_string(m.counts.fn));
  }
  return out;
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
