#include "carunet/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace carunet::oracle {

double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg) += 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) {
        twice += 2;
      } else if (scores[i] == scores[j]) {
        twice += 1;
      }
    }
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("pairwise_auc: single class");
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

Counts naive_confusion(const std::vector<double>& pred, const std::vector<double>& mask) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && mask[i] == 1) c.tp++;
    if (pred[i] == 1 && mask[i] == 0) c.fp++;
    if (pred[i] == 0 && mask[i] == 0) c.tn++;
    if (pred[i] == 0 && mask[i] == 1) c.fn++;
  }
  return c;
}

MecaTrace meca(const std::vector<double>& F, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
               const std::array<double, 3>& k) {
  MecaTrace t;
  t.f_ap.assign(n * c, 0.0);
  t.f_mp.assign(n * c, 0.0);
  t.map.assign(n * c, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = &F[(b * c + ch) * h * w];
      double total = 0;
      double best = plane[0];
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          total += plane[i * w + j];
          if (plane[i * w + j] > best) best = plane[i * w + j];
        }
      }
      t.f_ap[b * c + ch] = total * (1.0 / static_cast<double>(h * w));
      t.f_mp[b * c + ch] = best;
    }
    auto conv = [&](const std::vector<double>& v, std::size_t ch) {
      const double* row = &v[b * c];
      double left = ch >= 1 ? row[ch - 1] : 0.0;
      double right = ch + 1 < c ? row[ch + 1] : 0.0;
      double acc = 0;
      if (ch >= 1) acc += k[0] * left;
      acc += k[1] * row[ch];
      if (ch + 1 < c) acc += k[2] * right;
      return acc;
    };
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double z = conv(t.f_ap, ch) + conv(t.f_mp, ch);
      t.map[b * c + ch] = 1.0 / (1.0 + std::exp(-z));
    }
  }
  return t;
}

double dropblock_expected_drop_fraction(std::size_t h, std::size_t w, std::size_t bs, double gamma) {
  const std::size_t half = bs / 2;
  double kept = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Valid centres cy in [half, h - 1 - half] with |cy - y| <= half.
      const long lo_y = std::max<long>(half, static_cast<long>(y) - static_cast<long>(half));
      const long hi_y = std::min<long>(static_cast<long>(h - 1 - half), static_cast<long>(y + half));
      const long lo_x = std::max<long>(half, static_cast<long>(x) - static_cast<long>(half));
      const long hi_x = std::min<long>(static_cast<long>(w - 1 - half), static_cast<long>(x + half));
      const long cover = std::max<long>(0, hi_y - lo_y + 1) * std::max<long>(0, hi_x - lo_x + 1);
      kept += std::pow(1.0 - gamma, static_cast<double>(cover));
    }
  }
  return 1.0 - kept / static_cast<double>(h * w);
}

std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t ci, std::size_t h,
                           std::size_t w, const std::vector<double>& weight, std::size_t co, std::size_t k,
                           const std::vector<double>& bias, std::size_t stride, std::size_t padding) {
  const std::size_t oh = (h + 2 * padding - k) / stride + 1, ow = (w + 2 * padding - k) / stride + 1;
  std::vector<double> y(n * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(padding);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(padding);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += weight[((o * ci + c) * k + u) * k + v] * x[((b * ci + c) * h + yy) * w + xx];
              }
          y[((b * co + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

std::vector<double> conv_transpose2d(const std::vector<double>& x, std::size_t n, std::size_t ci, std::size_t h,
                                     std::size_t w, const std::vector<double>& weight, std::size_t co,
                                     std::size_t k, const std::vector<double>& bias, std::size_t stride) {
  const std::size_t oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  std::vector<double> y(n * co * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t p = 0; p < oh * ow; ++p) y[(b * co + o) * oh * ow + p] = bias.empty() ? 0.0 : bias[o];
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                y[((b * co + o) * oh + i * stride + u) * ow + j * stride + v] +=
                    x[((b * ci + c) * h + i) * w + j] * weight[((c * co + o) * k + u) * k + v];
              }
  return y;
}

std::vector<double> batchnorm_train(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t hw,
                                    const std::vector<double>& gamma, const std::vector<double>& beta,
                                    double epsilon) {
  std::vector<double> y(x.size());
  const double count = static_cast<double>(n * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) mean += x[(b * c + ch) * hw + p];
    mean /= count;
    double var = 0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) var += (x[(b * c + ch) * hw + p] - mean) * (x[(b * c + ch) * hw + p] - mean);
    var /= count;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (b * c + ch) * hw + p;
        y[i] = gamma[ch] * (x[i] - mean) / std::sqrt(var + epsilon) + beta[ch];
      }
  }
  return y;
}

}  // namespace carunet::oracle
