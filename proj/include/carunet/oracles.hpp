#pragma once

// Straight-line reference computations in double precision, written without
// the tensor engine. Tests and the selfcheck command compare the library
// against these.

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace carunet::oracle {

/// Exhaustive O(P*N) pair count: positives above negatives score 2, ties 1.
double pairwise_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct Counts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};
Counts naive_confusion(const std::vector<double>& pred, const std::vector<double>& mask);

/// Channel attention map for F laid out [n][c][h][w]:
///   f_ap[c] = sum_i sum_j F[c][i][j] / (H W),  f_mp[c] = max_ij F[c][i][j]
///   M[c]    = 1 / (1 + exp(-(conv(f_ap)[c] + conv(f_mp)[c])))
/// with conv(v)[c] = k0 v[c-1] + k1 v[c] + k2 v[c+1], zero outside [0, C).
struct MecaTrace {
  std::vector<double> f_ap;  // [N*C]
  std::vector<double> f_mp;  // [N*C]
  std::vector<double> map;   // [N*C]
};
MecaTrace meca(const std::vector<double>& features, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
               const std::array<double, 3>& kernel);

/// Expected fraction of zeroed pixels for DropBlock seeds drawn with
/// probability gamma over the valid centre region: pixel (y, x) survives
/// with probability (1 - gamma)^(number of valid centres whose block covers it).
double dropblock_expected_drop_fraction(std::size_t h, std::size_t w, std::size_t block_size, double gamma);

/// Direct nested-loop cross-correlation, x [n][ci][h][w], weight
/// [co][ci][k][k], bias [co] (may be empty).
std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t ci, std::size_t h,
                           std::size_t w, const std::vector<double>& weight, std::size_t co, std::size_t k,
                           const std::vector<double>& bias, std::size_t stride, std::size_t padding);

/// Scatter-add transposed convolution, weight [ci][co][k][k].
std::vector<double> conv_transpose2d(const std::vector<double>& x, std::size_t n, std::size_t ci, std::size_t h,
                                     std::size_t w, const std::vector<double>& weight, std::size_t co,
                                     std::size_t k, const std::vector<double>& bias, std::size_t stride);

/// Train-mode batch norm with biased batch variance.
std::vector<double> batchnorm_train(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t hw,
                                    const std::vector<double>& gamma, const std::vector<double>& beta,
                                    double epsilon);

/// Scalar Adam trajectory: returns p after `steps` updates with gradient g(p).
template <typename Grad>
double adam_scalar(double p, Grad g, std::size_t steps, double lr, double b1 = 0.9, double b2 = 0.999,
                   double eps = 1e-8);

}  // namespace carunet::oracle

#include <cmath>

template <typename Grad>
double carunet::oracle::adam_scalar(double p, Grad g, std::size_t steps, double lr, double b1, double b2,
                                    double eps) {
  double m = 0, v = 0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double gt = g(p);
    m = b1 * m + (1 - b1) * gt;
    v = b2 * v + (1 - b2) * gt * gt;
    const double mh = m / (1 - std::pow(b1, double(t)));
    const double vh = v / (1 - std::pow(b2, double(t)));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
  return p;
}
