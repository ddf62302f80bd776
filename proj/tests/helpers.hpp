#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "carunet/error.hpp"
#include "carunet/rng.hpp"
#include "carunet/tensor.hpp"

namespace carunet::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (Real& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline Tensor from_values(const Shape& shape, std::vector<Real> values) { return Tensor(shape, std::move(values)); }

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

/// Fresh empty directory under the system temp dir, named after the test.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "carunet_tests" /
             (std::string(info->test_suite_name()) + "." + info->name() + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace carunet::test

/// Asserts that `stmt` throws carunet::Error of the given kind.
#define EXPECT_ERROR_KIND(stmt, expected_kind)                                   \
  do {                                                                           \
    try {                                                                        \
      stmt;                                                                      \
      ADD_FAILURE() << "expected an error from: " #stmt;                         \
    } catch (const ::carunet::Error& e) {                                        \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                            \
    }                                                                            \
  } while (0)
