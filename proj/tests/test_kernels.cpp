#include <random>

#include <gtest/gtest.h>

#include "fpe/kernels.hpp"
#include "test_support.hpp"

using namespace fpe::kernels;

namespace {

std::vector<float> rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<float> m;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = fpe::test::random_unit(rng, dim);
    m.insert(m.end(), r.begin(), r.end());
  }
  return m;
}

}  // namespace

TEST(Kernels, SimilaritiesAgreeBitForBit) {
  const auto m = rows(3001, 64, 1);
  const auto q = rows(1, 64, 2);
  std::vector<double> a(3001), b(3001);
  serial::similarities(m, 64, q, a);
  parallel::similarities(m, 64, q, b);
  EXPECT_EQ(a, b);
}

TEST(Kernels, AboveThresholdAgreesAndIsStrict) {
  const auto m = rows(5000, 16, 3);
  const auto q = rows(1, 16, 4);
  const auto a = serial::above_threshold(m, 16, q, 0.3);
  const auto b = parallel::above_threshold(m, 16, q, 0.3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].row, b[i].row);
    EXPECT_EQ(a[i].similarity, b[i].similarity);
    EXPECT_GT(a[i].similarity, 0.3);
  }
  // A row exactly at the threshold is excluded.
  const std::vector<float> unit{1, 0};
  const auto none = serial::above_threshold(unit, 2, unit, 1.0);
  EXPECT_TRUE(none.empty());
}

TEST(Kernels, CosineDistanceMatrix) {
  const auto m = rows(150, 8, 5);
  const auto a = serial::cosine_distance_matrix(m, 150, 8);
  const auto b = parallel::cosine_distance_matrix(m, 150, 8);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 150; ++i) EXPECT_NEAR(a[i * 150 + i], 0.0, 1e-9);
  const std::vector<float> zero_and_unit{0, 0, 1, 0};
  const auto z = serial::cosine_distance_matrix(zero_and_unit, 2, 2);
  EXPECT_DOUBLE_EQ(z[1], 1.0);  // cosine 0 against the zero row
}

TEST(Kernels, HammingWithinMatchesNaive) {
  std::mt19937_64 rng(6);
  std::vector<std::uint64_t> a(300), b(300);
  for (auto& v : a) v = rng();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = i % 7 == 0 ? a[i] ^ (1ULL << (i % 64)) : rng();
  const auto s = serial::hamming_within(a, b, 3);
  const auto p = parallel::hamming_within(a, b, 3);
  std::size_t naive = 0;
  for (auto x : a)
    for (auto y : b) naive += std::popcount(x ^ y) <= 3;
  EXPECT_EQ(s.size(), naive);
  ASSERT_EQ(s.size(), p.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].a, p[i].a);
    EXPECT_EQ(s[i].b, p[i].b);
  }
}
