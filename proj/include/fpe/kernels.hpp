#pragma once

// Data-parallel inner loops. Each kernel exists twice: `serial` is the plain reference
// kept for testing, `parallel` is the OpenMP version used by the engine. Both accumulate
// dot products in double in index order, so they agree bit-for-bit row by row.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fpe::kernels {

struct Hit {
  std::uint32_t row;
  double similarity;
};

struct HammingHit {
  std::uint32_t a;
  std::uint32_t b;
  int distance;
};

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

namespace serial {

// out[r] = <matrix row r, query> for every row of a row-major (rows x dim) matrix.
void similarities(std::span<const float> matrix, std::size_t dim, std::span<const float> query,
                  std::span<double> out);

// Rows whose similarity is strictly greater than `threshold`, ascending row order.
std::vector<Hit> above_threshold(std::span<const float> matrix, std::size_t dim,
                                 std::span<const float> query, double threshold);

// Dense n x n cosine distance (1 - cos). Zero rows have cosine 0 to everything.
std::vector<double> cosine_distance_matrix(std::span<const float> rows, std::size_t n,
                                           std::size_t dim);

// All (i in a, j in b) with popcount(a[i] ^ b[j]) <= max_distance, ordered by (i, j).
std::vector<HammingHit> hamming_within(std::span<const std::uint64_t> a,
                                       std::span<const std::uint64_t> b, int max_distance);

}  // namespace serial

namespace parallel {

void similarities(std::span<const float> matrix, std::size_t dim, std::span<const float> query,
                  std::span<double> out);
std::vector<Hit> above_threshold(std::span<const float> matrix, std::size_t dim,
                                 std::span<const float> query, double threshold);
std::vector<double> cosine_distance_matrix(std::span<const float> rows, std::size_t n,
                                           std::size_t dim);
std::vector<HammingHit> hamming_within(std::span<const std::uint64_t> a,
                                       std::span<const std::uint64_t> b, int max_distance);

}  // namespace parallel

}  // namespace fpe::kernels
