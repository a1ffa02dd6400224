#include <algorithm>
#include <bit>
#include <cmath>

#include "fpe/kernels.hpp"

namespace fpe::kernels::serial {

void similarities(std::span<const float> matrix, std::size_t dim, std::span<const float> query,
                  std::span<double> out) {
  const std::size_t rows = dim == 0 ? 0 : matrix.size() / dim;
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = dot(matrix.subspan(r * dim, dim), query);
  }
}

std::vector<Hit> above_threshold(std::span<const float> matrix, std::size_t dim,
                                 std::span<const float> query, double threshold) {
  std::vector<Hit> hits;
  const std::size_t rows = dim == 0 ? 0 : matrix.size() / dim;
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = dot(matrix.subspan(r * dim, dim), query);
    if (s > threshold) hits.push_back({static_cast<std::uint32_t>(r), s});
  }
  return hits;
}

std::vector<double> cosine_distance_matrix(std::span<const float> rows, std::size_t n,
                                           std::size_t dim) {
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = rows.subspan(i * dim, dim);
    norms[i] = std::sqrt(dot(r, r));
  }
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double c = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        c = dot(rows.subspan(i * dim, dim), rows.subspan(j * dim, dim)) / (norms[i] * norms[j]);
      }
      const double d = std::clamp(1.0 - c, 0.0, 2.0);
      out[i * n + j] = d;
      out[j * n + i] = d;
    }
  }
  return out;
}

std::vector<HammingHit> hamming_within(std::span<const std::uint64_t> a,
                                       std::span<const std::uint64_t> b, int max_distance) {
  std::vector<HammingHit> hits;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const int d = std::popcount(a[i] ^ b[j]);
      if (d <= max_distance) {
        hits.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), d});
      }
    }
  }
  return hits;
}

}  // namespace fpe::kernels::serial
