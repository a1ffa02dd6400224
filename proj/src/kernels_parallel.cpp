#include <algorithm>
#include <bit>
#include <cmath>

#include "fpe/kernels.hpp"

namespace fpe::kernels::parallel {

namespace {
constexpr std::size_t kBlockRows = 4096;

std::size_t block_count(std::size_t rows) { return (rows + kBlockRows - 1) / kBlockRows; }
}  // namespace

void similarities(std::span<const float> matrix, std::size_t dim, std::span<const float> query,
                  std::span<double> out) {
  const std::ptrdiff_t rows = dim == 0 ? 0 : static_cast<std::ptrdiff_t>(matrix.size() / dim);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    out[r] = dot(matrix.subspan(static_cast<std::size_t>(r) * dim, dim), query);
  }
}

std::vector<Hit> above_threshold(std::span<const float> matrix, std::size_t dim,
                                 std::span<const float> query, double threshold) {
  const std::size_t rows = dim == 0 ? 0 : matrix.size() / dim;
  const std::size_t nblocks = block_count(rows);
  std::vector<std::vector<Hit>> per_block(nblocks);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kBlockRows;
    const std::size_t end = std::min(rows, begin + kBlockRows);
    auto& local = per_block[static_cast<std::size_t>(b)];
    for (std::size_t r = begin; r < end; ++r) {
      const double s = dot(matrix.subspan(r * dim, dim), query);
      if (s > threshold) local.push_back({static_cast<std::uint32_t>(r), s});
    }
  }

  std::size_t total = 0;
  for (const auto& v : per_block) total += v.size();
  std::vector<Hit> hits;
  hits.reserve(total);
  for (auto& v : per_block) hits.insert(hits.end(), v.begin(), v.end());
  return hits;
}

std::vector<double> cosine_distance_matrix(std::span<const float> rows, std::size_t n,
                                           std::size_t dim) {
  std::vector<double> norms(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    auto r = rows.subspan(static_cast<std::size_t>(i) * dim, dim);
    norms[static_cast<std::size_t>(i)] = std::sqrt(dot(r, r));
  }
  std::vector<double> out(n * n, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
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
  std::vector<std::vector<HammingHit>> per_row(a.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(a.size()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < b.size(); ++j) {
      const int d = std::popcount(a[i] ^ b[j]);
      if (d <= max_distance) {
        per_row[i].push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), d});
      }
    }
  }
  std::vector<HammingHit> hits;
  for (auto& v : per_row) hits.insert(hits.end(), v.begin(), v.end());
  return hits;
}

}  // namespace fpe::kernels::parallel
