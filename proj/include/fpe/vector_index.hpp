#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fpe/datastore.hpp"
#include "fpe/kernels.hpp"

namespace fpe {

struct Neighbor {
  std::string id;
  double similarity = 0.0;
};

// Exact cosine index over unit-norm rows. Immutable once built; queries may run
// concurrently. An optional coarse partition prunes whole partitions only when an
// angular bound proves no member can pass the threshold, so results always equal a
// brute-force scan.
class VectorIndex {
 public:
  VectorIndex() = default;
  VectorIndex(std::vector<std::string> ids, EmbeddingMatrix matrix);
  static VectorIndex from_pool(const Datastore& store);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return matrix_.dim; }
  const std::vector<std::string>& ids() const { return ids_; }
  const EmbeddingMatrix& matrix() const { return matrix_; }

  // Pool rows with cos(anchor, row) strictly greater than tau, ordered by descending
  // similarity then id. Throws ValidationError unless anchor is unit-norm (1e-4) and
  // 0 <= tau < 1.
  std::vector<Neighbor> neighborhood(std::span<const float> anchor, double tau) const;

  // Reorders rows into `partitions` coarse cells (evenly spaced seed rows plus a few
  // spherical k-means rounds); cells left empty are dropped. 0 or 1 removes partitioning.
  void build_partitions(std::size_t partitions, int rounds = 3);
  std::size_t partition_count() const { return cells_.size(); }
  // Rows actually scanned by the last neighborhood() call on this thread.
  static std::size_t last_scanned();

  // "FPEX", uint32 D, uint64 count, then per id uint32 length + bytes, then the float32
  // matrix laid out as in the embedding matrix file.
  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

 private:
  struct Cell {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<float> centroid;  // unit
    double min_cos = 1.0;         // smallest cos(centroid, member)
  };

  std::vector<std::string> ids_;
  EmbeddingMatrix matrix_;
  std::vector<Cell> cells_;
};

}  // namespace fpe
