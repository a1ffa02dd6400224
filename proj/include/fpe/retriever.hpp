#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fpe/prototype_miner.hpp"
#include "fpe/vector_index.hpp"

namespace fpe::retrieve {

inline constexpr double kDefaultTauSim = 0.75;
inline constexpr std::int64_t kDefaultBudget = 2000;

// Per-dimension integer quotas proportional to e_k^alpha (0^0 = 1, so alpha = 0 is
// uniform), rounded by largest remainder with ties to the lower index; they always sum
// to `budget`. All-zero weights fall back to uniform quotas with a warning.
std::vector<std::int64_t> allocate_budget(std::span<const double> e, double alpha, std::int64_t budget);

struct AnnotationEntry {
  std::string sample_id;
  std::string source_prototype;  // "" for uniform draws
  int target_dimension = -1;     // -1 for uniform draws
  double similarity = 0.0;
};

struct Relaxation {
  std::string prototype_id;
  double tau = 0.0;
  std::size_t found = 0;
};

struct AnnotationSet {
  std::vector<AnnotationEntry> entries;
  std::vector<double> weights;        // normalized e_k^alpha
  std::vector<std::int64_t> quotas;   // initial allocation
  std::vector<std::int64_t> filled;   // per dimension, after redistribution
  std::int64_t budget = 0;
  std::int64_t shortfall = 0;         // budget - entries.size()
  std::vector<Relaxation> relaxations;
};

struct RetrieveOptions {
  double alpha = 1.0;
  double tau_sim = kDefaultTauSim;
  std::int64_t budget = kDefaultBudget;
  double relax_step = 0.05;
  double relax_floor = 0.5;
};

// Neighbourhood of one anchor; an empty result is retried with tau lowered by
// relax_step down to relax_floor, each step logged into `relaxations`.
std::vector<Neighbor> relaxed_neighborhood(const VectorIndex& index, const proto::FailurePrototype& p,
                                           const RetrieveOptions& opts, std::vector<Relaxation>* relaxations);

// Fills each dimension's quota from the union of neighbourhoods of prototypes whose
// dominant capabilities include that dimension, best similarity first, skipping
// `exclusions`. Dimensions are served in descending quota order. A sample reached by
// several prototypes is taken once and attributed to the one it is most similar to.
// Unfilled quota is redistributed over dimensions that still have candidates in
// proportion to their e_k^alpha mass.
AnnotationSet build_annotation_set(const VectorIndex& index, std::span<const proto::FailurePrototype> prototypes,
                                   std::span<const double> e, const RetrieveOptions& opts,
                                   const std::unordered_set<std::string>& exclusions);

// `budget` pool ids drawn uniformly without replacement (seeded, order-independent).
AnnotationSet sample_uniform(const VectorIndex& index, std::int64_t budget,
                             const std::unordered_set<std::string>& exclusions, std::uint64_t seed);

// One record per line {sample_id, source_prototype, target_dimension, similarity}.
void write_annotation_set(const std::filesystem::path& path, const AnnotationSet& set);
AnnotationSet read_annotation_set(const std::filesystem::path& path);

}  // namespace fpe::retrieve
