#include "fpe/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"

namespace fpe::retrieve {

namespace {

constexpr double kEps = 1e-9;

std::vector<std::int64_t> largest_remainder(std::span<const double> w, std::int64_t budget) {
  const std::size_t k = w.size();
  std::vector<std::int64_t> q(k, 0);
  if (k == 0 || budget <= 0) return q;
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<double> frac(k);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double share = static_cast<double>(budget) * w[i] / total;
    q[i] = static_cast<std::int64_t>(std::floor(share + kEps));
    frac[i] = share - static_cast<double>(q[i]);
    assigned += q[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return frac[a] > frac[b] + kEps;
  });
  for (std::int64_t r = budget - assigned, i = 0; r > 0; --r, ++i) {
    ++q[order[static_cast<std::size_t>(i) % k]];
  }
  return q;
}

std::vector<double> sampling_weights(std::span<const double> e, double alpha) {
  std::vector<double> w(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (e[i] < 0.0) throw ValidationError("error rates must be >= 0");
    w[i] = alpha == 0.0 ? 1.0 : std::pow(e[i], alpha);
  }
  return w;
}

}  // namespace

std::vector<std::int64_t> allocate_budget(std::span<const double> e, double alpha, std::int64_t budget) {
  if (budget < 0) throw ValidationError("budget must be >= 0");
  if (!(alpha >= 0.0)) throw ValidationError("alpha must be >= 0");
  if (e.empty()) throw ValidationError("empty error distribution");
  auto w = sampling_weights(e, alpha);
  if (std::all_of(w.begin(), w.end(), [](double v) { return v <= 0.0; })) {
    spdlog::warn("all error rates are zero; allocating the budget uniformly");
    std::fill(w.begin(), w.end(), 1.0);
  }
  return largest_remainder(w, budget);
}

std::vector<Neighbor> relaxed_neighborhood(const VectorIndex& index, const proto::FailurePrototype& p,
                                           const RetrieveOptions& opts, std::vector<Relaxation>* relaxations) {
  double tau = opts.tau_sim;
  auto hits = index.neighborhood(p.visual_anchor, tau);
  for (int step = 1; hits.empty(); ++step) {
    const double next = opts.tau_sim - step * opts.relax_step;
    if (next < opts.relax_floor - kEps) break;
    tau = std::max(next, 0.0);
    hits = index.neighborhood(p.visual_anchor, tau);
    spdlog::info("prototype {}: empty neighbourhood, relaxed tau_sim to {:.2f} ({} hits)", p.prototype_id, tau,
                 hits.size());
    if (relaxations) relaxations->push_back({p.prototype_id, tau, hits.size()});
  }
  return hits;
}

AnnotationSet build_annotation_set(const VectorIndex& index, std::span<const proto::FailurePrototype> prototypes,
                                   std::span<const double> e, const RetrieveOptions& opts,
                                   const std::unordered_set<std::string>& exclusions) {
  if (prototypes.empty()) throw ValidationError("no prototypes to retrieve with");
  const std::size_t k = e.size();
  AnnotationSet set;
  set.budget = opts.budget;
  set.quotas = allocate_budget(e, opts.alpha, opts.budget);
  auto w = sampling_weights(e, opts.alpha);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  set.weights.resize(k);
  for (std::size_t i = 0; i < k; ++i) set.weights[i] = wsum > 0 ? w[i] / wsum : 1.0 / static_cast<double>(k);

  // Best (similarity, prototype) for every retrieved sample, overall and per dimension.
  struct Best {
    double sim = -2.0;
    std::size_t proto = 0;
  };
  std::unordered_map<std::string, Best> overall;
  std::vector<std::unordered_map<std::string, Best>> per_dim(k);
  for (std::size_t p = 0; p < prototypes.size(); ++p) {
    const auto hits = relaxed_neighborhood(index, prototypes[p], opts, &set.relaxations);
    for (const auto& h : hits) {
      if (exclusions.contains(h.id)) continue;
      auto& o = overall[h.id];
      if (h.similarity > o.sim) o = {h.similarity, p};
      for (std::size_t dim : prototypes[p].dominant_capabilities) {
        if (dim >= k) continue;
        auto& b = per_dim[dim][h.id];
        if (h.similarity > b.sim) b = {h.similarity, p};
      }
    }
  }
  std::vector<std::vector<std::pair<std::string, double>>> ranked(k);
  for (std::size_t dim = 0; dim < k; ++dim) {
    for (const auto& [id, b] : per_dim[dim]) ranked[dim].emplace_back(id, b.sim);
    std::sort(ranked[dim].begin(), ranked[dim].end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
  }

  std::unordered_set<std::string> taken;
  std::vector<std::size_t> cursor(k, 0);
  set.filled.assign(k, 0);
  auto take = [&](std::size_t dim, std::int64_t want) {
    std::int64_t got = 0;
    auto& list = ranked[dim];
    while (got < want && cursor[dim] < list.size()) {
      const auto& id = list[cursor[dim]++].first;
      if (!taken.insert(id).second) continue;
      const auto& o = overall[id];
      set.entries.push_back({id, prototypes[o.proto].prototype_id, static_cast<int>(dim), o.sim});
      ++got;
    }
    set.filled[dim] += got;
    return got;
  };
  auto remaining = [&](std::size_t dim) {
    for (std::size_t c = cursor[dim]; c < ranked[dim].size(); ++c) {
      if (!taken.contains(ranked[dim][c].first)) return true;
    }
    return false;
  };

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return set.quotas[a] > set.quotas[b]; });
  std::int64_t unfilled = 0;
  for (std::size_t dim : order) unfilled += set.quotas[dim] - take(dim, set.quotas[dim]);

  while (unfilled > 0) {
    std::vector<std::size_t> open;
    for (std::size_t dim = 0; dim < k; ++dim) {
      if (remaining(dim)) open.push_back(dim);
    }
    if (open.empty()) break;
    std::vector<double> ow;
    for (auto dim : open) ow.push_back(w[dim]);
    if (std::all_of(ow.begin(), ow.end(), [](double v) { return v <= 0.0; })) std::fill(ow.begin(), ow.end(), 1.0);
    const auto extra = largest_remainder(ow, unfilled);
    std::int64_t got = 0;
    for (std::size_t i = 0; i < open.size(); ++i) got += take(open[i], extra[i]);
    if (got == 0) break;
    unfilled -= got;
  }
  set.shortfall = opts.budget - static_cast<std::int64_t>(set.entries.size());
  if (set.shortfall > 0) {
    spdlog::warn("annotation set short by {} of budget {}", set.shortfall, opts.budget);
  }
  return set;
}

AnnotationSet sample_uniform(const VectorIndex& index, std::int64_t budget,
                             const std::unordered_set<std::string>& exclusions, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  const std::string salt = "uniform:" + std::to_string(seed) + ":";
  for (const auto& id : index.ids()) {
    if (!exclusions.contains(id)) keyed.emplace_back(fnv1a64(salt + id), id);
  }
  std::sort(keyed.begin(), keyed.end());
  AnnotationSet set;
  set.budget = budget;
  const auto n = std::min<std::int64_t>(budget, static_cast<std::int64_t>(keyed.size()));
  for (std::int64_t i = 0; i < n; ++i) set.entries.push_back({keyed[static_cast<std::size_t>(i)].second, "", -1, 0.0});
  set.shortfall = budget - n;
  return set;
}

void write_annotation_set(const std::filesystem::path& path, const AnnotationSet& set) {
  std::vector<Json> lines;
  for (const auto& e : set.entries) {
    lines.push_back({{"sample_id", e.sample_id},
                     {"source_prototype", e.source_prototype},
                     {"target_dimension", e.target_dimension},
                     {"similarity", e.similarity}});
  }
  jsonl::write(path, lines);
}

AnnotationSet read_annotation_set(const std::filesystem::path& path) {
  AnnotationSet set;
  jsonl::for_each(path, [&](const Json& j) {
    set.entries.push_back({j.at("sample_id").get<std::string>(), j.at("source_prototype").get<std::string>(),
                           j.at("target_dimension").get<int>(), j.at("similarity").get<double>()});
  });
  set.budget = static_cast<std::int64_t>(set.entries.size());
  return set;
}

}  // namespace fpe::retrieve
