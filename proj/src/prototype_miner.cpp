#include "fpe/prototype_miner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/kernels.hpp"

namespace fpe::proto {

std::string fusion_text(const QAItem& qa, std::span<const std::string> transcripts) {
  std::map<std::string, int> counts;
  for (const auto& t : transcripts) {
    if (!t.empty()) ++counts[t];
  }
  // Most frequent answer; ties go to the one seen first.
  std::string modal;
  int best = 0;
  for (const auto& t : transcripts) {
    if (t.empty()) continue;
    if (counts[t] > best) {
      best = counts[t];
      modal = t;
    }
  }
  return modal.empty() ? qa.question_text : qa.question_text + " " + modal;
}

FusedFeature fuse(const eval::FailureCase& failure, const Sample& sample, const QAItem& qa,
                  TextEmbedClient& text_embedder, double lambda) {
  if (lambda < 0.0) throw ValidationError("fusion weight must be >= 0");
  std::vector<float> text = text_embedder.embed_text(fusion_text(qa, failure.transcripts));
  double n2 = 0.0;
  for (float v : text) n2 += static_cast<double>(v) * v;
  if (text.empty() || n2 <= 0.0) throw ClientError("text embedder returned an empty vector");
  const double scale = lambda / std::sqrt(n2);

  FusedFeature f;
  f.key = failure.ref.key();
  f.sample_id = sample.id;
  f.visual_dim = sample.embedding.size();
  f.labels = failure.labels;
  f.fused = sample.embedding;
  f.fused.reserve(f.fused.size() + text.size());
  for (float v : text) f.fused.push_back(static_cast<float>(v * scale));
  return f;
}

FuseReport fuse_all(const eval::FailurePool& pool, const Datastore& store,
                    TextEmbedClient& text_embedder, double lambda) {
  FuseReport report;
  for (const auto& c : pool.cases) {
    auto sample = store.sample(c.ref.sample_id);
    auto qa = store.qa(c.ref);
    if (!sample || !qa) {
      spdlog::warn("failure case {} refers to a missing sample/QA item; skipped", c.ref.key());
      report.skipped.push_back(c.ref.key());
      continue;
    }
    try {
      report.features.push_back(fuse(c, *sample, *qa, text_embedder, lambda));
    } catch (const ClientError& ex) {
      spdlog::warn("text embedding failed for {}: {}; case skipped", c.ref.key(), ex.what());
      report.skipped.push_back(c.ref.key());
    }
  }
  return report;
}

Dendrogram agglomerate(std::span<const double> distances, std::size_t n, Linkage linkage) {
  Dendrogram out;
  out.leaves = n;
  if (n < 2) return out;
  std::vector<double> d(distances.begin(), distances.end());
  std::vector<std::size_t> size(n, 1);
  std::vector<std::size_t> rep(n);  // smallest leaf index in the cluster held by a slot
  std::iota(rep.begin(), rep.end(), 0);
  std::vector<bool> active(n, true);
  std::vector<std::size_t> chain;
  chain.reserve(n);

  std::vector<Merge> found;
  found.reserve(n - 1);
  while (found.size() < n - 1) {
    if (chain.empty()) {
      chain.push_back(static_cast<std::size_t>(std::find(active.begin(), active.end(), true) - active.begin()));
    }
    std::size_t a = 0, b = 0;
    while (true) {
      a = chain.back();
      const bool has_prev = chain.size() >= 2;
      std::size_t best = has_prev ? chain[chain.size() - 2] : n;
      double best_d = has_prev ? d[a * n + best] : std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        if (d[a * n + c] < best_d) {
          best_d = d[a * n + c];
          best = c;
        }
      }
      if (has_prev && best == chain[chain.size() - 2]) {
        b = best;
        break;
      }
      chain.push_back(best);
    }
    chain.pop_back();
    chain.pop_back();

    const double h = d[a * n + b];
    found.push_back({std::min(rep[a], rep[b]), std::max(rep[a], rep[b]), h});

    // Lance-Williams update into the lower slot; the other slot retires.
    const std::size_t keep = std::min(a, b), drop = std::max(a, b);
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == a || c == b) continue;
      const double da = d[a * n + c], db = d[b * n + c];
      double nd = 0.0;
      switch (linkage) {
        case Linkage::Average:
          nd = (size[a] * da + size[b] * db) / static_cast<double>(size[a] + size[b]);
          break;
        case Linkage::Single: nd = std::min(da, db); break;
        case Linkage::Complete: nd = std::max(da, db); break;
      }
      d[keep * n + c] = nd;
      d[c * n + keep] = nd;
    }
    size[keep] = size[a] + size[b];
    rep[keep] = std::min(rep[a], rep[b]);
    active[drop] = false;
  }

  std::stable_sort(found.begin(), found.end(),
                   [](const Merge& x, const Merge& y) { return x.height < y.height; });
  out.merges = std::move(found);
  return out;
}

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

std::vector<int> cut(const Dendrogram& dg, std::size_t k) {
  const std::size_t n = dg.leaves;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const std::size_t apply = k >= n ? 0 : n - k;
  for (std::size_t i = 0; i < apply && i < dg.merges.size(); ++i) {
    const auto ra = find_root(parent, dg.merges[i].a);
    const auto rb = find_root(parent, dg.merges[i].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> labels(n, -1);
  std::map<std::size_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find_root(parent, i);
    auto [it, inserted] = ids.try_emplace(r, static_cast<int>(ids.size()));
    labels[i] = it->second;
  }
  return labels;
}

double mean_silhouette(std::span<const double> dist, std::size_t n, std::span<const int> labels) {
  if (n == 0) return 0.0;
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  double total = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(labels[i]);
    if (sizes[own] <= 1) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[static_cast<std::size_t>(labels[j])] += dist[i * n + j];
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sums.size(); ++c) {
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

Clustering cluster(std::span<const FusedFeature> features, const ClusterOptions& opts) {
  const std::size_t n = features.size();
  if (n < 2) throw ValidationError("insufficient failures");
  if (opts.k_min < 2 || opts.k_max < opts.k_min) throw ValidationError("need 2 <= k_min <= k_max");
  const std::size_t dim = features.front().fused.size();
  std::vector<float> rows;
  rows.reserve(n * dim);
  for (const auto& f : features) {
    if (f.fused.size() != dim) throw ValidationError("fused features differ in length");
    rows.insert(rows.end(), f.fused.begin(), f.fused.end());
  }
  const auto dist = opts.parallel ? kernels::parallel::cosine_distance_matrix(rows, n, dim)
                                  : kernels::serial::cosine_distance_matrix(rows, n, dim);

  Clustering out;
  const bool all_identical = std::all_of(dist.begin(), dist.end(), [](double v) { return v < 1e-12; });
  std::vector<int> raw;
  if (all_identical) {
    spdlog::warn("all {} failure features are identical; returning a single cluster", n);
    out.degenerate = true;
    raw.assign(n, 0);
  } else {
    const auto dg = agglomerate(dist, n, opts.linkage);
    const std::size_t k_hi = n == 2 ? 2 : std::min(opts.k_max, n - 1);
    const std::size_t k_lo = std::min(opts.k_min, k_hi);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
      auto labels = cut(dg, k);
      const double s = mean_silhouette(dist, n, labels);
      out.silhouette_by_k.emplace_back(k, s);
      if (s > best) {
        best = s;
        raw = std::move(labels);
      }
    }
  }

  // Canonical relabelling: clusters ordered by their smallest member key.
  const int k = *std::max_element(raw.begin(), raw.end()) + 1;
  std::vector<std::string> min_key(static_cast<std::size_t>(k));
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (std::size_t i = 0; i < n; ++i) {
    auto l = static_cast<std::size_t>(raw[i]);
    if (!seen[l] || features[i].key < min_key[l]) min_key[l] = features[i].key;
    seen[l] = true;
  }
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return min_key[static_cast<std::size_t>(x)] < min_key[static_cast<std::size_t>(y)];
  });
  std::vector<int> relabel(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i;
  out.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.assignments[i] = relabel[static_cast<std::size_t>(raw[i])];
  out.n_clusters = static_cast<std::size_t>(k);
  return out;
}

namespace {

std::optional<std::vector<float>> normalized_mean(const std::vector<const FusedFeature*>& members,
                                                  bool visual_only) {
  const std::size_t dim = visual_only ? members.front()->visual_dim : members.front()->fused.size();
  std::vector<double> acc(dim, 0.0);
  for (const auto* m : members) {
    for (std::size_t i = 0; i < dim; ++i) acc[i] += m->fused[i];
  }
  double n2 = 0.0;
  for (double& v : acc) {
    v /= static_cast<double>(members.size());
    n2 += v * v;
  }
  std::vector<float> out(dim);
  if (!visual_only) {
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i]);
    return out;
  }
  if (std::sqrt(n2) < 1e-9) return std::nullopt;
  const double inv = 1.0 / std::sqrt(n2);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return out;
}

double cosine_to(std::span<const float> a, std::span<const float> b) {
  const double ab = kernels::dot(a, b), aa = kernels::dot(a, a), bb = kernels::dot(b, b);
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

std::vector<std::size_t> dominant(const std::vector<const FusedFeature*>& members, std::size_t max_dominant) {
  const std::size_t k = members.front()->labels.size();
  std::vector<std::size_t> counts(k, 0);
  for (const auto* m : members) {
    for (std::size_t j = 0; j < k; ++j) counts[j] += m->labels[j] ? 1 : 0;
  }
  std::vector<std::size_t> dims;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] > 0) dims.push_back(j);
  }
  std::stable_sort(dims.begin(), dims.end(), [&](auto x, auto y) { return counts[x] > counts[y]; });
  if (dims.size() > max_dominant) dims.resize(max_dominant);
  return dims;
}

}  // namespace

PrototypeSet extract_prototypes(const Clustering& clustering, std::span<const FusedFeature> features,
                                std::size_t max_dominant) {
  if (clustering.assignments.size() != features.size()) throw Error("clustering/feature size mismatch");
  std::vector<std::vector<const FusedFeature*>> groups(clustering.n_clusters);
  for (std::size_t i = 0; i < features.size(); ++i) {
    groups[static_cast<std::size_t>(clustering.assignments[i])].push_back(&features[i]);
  }

  struct Draft {
    std::vector<const FusedFeature*> members;
    std::vector<float> centroid;
  };
  std::vector<Draft> anchored;
  std::vector<std::vector<const FusedFeature*>> orphans;
  PrototypeSet set;
  for (auto& g : groups) {
    if (g.empty()) throw Error("empty cluster");
    if (normalized_mean(g, true)) {
      anchored.push_back({g, *normalized_mean(g, false)});
    } else {
      spdlog::warn("degenerate centroid: cluster of {} members has zero mean visual vector", g.size());
      std::vector<std::string> keys;
      for (const auto* m : g) keys.push_back(m->key);
      set.unanchored.push_back(std::move(keys));
      orphans.push_back(g);
    }
  }
  if (!anchored.empty()) {
    for (const auto& g : orphans) {
      for (const auto* m : g) {
        std::size_t best = 0;
        double best_c = -2.0;
        for (std::size_t p = 0; p < anchored.size(); ++p) {
          const double c = cosine_to(m->fused, anchored[p].centroid);
          if (c > best_c) {
            best_c = c;
            best = p;
          }
        }
        anchored[best].members.push_back(m);
      }
    }
  }

  for (std::size_t p = 0; p < anchored.size(); ++p) {
    auto& draft = anchored[p];
    FailurePrototype proto;
    proto.prototype_id = "P" + std::to_string(p);
    proto.centroid = *normalized_mean(draft.members, false);
    auto anchor = normalized_mean(draft.members, true);
    if (!anchor) throw Error("prototype anchor vanished after reassignment");
    proto.visual_anchor = std::move(*anchor);
    for (const auto* m : draft.members) proto.member_ids.push_back(m->key);
    proto.dominant_capabilities = dominant(draft.members, max_dominant);
    set.prototypes.push_back(std::move(proto));
  }
  return set;
}

Json to_json(const FailurePrototype& p) {
  return Json{{"prototype_id", p.prototype_id},
              {"visual_anchor", p.visual_anchor},
              {"member_ids", p.member_ids},
              {"dominant_capabilities", p.dominant_capabilities}};
}

void write_prototypes(const std::filesystem::path& path, const PrototypeSet& set) {
  std::vector<Json> lines;
  Json header{{"N_c", set.prototypes.size()}};
  if (!set.unanchored.empty()) header["unanchored"] = set.unanchored;
  lines.push_back(header);
  for (const auto& p : set.prototypes) lines.push_back(to_json(p));
  jsonl::write(path, lines);
}

PrototypeSet read_prototypes(const std::filesystem::path& path) {
  PrototypeSet set;
  bool first = true;
  jsonl::for_each(path, [&](const Json& j) {
    if (first) {
      first = false;
      if (j.contains("unanchored")) set.unanchored = j["unanchored"].get<std::vector<std::vector<std::string>>>();
      return;
    }
    FailurePrototype p;
    p.prototype_id = j.at("prototype_id").get<std::string>();
    p.visual_anchor = j.at("visual_anchor").get<std::vector<float>>();
    p.member_ids = j.at("member_ids").get<std::vector<std::string>>();
    p.dominant_capabilities = j.at("dominant_capabilities").get<std::vector<std::size_t>>();
    set.prototypes.push_back(std::move(p));
  });
  return set;
}

}  // namespace fpe::proto
