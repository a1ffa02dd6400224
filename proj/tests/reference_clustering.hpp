#pragma once

// Planted-blob fixture and a naive reference clustering shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fpe/prototype_miner.hpp"

namespace fpe::test {

using proto::FusedFeature;

inline FusedFeature feature(const std::string& key, std::vector<float> visual, std::vector<float> text = {},
                     CapabilityLabels labels = {1}) {
  FusedFeature f;
  f.key = key;
  f.sample_id = key;
  f.visual_dim = visual.size();
  f.fused = std::move(visual);
  f.fused.insert(f.fused.end(), text.begin(), text.end());
  f.labels = std::move(labels);
  return f;
}

// Three planted blobs of 20 points around orthogonal centers (cosine distance 1 apart).
struct Blobs {
  std::vector<FusedFeature> features;
  std::vector<int> planted;
  std::vector<std::vector<float>> centers;
};

inline Blobs planted_blobs(std::uint64_t seed, int copies = 1) {
  std::mt19937_64 rng(seed);
  const std::size_t dim = 16;
  Blobs b;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> center(dim, 0.0f);
    center[static_cast<std::size_t>(c) * 5] = 1.0f;
    b.centers.push_back(center);
  }
  std::normal_distribution<double> g(0.0, 0.08);
  for (int i = 0; i < 60; ++i) {
    const int c = i % 3;
    std::vector<float> v = b.centers[static_cast<std::size_t>(c)];
    for (auto& x : v) x = static_cast<float>(x + g(rng));
    CapabilityLabels labels(3, 0);
    labels[static_cast<std::size_t>(c)] = 1;
    for (int k = 0; k < copies; ++k) {
      b.features.push_back(feature("f" + std::to_string(i) + "_" + std::to_string(k), v, {}, labels));
      b.planted.push_back(c);
    }
  }
  return b;
}

// Independent reference: textbook O(n^3) average-linkage with explicit member lists
// and a direct silhouette, over cosine distances computed here.
struct Reference {
  std::size_t k = 0;
  std::vector<int> labels;
};

inline Reference reference_cluster(const std::vector<FusedFeature>& fs, std::size_t k_min, std::size_t k_max) {
  const std::size_t n = fs.size();
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t t = 0; t < fs[i].fused.size(); ++t) {
        dot += double(fs[i].fused[t]) * fs[j].fused[t];
        ni += double(fs[i].fused[t]) * fs[i].fused[t];
        nj += double(fs[j].fused[t]) * fs[j].fused[t];
      }
      d[i * n + j] = 1.0 - dot / std::sqrt(ni * nj);
    }
  }
  std::vector<std::vector<std::size_t>> clusters(n);
  for (std::size_t i = 0; i < n; ++i) clusters[i] = {i};
  std::map<std::size_t, std::vector<int>> cuts;
  auto snapshot = [&] {
    std::vector<int> lab(n);
    for (std::size_t c = 0; c < clusters.size(); ++c)
      for (auto m : clusters[c]) lab[m] = static_cast<int>(c);
    cuts[clusters.size()] = lab;
  };
  snapshot();
  while (clusters.size() > 1) {
    double best = 1e300;
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double s = 0;
        for (auto x : clusters[a])
          for (auto y : clusters[b]) s += d[x * n + y];
        s /= double(clusters[a].size() * clusters[b].size());
        if (s < best) best = s, ba = a, bb = b;
      }
    }
    clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    snapshot();
  }
  Reference ref;
  double best_s = -2;
  for (std::size_t k = k_min; k <= std::min(k_max, n - 1); ++k) {
    const auto& lab = cuts.at(k);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::map<int, std::pair<double, int>> by;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) by[lab[j]].first += d[i * n + j], by[lab[j]].second++;
      if (!by.count(lab[i])) continue;  // singleton contributes 0
      const double a = by[lab[i]].first / by[lab[i]].second;
      double b = 1e300;
      for (auto& [c, v] : by)
        if (c != lab[i]) b = std::min(b, v.first / v.second);
      total += (b - a) / std::max(a, b);
    }
    const double s = total / double(n);
    if (s > best_s + 1e-12) best_s = s, ref.k = k, ref.labels = lab;
  }
  return ref;
}

// Same partition up to relabeling.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ab.count(a[i]) && ab[a[i]] != b[i]) return false;
    if (ba.count(b[i]) && ba[b[i]] != a[i]) return false;
    ab[a[i]] = b[i];
    ba[b[i]] = a[i];
  }
  return true;
}

}  // namespace fpe::test
