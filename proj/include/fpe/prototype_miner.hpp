#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/clients.hpp"
#include "fpe/datastore.hpp"
#include "fpe/evaluator.hpp"

namespace fpe::proto {

struct FusedFeature {
  std::string key;  // QaRef::key() of the failure case
  std::string sample_id;
  std::size_t visual_dim = 0;
  std::vector<float> fused;  // [visual ; lambda * qa_text_embedding]
  CapabilityLabels labels;

  std::span<const float> visual() const { return {fused.data(), visual_dim}; }
};

// Text fed to the QA embedder: the question followed by the model's most frequent
// answer across the runs (the erroneous answer, which is what characterises the failure).
std::string fusion_text(const QAItem& qa, std::span<const std::string> transcripts);

// Throws ClientError when the text embedder fails or returns a zero vector.
FusedFeature fuse(const eval::FailureCase& failure, const Sample& sample, const QAItem& qa,
                  TextEmbedClient& text_embedder, double lambda);

struct FuseReport {
  std::vector<FusedFeature> features;
  std::vector<std::string> skipped;  // case keys whose embedding failed
};

// Fuses every case; embedder failures skip the case and are logged.
FuseReport fuse_all(const eval::FailurePool& pool, const Datastore& store,
                    TextEmbedClient& text_embedder, double lambda);

enum class Linkage { Average, Single, Complete };

// Merge of the clusters represented by their smallest leaf indices.
struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double height = 0.0;
};

// Merges in non-decreasing height order (n - 1 of them for n leaves).
struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;
};

// Nearest-neighbour-chain agglomeration over a dense n x n distance matrix.
Dendrogram agglomerate(std::span<const double> distances, std::size_t n, Linkage linkage);

// Undo the last k - 1 merges; labels numbered by smallest member index.
std::vector<int> cut(const Dendrogram& d, std::size_t k);

// Mean silhouette; members of singleton clusters contribute 0.
double mean_silhouette(std::span<const double> distances, std::size_t n, std::span<const int> labels);

struct ClusterOptions {
  std::size_t k_min = 2;
  std::size_t k_max = 20;
  Linkage linkage = Linkage::Average;
  bool parallel = true;
};

struct Clustering {
  std::vector<int> assignments;  // label per input feature, clusters ordered by smallest key
  std::size_t n_clusters = 0;
  std::vector<std::pair<std::size_t, double>> silhouette_by_k;
  bool degenerate = false;  // all features identical
};

// Cuts the cosine-distance dendrogram at the k in [k_min, k_max] with maximal mean
// silhouette; ties go to the smaller k. k_max is clamped to n - 1 (two features give
// the single valid cut k = 2). Throws ValidationError("insufficient failures") for n < 2.
Clustering cluster(std::span<const FusedFeature> features, const ClusterOptions& opts);

struct FailurePrototype {
  std::string prototype_id;
  std::vector<float> centroid;       // mean fused vector
  std::vector<float> visual_anchor;  // unit norm
  std::vector<std::string> member_ids;
  std::vector<std::size_t> dominant_capabilities;
};

struct PrototypeSet {
  std::vector<FailurePrototype> prototypes;
  // Clusters whose mean visual vector vanished ("degenerate centroid"); their members
  // were reassigned to the nearest anchored prototype.
  std::vector<std::vector<std::string>> unanchored;
};

// dominant_capabilities: dims present among members, by descending member count (ties to
// the lower index), at most `max_dominant` of them.
PrototypeSet extract_prototypes(const Clustering& clustering, std::span<const FusedFeature> features,
                                std::size_t max_dominant = 3);

// Prototype file: a header line {"N_c": n} followed by one record per prototype.
void write_prototypes(const std::filesystem::path& path, const PrototypeSet& set);
PrototypeSet read_prototypes(const std::filesystem::path& path);
Json to_json(const FailurePrototype& p);

}  // namespace fpe::proto
