#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpe/clients.hpp"
#include "fpe/common.hpp"

namespace fpe {

struct Sample {
  std::string id;
  std::string image_ref;
  Modality modality = Modality::MRI;
  std::vector<float> embedding;
  CapabilityLabels capability_labels;
  Split split = Split::Pool;
  std::optional<std::uint64_t> phash;
};

struct QAItem {
  std::string sample_id;
  Task task = Task::Perception;
  QuestionType question_type = QuestionType::What;
  std::string question_text;
  std::vector<std::string> choices;
  // Empty only for unlabeled pool items.
  std::string gold_answer;

  bool operator==(const QAItem&) const = default;
};

// A (sample, question) pair: the unit of evaluation and of failure collection.
struct QaRef {
  std::string sample_id;
  std::size_t qa_index = 0;

  auto operator<=>(const QaRef&) const = default;
  std::string key() const { return sample_id + "#" + std::to_string(qa_index); }
};

// Sample record line. `embedding_row` indexes the binary matrix; ingest input may carry
// the vector inline under "embedding" instead.
Json to_json(const Sample& s, std::optional<std::size_t> embedding_row);
Sample sample_from_json(const Json& j);
Json to_json(const QAItem& q);
QAItem qa_from_json(const Json& j);

struct Rejection {
  std::string id;
  std::string kind;  // "sample" | "qa"
  std::string reason;
};

struct IngestReport {
  std::size_t samples_added = 0;
  std::size_t qa_added = 0;
  std::vector<Rejection> rejected;

  std::vector<std::string> rejected_ids() const;
};

struct HashPair {
  std::string id_a;
  Split split_a = Split::Pool;
  std::string id_b;
  Split split_b = Split::Pool;
  int distance = 0;
};

struct IdCollision {
  std::string id;
  std::vector<Split> splits;
};

struct IntegrityReport {
  bool disjoint = true;
  std::vector<IdCollision> id_collisions;
  std::vector<HashPair> cross_split_hash_pairs;
};

Json to_json(const IngestReport& r);
Json to_json(const IntegrityReport& r);

struct StoreShape {
  std::size_t dim = 512;
  std::size_t capabilities = 0;  // K; no default, the run must choose it
  int dedup_threshold = 5;
};

// Embedding matrix file: "FPE1", uint32 D, uint64 rows, then little-endian float32 rows.
struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<float> values;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const float> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
};

void write_embedding_matrix(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embedding_matrix(const std::filesystem::path& path);

// Pool ids with their row-major unit embeddings, copied out under the read lock.
struct PoolSnapshot {
  std::vector<std::string> ids;
  EmbeddingMatrix matrix;
};

// Persistent sample/QA store. Files under `root`:
//   manifest.json   D, K, split counts, dedup threshold
//   samples.jsonl   one sample record per line (append-only), optional "phash" hex
//   qa.jsonl        one QA record per line (append-only)
//   embeddings.bin  embedding matrix, row i <-> i-th accepted sample
// Single writer, many readers: ingest takes the exclusive lock, every accessor the
// shared one, so readers always see a whole ingest or none of it.
class Datastore {
 public:
  // Opens an existing store, or creates one when `shape` is given and none exists.
  explicit Datastore(std::filesystem::path root, std::optional<StoreShape> shape = std::nullopt);

  Datastore(const Datastore&) = delete;
  Datastore& operator=(const Datastore&) = delete;

  IngestReport ingest(std::span<const Sample> samples, std::span<const QAItem> qa,
                      EmbeddingProvider* embedder = nullptr);
  IntegrityReport verify_split_integrity() const;

  const std::filesystem::path& root() const { return root_; }
  std::size_t dim() const { return shape_.dim; }
  std::size_t capabilities() const { return shape_.capabilities; }
  int dedup_threshold() const { return shape_.dedup_threshold; }

  std::size_t count(Split split) const;
  std::optional<Sample> sample(std::string_view id) const;
  std::vector<Sample> samples(Split split) const;
  std::vector<std::string> ids(Split split) const;
  std::vector<QAItem> qa_for(std::string_view sample_id) const;
  std::optional<QAItem> qa(const QaRef& ref) const;

  struct QaEntry {
    QaRef ref;
    QAItem item;
  };
  std::vector<QaEntry> qa_items(Split split) const;

  PoolSnapshot pool_snapshot() const;

 private:
  struct Entry {
    Sample meta;  // embedding left empty; rows live in `matrix_`
    std::size_t row = 0;
    std::vector<QAItem> qa;
  };

  void load();
  void write_manifest() const;
  Sample materialize(const Entry& e) const;

  std::filesystem::path root_;
  StoreShape shape_;
  mutable std::shared_mutex mutex_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> by_id_;
  EmbeddingMatrix matrix_;
};

}  // namespace fpe
