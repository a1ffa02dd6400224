#pragma once

// Deterministic simulated world and clients. Every response is a pure function of the
// world seed and the request, so loops replay byte-for-byte in any process and under any
// thread interleaving.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fpe/annotation_router.hpp"
#include "fpe/clients.hpp"
#include "fpe/datastore.hpp"

namespace fpe::sim {

// Counter-based streams: uniform in [0, 1) keyed by (seed, stream name, key, counter).
double u01(std::uint64_t seed, std::string_view stream, std::string_view key, std::uint64_t counter = 0);
std::uint64_t mix(std::uint64_t seed, std::string_view stream, std::string_view key, std::uint64_t counter = 0);

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t k = 3;
  std::size_t dim = 32;
  std::size_t pool_size = 5000;
  std::size_t dev_size = 300;
  std::size_t test_size = 0;
  std::vector<double> base_error{0.05, 0.05, 0.6};
  std::vector<double> scales{400.0, 400.0, 400.0};  // s_k of the mock trainer
  double spread = 0.6;             // norm of the per-point Gaussian offset from its center
  double duplicate_fraction = 0.03;  // pool items that near-duplicate an earlier one
  double kappa = 0.9;              // entropy-error coupling
  double oracle_error = 0.1;
  double reject_rate = 0.08;       // simulated reviewer
  std::size_t choices = 4;

  bool operator==(const WorldConfig&) const = default;
};

// Throws ValidationError for inconsistent sizes or rates.
void validate(const WorldConfig& c);

struct SimItem {
  std::size_t dim = 0;      // capability dimension (one-hot label)
  std::size_t truth = 0;    // correct option index
  std::uint64_t content = 0;  // near-duplicates share content
  std::size_t sample = 0;   // index into SimWorld::samples()
};

class SimWorld {
 public:
  // pool_size >= dev_size >= k >= 2; k <= dim, otherwise the orthogonal cluster centers
  // required for inter-center cosine <= 0.3 cannot exist.
  static std::shared_ptr<const SimWorld> generate(const WorldConfig& config);

  const WorldConfig& config() const { return config_; }
  // Pool, then dev, then test. Pool QA items carry no gold answer.
  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<QAItem>& qa() const { return qa_; }
  const std::vector<std::vector<float>>& centers() const { return centers_; }

  const SimItem* lookup(std::string_view image_ref) const;
  const SimItem& item(std::size_t sample) const { return items_[sample]; }
  std::string truth_text(const SimItem& item) const;

  // e_k = base_k * exp(-n_k / s_k)
  std::vector<double> error_rates(std::span<const std::int64_t> trained_counts) const;
  // 1 - mean over dev items of the error rate of their dimension.
  double expected_dev_accuracy(std::span<const double> error_rates) const;

  // Ingests every sample and QA item; the store must have matching D and K.
  IngestReport ingest_into(Datastore& store) const;

 private:
  WorldConfig config_;
  std::vector<std::vector<float>> centers_;
  std::vector<Sample> samples_;
  std::vector<QAItem> qa_;
  std::vector<SimItem> items_;
  std::unordered_map<std::string, std::size_t> by_ref_;
  std::vector<std::size_t> dev_per_dim_;
};

// "mock:<seed>" or "mock:<seed>:n=<n_1>,...,<n_K>" (trained counts per dimension).
struct ModelTag {
  std::uint64_t seed = 0;
  std::vector<std::int64_t> counts;
};
std::optional<ModelTag> parse_tag(std::string_view tag);
std::string format_tag(const ModelTag& tag);
bool is_mock(std::string_view spec);
std::uint64_t mock_seed(std::string_view spec);

class SimModel final : public ModelClient {
 public:
  SimModel(std::shared_ptr<const SimWorld> world, std::vector<std::int64_t> counts);
  ModelAnswer answer(const AnswerRequest& request) override;
  std::string identity() const override { return tag_; }
  const std::vector<double>& error_rates() const { return err_; }

 private:
  std::shared_ptr<const SimWorld> world_;
  std::vector<double> err_;
  std::string tag_;
};

class SimOracle final : public OracleClient {
 public:
  explicit SimOracle(std::shared_ptr<const SimWorld> world) : world_(std::move(world)) {}
  std::string annotate(const AnswerRequest& request) override;
  std::string identity() const override;

 private:
  std::shared_ptr<const SimWorld> world_;
};

class SimEmbedder final : public EmbeddingProvider {
 public:
  explicit SimEmbedder(std::shared_ptr<const SimWorld> world) : world_(std::move(world)) {}
  std::vector<float> embed_image(const std::string& image_ref) override;

 private:
  std::shared_ptr<const SimWorld> world_;
};

// Signed feature hashing of normalized tokens.
class SimTextEmbedder final : public TextEmbedClient {
 public:
  explicit SimTextEmbedder(std::size_t dim = 64) : dim_(dim) {}
  std::vector<float> embed_text(const std::string& text) override;
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

// 5-point scale: 5 * token F1 against the gold answer.
class SimScorer final : public DescriptionScorer {
 public:
  double score(const std::string& answer, const QAItem& qa) override;
  double max_score() const override { return 5.0; }
};

// Counts correctly labeled, distinct-content training records per dimension across the
// given sets and adds them to the base tag's counts.
class SimTrainer final : public TrainerClient {
 public:
  explicit SimTrainer(std::shared_ptr<const SimWorld> world) : world_(std::move(world)) {}
  std::string fine_tune(std::span<const std::filesystem::path> training_sets, const std::string& base_model_tag,
                        const ProgressFn& progress) override;

 private:
  std::shared_ptr<const SimWorld> world_;
};

class SimResolver final : public ModelResolver {
 public:
  explicit SimResolver(std::shared_ptr<const SimWorld> world) : world_(std::move(world)) {}
  std::shared_ptr<ModelClient> resolve(const std::string& tag) override;

 private:
  std::shared_ptr<const SimWorld> world_;
};

// Expert stand-in: rejects with the configured rate, accepts a correct pending label,
// otherwise edits in the true answer.
struct ReviewDecision {
  annotate::ReviewAction action = annotate::ReviewAction::Accept;
  std::string edited_text;
};
ReviewDecision simulated_review(const SimWorld& world, const annotate::AnnotationRecord& record,
                                bool accept_adopts_self = false);
// Resolves every pending record of `iteration` in queue order; returns how many.
std::size_t review_all(const SimWorld& world, annotate::ReviewQueue& queue, int iteration,
                       bool accept_adopts_self = false);

// Closed-form expected total error sum_k e_k exp(-n_k / s_k) under the mock trainer.
double total_error(std::span<const double> e, std::span<const std::int64_t> n, std::span<const double> s);

struct Enumeration {
  std::vector<std::int64_t> best;
  double best_error = 0.0;
  std::size_t allocations = 0;
};
// Every integer allocation of `budget` over e.size() dimensions.
Enumeration enumerate_allocations(std::span<const double> e, std::span<const double> s, std::int64_t budget);

}  // namespace fpe::sim
