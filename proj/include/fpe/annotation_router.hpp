#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/clients.hpp"
#include "fpe/common.hpp"
#include "fpe/datastore.hpp"

namespace fpe::annotate {

enum class Route { AdoptOracle, Escalate, AdoptSelf, ColdStartReview };
enum class ReviewAction { Accept, Edit, Reject };

NLOHMANN_JSON_SERIALIZE_ENUM(Route, {
                                        {Route::AdoptOracle, "adopt_oracle"},
                                        {Route::Escalate, "escalate"},
                                        {Route::AdoptSelf, "adopt_self"},
                                        {Route::ColdStartReview, "cold_start_review"},
                                    })
NLOHMANN_JSON_SERIALIZE_ENUM(ReviewAction, {
                                               {ReviewAction::Accept, "accept"},
                                               {ReviewAction::Edit, "edit"},
                                               {ReviewAction::Reject, "reject"},
                                           })

std::string_view to_string(Route r);
std::string_view to_string(ReviewAction a);
Route parse_route(std::string_view s);
ReviewAction parse_action(std::string_view s);

// Mean negative log-probability of the generated tokens.
double trajectory_entropy(std::span<const double> token_logprobs);

inline constexpr double kDefaultTauAnn = 0.5;
inline constexpr double kDefaultTauHQuantile = 0.8;

struct Thresholds {
  double tau_h = 1.0;
  double tau_ann = kDefaultTauAnn;
};

// t == 0 -> cold_start_review. Otherwise H >= tau_h adopts the oracle (which must be
// present), then delta < tau_ann escalates, else the model's own answer is adopted.
Route route(double h_traj, double delta_ann, const Thresholds& th, int t, bool has_oracle = true);

// Linear-interpolation quantile (the numpy default) of the dev-set entropies.
double calibrate_tau_h(std::span<const double> entropies, double q = kDefaultTauHQuantile);

class AgreementScorer {
 public:
  virtual ~AgreementScorer() = default;
  // In [0, 1]; score(x, x, q) == 1.
  virtual double score(const std::string& y_self, const std::string& y_oracle, const QAItem& qa) const = 0;
};

// Perception: 1 when both answers resolve to the same option, else 0 (unresolvable
// answers fall back to normalized text equality). Description: token-level F1.
class DefaultAgreement final : public AgreementScorer {
 public:
  double score(const std::string& y_self, const std::string& y_oracle, const QAItem& qa) const override;
};

// Token-level F1 over normalized whitespace tokens (multiset overlap). Two empty
// strings agree fully.
double token_f1(std::string_view a, std::string_view b);

struct Review {
  ReviewAction action = ReviewAction::Accept;
  std::string edited_text;
  std::string reviewer;
  // Logical sequence number within the record's iteration, not wall-clock time, so that replays are
  // byte-identical.
  std::int64_t timestamp = 0;
};

enum class Status { Pending, Resolved, Rejected };

struct AnnotationRecord {
  std::string record_id;  // "<t>:<sample_id>:<qa_index>"
  int iteration = 0;
  std::string sample_id;
  std::size_t qa_index = 0;
  std::string image_ref;
  Modality modality = Modality::MRI;
  Task task = Task::Perception;
  std::string question;
  std::vector<std::string> choices;
  ModelAnswer y_self;
  std::optional<std::string> y_oracle;
  double h_traj = 0.0;
  double delta_ann = 0.0;
  Route route = Route::ColdStartReview;
  std::optional<Review> review;
  std::optional<std::string> final_label;
  std::string source_prototype;
  int target_dimension = -1;

  Status status() const;
  bool needs_review() const { return status() == Status::Pending; }
};

std::string record_id(int iteration, const std::string& sample_id, std::size_t qa_index);

Json to_json(const AnnotationRecord& r);
AnnotationRecord record_from_json(const Json& j);

struct AnnotateTarget {
  QaRef ref;
  std::string image_ref;
  Modality modality = Modality::MRI;
  QAItem qa;
  std::string source_prototype;
  int target_dimension = -1;
};

struct AnnotateOptions {
  int iteration = 0;
  Thresholds thresholds;
  // Ablation hook: bypass the three-way rule at t > 0 and use this route for everything.
  std::optional<Route> force_route;
  std::size_t parallelism = 1;
};

// Self-annotation, oracle annotation, entropy, agreement and route for every target.
// Auto-routed records come back resolved; review routes come back pending. Client
// failures are retried once and then raised as ClientError.
std::vector<AnnotationRecord> annotate_and_route(std::span<const AnnotateTarget> targets, ModelClient& model,
                                                 OracleClient& oracle, const AgreementScorer& agreement,
                                                 const AnnotateOptions& opts);

struct QueueFilter {
  std::optional<Modality> modality;
  std::optional<int> iteration;
  std::optional<Route> route;
};

struct QueuePage {
  std::vector<AnnotationRecord> items;
  std::size_t total = 0;  // matching pending records
  std::optional<std::size_t> next_cursor;
};

struct ReviewStats {
  std::size_t total = 0;
  std::size_t routed_to_review = 0;
  std::size_t pending = 0;
  std::size_t accepted = 0;
  std::size_t edited = 0;
  std::size_t rejected = 0;
  std::map<Route, std::size_t> by_route;

  std::size_t reviewed() const { return accepted + edited + rejected; }
  double review_rate() const;  // routed_to_review / total
  double rate(std::size_t n) const;  // n / reviewed
};
Json to_json(const ReviewStats& s);

// Shared, linearizable store of annotation records. All members lock internally.
// When a journal is attached every review is appended to it before the call returns.
class ReviewQueue {
 public:
  ReviewQueue() = default;
  ReviewQueue(const ReviewQueue&) = delete;
  ReviewQueue& operator=(const ReviewQueue&) = delete;

  // Throws Conflict on a duplicate record id.
  void add(std::vector<AnnotationRecord> records);
  // Drops every record of `iteration` (used when an iteration is rebuilt).
  void clear_iteration(int iteration);

  // accept: cold-start -> oracle text; escalated -> oracle text, or the self answer when
  // accept_adopts_self. edit: final_label = edited_text (non-empty). reject: no label.
  // Throws NotFound, Conflict("already resolved") or ValidationError.
  AnnotationRecord submit_review(const std::string& id, ReviewAction action, const std::string& edited_text,
                                 const std::string& reviewer);
  void set_accept_adopts_self(bool v);

  std::optional<AnnotationRecord> get(const std::string& id) const;
  // Pending records ordered by (iteration, H_traj descending, record_id).
  QueuePage queue(const QueueFilter& filter, std::size_t cursor = 0, std::size_t limit = 50) const;
  std::vector<AnnotationRecord> records(std::optional<int> iteration = std::nullopt) const;
  ReviewStats stats(std::optional<int> iteration = std::nullopt) const;
  std::size_t pending(std::optional<int> iteration = std::nullopt) const;

  // Blocks until no record of `iteration` is pending or the timeout expires.
  bool wait_until_drained(int iteration, std::chrono::milliseconds timeout) const;

  void attach_journal(const std::filesystem::path& path);
  // Re-applies a journal written by attach_journal; entries for unknown records are
  // skipped, entries for already-resolved records are ignored.
  std::size_t replay_journal(const std::filesystem::path& path);

 private:
  AnnotationRecord apply_locked(AnnotationRecord& r, ReviewAction action, const std::string& edited_text,
                                const std::string& reviewer, std::int64_t timestamp);

  mutable std::mutex mu_;
  mutable std::condition_variable drained_;
  std::map<std::string, AnnotationRecord> records_;
  std::map<int, std::int64_t> clocks_;  // logical review clock per iteration
  bool accept_adopts_self_ = false;
  std::optional<std::filesystem::path> journal_;
};

void write_records(const std::filesystem::path& path, std::span<const AnnotationRecord> records);
std::vector<AnnotationRecord> read_records(const std::filesystem::path& path);

}  // namespace fpe::annotate
