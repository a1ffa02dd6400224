#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/clients.hpp"
#include "fpe/datastore.hpp"

namespace fpe::eval {

struct GradeResult {
  bool correct = false;
  std::optional<double> score;  // description items only
};

// Perception: the answer is resolved to an option (see options::resolve) and compared
// with the resolved gold option. Description: delegated to `scorer`; counted correct when
// score >= description_pass * max_score. Throws ValidationError("scorer required") for a
// description item without a scorer.
GradeResult grade(std::string_view answer_text, const QAItem& qa, DescriptionScorer* scorer,
                  double description_pass = 0.5);

// One (sample, question) pair with the sample fields evaluation needs.
struct EvalItem {
  QaRef ref;
  QAItem qa;
  std::string image_ref;
  Modality modality = Modality::MRI;
  CapabilityLabels labels;
};

std::vector<EvalItem> eval_items(const Datastore& store, Split split);

struct FailureCase {
  QaRef ref;
  double error_rate = 0.0;
  int wrong_runs = 0;
  int runs = 0;
  CapabilityLabels labels;
  std::vector<std::string> transcripts;
};

struct Incident {
  QaRef ref;
  int run = 0;
  std::string message;
};

struct FailurePool {
  int runs = 0;
  double gamma = 0.0;
  bool inclusive = false;
  std::vector<FailureCase> cases;
  std::vector<Incident> incidents;
};

struct CollectOptions {
  int runs = 5;
  double gamma = 0.6;
  // false: error_rate > gamma ("exceeds"); true: error_rate >= gamma.
  bool inclusive = false;
  std::size_t parallelism = 1;
  DescriptionScorer* scorer = nullptr;
  double description_pass = 0.5;
};

// Runs every item `runs` times. A run whose client call fails (or returns a malformed
// answer) is retried once, then counted wrong and logged as an incident. Throws
// ClientError when every single run fails.
FailurePool collect_failures(std::span<const EvalItem> items, ModelClient& model,
                             const CollectOptions& opts);

struct ErrorDistribution {
  std::vector<double> e;
  std::vector<std::size_t> support_counts;  // dev items labeled k; 0 flags an unsupported dim
  std::vector<std::size_t> failure_counts;  // failure cases labeled k
};

// e_k = |failures labeled k| / |dev items labeled k|, 0 when the denominator is 0.
ErrorDistribution error_distribution(const FailurePool& pool, std::span<const EvalItem> dev);

struct MetricsSnapshot {
  std::string model_tag;
  std::size_t items = 0;
  double overall_acc = 0.0;  // over perception items
  std::map<QuestionType, std::optional<double>> per_type_acc;  // yes_no/what/how; nullopt = absent
  std::map<Modality, double> per_modality_acc;
  std::optional<double> description_score;  // mean normalized score, when any description items

  bool operator==(const MetricsSnapshot&) const = default;
};

struct MetricsOptions {
  std::size_t parallelism = 1;
  DescriptionScorer* scorer = nullptr;
  double description_pass = 0.5;
};

// Single pass (run index 0). When `answers` is given it receives the raw answer per item
// (failed calls leave an empty answer).
MetricsSnapshot dev_metrics(std::span<const EvalItem> items, ModelClient& model,
                            const MetricsOptions& opts, std::vector<ModelAnswer>* answers = nullptr);

// Throws ClientError on an answer violating the client contract.
void check_answer(const ModelAnswer& a);

Json to_json(const FailureCase& c);
FailureCase failure_case_from_json(const Json& j);
// Failure pool file: one case per line.
void write_failure_pool(const std::filesystem::path& path, const FailurePool& pool);
FailurePool read_failure_pool(const std::filesystem::path& path);
Json to_json(const ErrorDistribution& d);
ErrorDistribution error_distribution_from_json(const Json& j);
Json to_json(const MetricsSnapshot& m);
MetricsSnapshot metrics_from_json(const Json& j);

}  // namespace fpe::eval
