#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "fpe/annotation_router.hpp"
#include "fpe/config.hpp"
#include "fpe/datastore.hpp"
#include "fpe/evaluator.hpp"
#include "fpe/prototype_miner.hpp"
#include "fpe/quality_gate.hpp"
#include "fpe/retriever.hpp"

namespace fpe::loop {

enum class LoopStatus { Running, Plateaued, BudgetExhausted, Halted };
std::string_view to_string(LoopStatus s);
LoopStatus parse_status(std::string_view s);

struct IterationState {
  int t = 0;
  std::string base_model_tag;
  std::string model_tag;
  // Baseline first, then one snapshot per completed iteration: t + 1 entries.
  std::vector<eval::MetricsSnapshot> metrics_history;
  std::int64_t budget_spent = 0;
  std::vector<std::int64_t> annotated;  // per completed iteration
  std::string failure_pool_ref;
  std::string prototypes_ref;
  std::vector<std::string> exported_sets;  // relative to the artifacts root
  LoopStatus status = LoopStatus::Running;
  std::string halt_reason;
};

Json to_json(const IterationState& s);
IterationState state_from_json(const Json& j);

// True iff each of the last `patience` completed iterations improved overall accuracy
// by less than epsilon. A history of one entry has nothing to judge.
bool check_plateau(std::span<const double> overall_acc, double epsilon, int patience);
bool check_plateau(std::span<const eval::MetricsSnapshot> history, double epsilon, int patience);

// Writes {image_ref, question, answer, task, modality, iteration} per resolved record,
// ordered by (sample_id, qa_index); rejected records are skipped and a pending one is an
// error. Returns the number of exported records.
std::size_t export_training_set(std::span<const annotate::AnnotationRecord> records,
                                const std::filesystem::path& path);

// Phase functions. The engine and the per-phase CLI subcommands both go through these,
// so either path produces the same artifacts from the same inputs.

eval::FailurePool find_failures(std::span<const eval::EvalItem> dev, ModelClient& model, const EngineConfig& cfg,
                                DescriptionScorer* scorer);

// Empty set (with a warning) when fewer than two failures survive fusion.
proto::PrototypeSet mine_prototypes(const eval::FailurePool& pool, const Datastore& store,
                                    TextEmbedClient& text_embedder, const EngineConfig& cfg);

// Prototype-driven selection, or a seeded uniform draw when `prototypes` is empty.
retrieve::AnnotationSet select_samples(const Datastore& store, const proto::PrototypeSet& prototypes,
                                       std::span<const double> e, std::int64_t budget,
                                       const std::unordered_set<std::string>& exclusions, const EngineConfig& cfg,
                                       int iteration);

// tau_H from config, else the configured quantile of the model's dev-set entropies.
annotate::Thresholds routing_thresholds(std::span<const eval::EvalItem> dev, ModelClient& model,
                                        const EngineConfig& cfg, DescriptionScorer* scorer);

// Every QA item of every selected sample, annotated and routed; sorted by record id.
std::vector<annotate::AnnotationRecord> annotate_samples(const Datastore& store, const retrieve::AnnotationSet& set,
                                                         ModelClient& model, OracleClient& oracle,
                                                         const annotate::AgreementScorer& agreement,
                                                         const annotate::Thresholds& thresholds,
                                                         const EngineConfig& cfg, int iteration);

// One disposition per resolved (non-rejected) record, ordered by (sample_id, qa_index).
// Image dedup runs per sample against `prior` (hashes of already exported samples);
// description answers then go through the TF-IDF diversity filter.
std::vector<quality::Disposition> quality_check(std::span<const annotate::AnnotationRecord> records,
                                                const Datastore& store, const EngineConfig& cfg,
                                                std::span<const quality::HashedRecord> prior = {});

// Samples annotated in earlier iterations (rejected ones return to the pool).
std::unordered_set<std::string> excluded_samples(std::span<const std::filesystem::path> prior_dirs);
// Hashes of samples already exported from earlier iterations, for cross-iteration dedup.
std::vector<quality::HashedRecord> exported_hashes(std::span<const std::filesystem::path> prior_dirs,
                                                   const Datastore& store);

// Records whose disposition is kept.
std::vector<annotate::AnnotationRecord> kept_records(std::span<const annotate::AnnotationRecord> records,
                                                     std::span<const quality::Disposition> report);

struct Clients {
  ModelResolver* resolver = nullptr;
  OracleClient* oracle = nullptr;
  TrainerClient* trainer = nullptr;
  TextEmbedClient* text_embedder = nullptr;
  DescriptionScorer* scorer = nullptr;
  const annotate::AgreementScorer* agreement = nullptr;
  // In-process reviewer; called with the queue and iteration when review starts.
  std::function<std::size_t(annotate::ReviewQueue&, int)> auto_review;
};

// Drives evaluate -> prototypes -> retrieve -> annotate -> review -> quality -> export
// -> train -> measure. Each phase persists its artifacts under iter-<t>/ and records
// their content hashes; a rerun skips every phase whose artifacts are intact, so a crash
// at any point resumes to the same final state.
class Engine {
 public:
  Engine(EngineConfig config, Datastore& store, Clients clients, annotate::ReviewQueue& queue);

  const EngineConfig& config() const { return config_; }
  std::filesystem::path iteration_dir(int t) const;

  // Persisted state, or a fresh one with the baseline dev metrics.
  IterationState state();
  IterationState run_iteration();
  IterationState run(int max_iter);

  // Loads every persisted iteration's records (and review journals) into the queue.
  void hydrate_queue();

 private:
  IterationState run_iteration_locked(IterationState s);
  void save_state(const IterationState& s) const;
  void log_event(int t, const std::string& phase, const std::string& artifact, const Json& counts) const;
  std::vector<std::filesystem::path> prior_dirs(int t) const;

  EngineConfig config_;
  Datastore& store_;
  Clients clients_;
  annotate::ReviewQueue& queue_;
  std::mutex run_mu_;
};

}  // namespace fpe::loop
