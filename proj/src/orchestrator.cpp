#include "fpe/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/prototype_miner.hpp"
#include "fpe/quality_gate.hpp"
#include "fpe/retriever.hpp"
#include "fpe/vector_index.hpp"

namespace fs = std::filesystem;

namespace fpe::loop {

std::string_view to_string(LoopStatus s) {
  switch (s) {
    case LoopStatus::Running: return "running";
    case LoopStatus::Plateaued: return "plateaued";
    case LoopStatus::BudgetExhausted: return "budget_exhausted";
    case LoopStatus::Halted: return "halted";
  }
  return "?";
}

LoopStatus parse_status(std::string_view s) {
  for (auto v : {LoopStatus::Running, LoopStatus::Plateaued, LoopStatus::BudgetExhausted, LoopStatus::Halted}) {
    if (to_string(v) == s) return v;
  }
  throw ValidationError("unknown loop status: " + std::string(s));
}

Json to_json(const IterationState& s) {
  Json history = Json::array();
  for (const auto& m : s.metrics_history) history.push_back(eval::to_json(m));
  return {{"t", s.t},
          {"base_model_tag", s.base_model_tag},
          {"model_tag", s.model_tag},
          {"metrics_history", history},
          {"budget_spent", s.budget_spent},
          {"annotated", s.annotated},
          {"failure_pool_ref", s.failure_pool_ref},
          {"prototypes_ref", s.prototypes_ref},
          {"exported_sets", s.exported_sets},
          {"status", to_string(s.status)},
          {"halt_reason", s.halt_reason}};
}

IterationState state_from_json(const Json& j) {
  IterationState s;
  s.t = j.at("t").get<int>();
  s.base_model_tag = j.at("base_model_tag").get<std::string>();
  s.model_tag = j.at("model_tag").get<std::string>();
  for (const auto& m : j.at("metrics_history")) s.metrics_history.push_back(eval::metrics_from_json(m));
  s.budget_spent = j.at("budget_spent").get<std::int64_t>();
  s.annotated = j.at("annotated").get<std::vector<std::int64_t>>();
  s.failure_pool_ref = j.at("failure_pool_ref").get<std::string>();
  s.prototypes_ref = j.at("prototypes_ref").get<std::string>();
  s.exported_sets = j.at("exported_sets").get<std::vector<std::string>>();
  s.status = parse_status(j.at("status").get<std::string>());
  s.halt_reason = j.value("halt_reason", "");
  return s;
}

bool check_plateau(std::span<const double> acc, double epsilon, int patience) {
  if (patience < 1 || acc.size() < static_cast<std::size_t>(patience) + 1) return false;
  for (std::size_t i = acc.size() - static_cast<std::size_t>(patience); i < acc.size(); ++i) {
    if (acc[i] - acc[i - 1] >= epsilon) return false;
  }
  return true;
}

bool check_plateau(std::span<const eval::MetricsSnapshot> history, double epsilon, int patience) {
  std::vector<double> acc;
  for (const auto& m : history) acc.push_back(m.overall_acc);
  return check_plateau(acc, epsilon, patience);
}

std::size_t export_training_set(std::span<const annotate::AnnotationRecord> records, const fs::path& path) {
  std::vector<const annotate::AnnotationRecord*> keep;
  for (const auto& r : records) {
    switch (r.status()) {
      case annotate::Status::Pending: throw ValidationError("unresolved record in export: " + r.record_id);
      case annotate::Status::Rejected: continue;
      case annotate::Status::Resolved: keep.push_back(&r);
    }
  }
  std::sort(keep.begin(), keep.end(), [](const auto* a, const auto* b) {
    return std::tie(a->sample_id, a->qa_index, a->iteration) < std::tie(b->sample_id, b->qa_index, b->iteration);
  });
  std::vector<Json> lines;
  lines.reserve(keep.size());
  for (const auto* r : keep) {
    lines.push_back({{"image_ref", r->image_ref},
                     {"question", r->question},
                     {"answer", *r->final_label},
                     {"task", r->task},
                     {"modality", r->modality},
                     {"iteration", r->iteration}});
  }
  jsonl::write(path, lines);
  return lines.size();
}

eval::FailurePool find_failures(std::span<const eval::EvalItem> dev, ModelClient& model, const EngineConfig& cfg,
                                DescriptionScorer* scorer) {
  eval::CollectOptions co;
  co.runs = cfg.runs;
  co.gamma = cfg.gamma;
  co.inclusive = cfg.gamma_inclusive;
  co.parallelism = cfg.parallelism;
  co.scorer = scorer;
  co.description_pass = cfg.description_pass;
  return eval::collect_failures(dev, model, co);
}

proto::PrototypeSet mine_prototypes(const eval::FailurePool& pool, const Datastore& store,
                                    TextEmbedClient& text_embedder, const EngineConfig& cfg) {
  proto::PrototypeSet protos;
  if (pool.cases.size() >= 2) {
    const auto fused = proto::fuse_all(pool, store, text_embedder, cfg.lambda);
    if (fused.features.size() >= 2) {
      proto::ClusterOptions cl;
      cl.k_min = cfg.k_min;
      cl.k_max = cfg.k_max;
      protos = proto::extract_prototypes(proto::cluster(fused.features, cl), fused.features);
    }
  }
  if (protos.prototypes.empty()) {
    spdlog::warn("no failure prototypes from {} failures; retrieval falls back to uniform sampling",
                 pool.cases.size());
  }
  return protos;
}

retrieve::AnnotationSet select_samples(const Datastore& store, const proto::PrototypeSet& prototypes,
                                       std::span<const double> e, std::int64_t budget,
                                       const std::unordered_set<std::string>& exclusions, const EngineConfig& cfg,
                                       int iteration) {
  auto index = VectorIndex::from_pool(store);
  if (cfg.partitions > 1) index.build_partitions(cfg.partitions);
  if (prototypes.prototypes.empty()) {
    return retrieve::sample_uniform(index, budget, exclusions,
                                    fnv1a64("iteration:" + std::to_string(iteration), cfg.seed));
  }
  retrieve::RetrieveOptions ro;
  ro.alpha = cfg.alpha;
  ro.tau_sim = cfg.tau_sim;
  ro.budget = budget;
  return retrieve::build_annotation_set(index, prototypes.prototypes, e, ro, exclusions);
}

annotate::Thresholds routing_thresholds(std::span<const eval::EvalItem> dev, ModelClient& model,
                                        const EngineConfig& cfg, DescriptionScorer* scorer) {
  annotate::Thresholds th;
  th.tau_ann = cfg.tau_ann;
  if (cfg.tau_h) {
    th.tau_h = *cfg.tau_h;
    return th;
  }
  std::vector<ModelAnswer> answers;
  eval::MetricsOptions mo{cfg.parallelism, scorer, cfg.description_pass};
  eval::dev_metrics(dev, model, mo, &answers);
  std::vector<double> h;
  for (const auto& a : answers) {
    if (!a.token_logprobs.empty()) h.push_back(annotate::trajectory_entropy(a.token_logprobs));
  }
  th.tau_h = annotate::calibrate_tau_h(h, cfg.tau_h_quantile);
  return th;
}

std::vector<annotate::AnnotationRecord> annotate_samples(const Datastore& store, const retrieve::AnnotationSet& set,
                                                         ModelClient& model, OracleClient& oracle,
                                                         const annotate::AgreementScorer& agreement,
                                                         const annotate::Thresholds& thresholds,
                                                         const EngineConfig& cfg, int iteration) {
  std::vector<annotate::AnnotateTarget> targets;
  for (const auto& e : set.entries) {
    const auto sample = store.sample(e.sample_id);
    if (!sample) throw ValidationError("annotation set names unknown sample " + e.sample_id);
    const auto items = store.qa_for(e.sample_id);
    for (std::size_t q = 0; q < items.size(); ++q) {
      targets.push_back(
          {{e.sample_id, q}, sample->image_ref, sample->modality, items[q], e.source_prototype, e.target_dimension});
    }
  }
  annotate::AnnotateOptions ao;
  ao.iteration = iteration;
  ao.thresholds = thresholds;
  ao.force_route = cfg.force_route;
  ao.parallelism = cfg.parallelism;
  auto records = annotate::annotate_and_route(targets, model, oracle, agreement, ao);
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
  return records;
}

std::vector<quality::Disposition> quality_check(std::span<const annotate::AnnotationRecord> records,
                                                const Datastore& store, const EngineConfig& cfg,
                                                std::span<const quality::HashedRecord> prior) {
  std::vector<const annotate::AnnotationRecord*> live;
  for (const auto& r : records) {
    if (r.status() == annotate::Status::Resolved) live.push_back(&r);
  }
  std::sort(live.begin(), live.end(), [](const auto* a, const auto* b) {
    return std::tie(a->sample_id, a->qa_index, a->iteration) < std::tie(b->sample_id, b->qa_index, b->iteration);
  });
  std::map<std::string, quality::DroppedPair> dropped;  // by record id
  if (cfg.quality_gate) {
    std::vector<quality::HashedRecord> hashed;
    for (const auto* r : live) {
      if (!hashed.empty() && hashed.back().id == r->sample_id) continue;
      const auto s = store.sample(r->sample_id);
      hashed.push_back({r->sample_id, s ? s->phash : std::nullopt});
    }
    std::map<std::string, quality::DroppedPair> by_sample;
    for (const auto& d : quality::dedup(hashed, cfg.dedup_hamming, prior).dropped) by_sample[d.dropped] = d;
    std::vector<quality::TextRecord> descriptions;
    for (const auto* r : live) {
      if (auto it = by_sample.find(r->sample_id); it != by_sample.end()) {
        dropped[r->record_id] = it->second;
      } else if (r->task == Task::Description) {
        descriptions.push_back({r->record_id, *r->final_label});
      }
    }
    for (const auto& d : quality::diversity_filter(descriptions, cfg.tfidf_cos).dropped) dropped[d.dropped] = d;
  }
  std::vector<quality::Disposition> out;
  for (const auto* r : live) {
    quality::Disposition d;
    d.record_id = r->record_id;
    if (auto it = dropped.find(r->record_id); it != dropped.end()) {
      d.kept = false;
      d.reason = it->second.reason;
      d.matched_id = it->second.matched;
      d.measure = it->second.measure;
    } else {
      d.reason = cfg.quality_gate ? "passed" : "gate disabled";
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<annotate::AnnotationRecord> kept_records(std::span<const annotate::AnnotationRecord> records,
                                                     std::span<const quality::Disposition> report) {
  std::unordered_set<std::string> kept;
  for (const auto& d : report) {
    if (d.kept) kept.insert(d.record_id);
  }
  std::vector<annotate::AnnotationRecord> out;
  for (const auto& r : records) {
    if (kept.contains(r.record_id)) out.push_back(r);
  }
  return out;
}

namespace {

constexpr const char* kPhases[] = {"evaluate", "prototypes", "retrieve", "annotate", "review",
                                   "quality",  "export",     "train",    "measure"};

std::size_t phase_order(const std::string& phase) {
  for (std::size_t i = 0; i < std::size(kPhases); ++i) {
    if (phase == kPhases[i]) return i;
  }
  throw Error("unknown phase " + phase);
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a64(jsonl::read_file(p))); }

// Per-iteration record of completed phases and the content hashes of their artifacts.
class PhaseLedger {
 public:
  explicit PhaseLedger(fs::path dir) : dir_(std::move(dir)) {
    if (fs::exists(file())) entries_ = Json::parse(jsonl::read_file(file())).at("phases");
  }

  bool done(const std::string& phase) const {
    for (const auto& e : entries_) {
      if (e.at("phase") != phase) continue;
      for (const auto& [name, hash] : e.at("files").items()) {
        if (!fs::exists(dir_ / name) || file_hash(dir_ / name) != hash.get<std::string>()) return false;
      }
      return true;
    }
    return false;
  }

  void mark(const std::string& phase, const std::vector<std::string>& files) {
    const auto order = phase_order(phase);
    Json kept = Json::array();
    for (const auto& e : entries_) {
      if (phase_order(e.at("phase").get<std::string>()) < order) kept.push_back(e);
    }
    Json f = Json::object();
    for (const auto& name : files) f[name] = file_hash(dir_ / name);
    kept.push_back({{"phase", phase}, {"files", f}});
    entries_ = std::move(kept);
    jsonl::write_atomic(file(), Json{{"phases", entries_}}.dump(2) + "\n");
  }

 private:
  fs::path file() const { return dir_ / "phases.json"; }
  fs::path dir_;
  Json entries_ = Json::array();
};

std::string iso_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& p, const Json& j) { jsonl::write_atomic(p, j.dump(2) + "\n"); }
Json read_json(const fs::path& p) { return Json::parse(jsonl::read_file(p)); }

}  // namespace

Engine::Engine(EngineConfig config, Datastore& store, Clients clients, annotate::ReviewQueue& queue)
    : config_(std::move(config)), store_(store), clients_(std::move(clients)), queue_(queue) {
  validate(config_);
  if (!clients_.resolver || !clients_.oracle || !clients_.trainer || !clients_.text_embedder ||
      !clients_.agreement) {
    throw ValidationError("engine needs model resolver, oracle, trainer, text embedder and agreement scorer");
  }
  if (store_.capabilities() != config_.world.k && sim::is_mock(config_.model)) {
    spdlog::warn("store has K={} but the simulated world has K={}", store_.capabilities(), config_.world.k);
  }
  queue_.set_accept_adopts_self(config_.accept_adopts_self);
  fs::create_directories(config_.artifacts);
}

fs::path Engine::iteration_dir(int t) const { return config_.artifacts / ("iter-" + std::to_string(t)); }

void Engine::save_state(const IterationState& s) const { write_json(config_.artifacts / "state.json", to_json(s)); }

void Engine::log_event(int t, const std::string& phase, const std::string& artifact, const Json& counts) const {
  jsonl::append(config_.artifacts / "iteration_log.jsonl",
                {{"timestamp", iso_now()}, {"iteration", t}, {"phase", phase}, {"artifact_ref", artifact},
                 {"counts", counts}});
}

IterationState Engine::state() {
  const auto path = config_.artifacts / "state.json";
  if (fs::exists(path)) return state_from_json(read_json(path));
  IterationState s;
  s.base_model_tag = s.model_tag = config_.model;
  auto model = clients_.resolver->resolve(s.model_tag);
  const auto dev = eval::eval_items(store_, Split::Dev);
  eval::MetricsOptions mo{config_.parallelism, clients_.scorer, config_.description_pass};
  s.metrics_history.push_back(eval::dev_metrics(dev, *model, mo));
  save_state(s);
  log_event(0, "baseline", "state.json", {{"dev_items", dev.size()}});
  return s;
}

void Engine::hydrate_queue() {
  for (int t = 0; fs::exists(iteration_dir(t)); ++t) {
    const auto dir = iteration_dir(t);
    if (!queue_.records(t).empty()) continue;
    if (fs::exists(dir / "resolved.jsonl")) {
      queue_.add(annotate::read_records(dir / "resolved.jsonl"));
    } else if (fs::exists(dir / "annotations.jsonl") && PhaseLedger(dir).done("annotate")) {
      queue_.add(annotate::read_records(dir / "annotations.jsonl"));
      queue_.replay_journal(dir / "reviews.jsonl");
    }
  }
}

std::vector<fs::path> Engine::prior_dirs(int t) const {
  std::vector<fs::path> out;
  for (int i = 0; i < t; ++i) out.push_back(iteration_dir(i));
  return out;
}

std::unordered_set<std::string> excluded_samples(std::span<const fs::path> prior_dirs) {
  std::unordered_set<std::string> out;
  for (const auto& dir : prior_dirs) {
    const auto p = dir / "resolved.jsonl";
    if (!fs::exists(p)) continue;
    for (const auto& r : annotate::read_records(p)) {
      if (r.status() != annotate::Status::Rejected) out.insert(r.sample_id);
    }
  }
  return out;
}

std::vector<quality::HashedRecord> exported_hashes(std::span<const fs::path> prior_dirs, const Datastore& store) {
  std::vector<quality::HashedRecord> out;
  for (const auto& dir : prior_dirs) {
    if (!fs::exists(dir / "qa_report.jsonl") || !fs::exists(dir / "resolved.jsonl")) continue;
    std::unordered_set<std::string> kept;
    jsonl::for_each(dir / "qa_report.jsonl", [&](const Json& j) {
      if (j.at("disposition") == "kept") kept.insert(j.at("record_id").get<std::string>());
    });
    std::unordered_set<std::string> seen;
    for (const auto& r : annotate::read_records(dir / "resolved.jsonl")) {
      if (!kept.contains(r.record_id) || !seen.insert(r.sample_id).second) continue;
      const auto s = store.sample(r.sample_id);
      out.push_back({r.sample_id, s ? s->phash : std::nullopt});
    }
  }
  return out;
}

IterationState Engine::run_iteration() {
  std::lock_guard lock(run_mu_);
  return run_iteration_locked(state());
}

IterationState Engine::run(int max_iter) {
  std::lock_guard lock(run_mu_);
  auto s = state();
  for (int i = 0; i < max_iter && (s.status == LoopStatus::Running || s.status == LoopStatus::Halted); ++i) {
    s = run_iteration_locked(std::move(s));
    if (s.status == LoopStatus::Halted) break;
  }
  return s;
}

IterationState Engine::run_iteration_locked(IterationState s) {
  using namespace annotate;
  if (s.status == LoopStatus::Halted && s.halt_reason == "awaiting review") {
    // The one way out of halted: the reviews it was waiting for may have arrived.
    s.status = LoopStatus::Running;
    s.halt_reason.clear();
  }
  if (s.status != LoopStatus::Running) return s;
  std::int64_t budget = config_.budget;
  if (config_.global_budget > 0) {
    budget = std::min(budget, config_.global_budget - s.budget_spent);
    if (budget <= 0) {
      s.status = LoopStatus::BudgetExhausted;
      save_state(s);
      return s;
    }
  }

  const int t = s.t;
  const auto dir = iteration_dir(t);
  fs::create_directories(dir);
  PhaseLedger ledger(dir);
  auto model = clients_.resolver->resolve(s.model_tag);
  const auto dev = eval::eval_items(store_, Split::Dev);

  // Evaluating: failure pool and error distribution.
  if (!ledger.done("evaluate")) {
    const auto pool = find_failures(dev, *model, config_, clients_.scorer);
    const auto dist = eval::error_distribution(pool, dev);
    eval::write_failure_pool(dir / "failures.jsonl", pool);
    write_json(dir / "error_distribution.json", eval::to_json(dist));
    ledger.mark("evaluate", {"failures.jsonl", "error_distribution.json"});
    log_event(t, "evaluate", "failures.jsonl", {{"failures", pool.cases.size()}, {"incidents", pool.incidents.size()}});
  }
  const auto pool = eval::read_failure_pool(dir / "failures.jsonl");
  const auto dist = eval::error_distribution_from_json(read_json(dir / "error_distribution.json"));

  // Prototypes; none when sampling at random.
  if (!ledger.done("prototypes")) {
    proto::PrototypeSet protos;
    if (config_.strategy == Strategy::FailureDriven) {
      protos = mine_prototypes(pool, store_, *clients_.text_embedder, config_);
    }
    proto::write_prototypes(dir / "prototypes.jsonl", protos);
    ledger.mark("prototypes", {"prototypes.jsonl"});
    log_event(t, "prototypes", "prototypes.jsonl", {{"N_c", protos.prototypes.size()}});
  }
  const auto protos = proto::read_prototypes(dir / "prototypes.jsonl");

  if (!ledger.done("retrieve")) {
    const auto set = select_samples(store_, protos, dist.e, budget, excluded_samples(prior_dirs(t)), config_, t);
    retrieve::write_annotation_set(dir / "annotation_set.jsonl", set);
    ledger.mark("retrieve", {"annotation_set.jsonl"});
    log_event(t, "retrieve", "annotation_set.jsonl",
              {{"selected", set.entries.size()}, {"shortfall", set.shortfall}, {"quotas", set.quotas}});
  }
  const auto set = retrieve::read_annotation_set(dir / "annotation_set.jsonl");

  if (!ledger.done("annotate")) {
    const auto th = routing_thresholds(dev, *model, config_, clients_.scorer);
    const auto records =
        annotate_samples(store_, set, *model, *clients_.oracle, *clients_.agreement, th, config_, t);
    write_records(dir / "annotations.jsonl", records);
    std::map<std::string, std::size_t> routes;
    for (const auto& r : records) ++routes[std::string(to_string(r.route))];
    write_json(dir / "routing.json", {{"tau_h", th.tau_h}, {"tau_ann", th.tau_ann}, {"routes", routes}});
    std::filesystem::remove(dir / "reviews.jsonl");
    queue_.clear_iteration(t);
    ledger.mark("annotate", {"annotations.jsonl", "routing.json"});
    log_event(t, "annotate", "annotations.jsonl", {{"records", records.size()}, {"routes", routes}});
  }

  // Review barrier.
  if (!ledger.done("review")) {
    if (queue_.records(t).empty()) {
      queue_.add(read_records(dir / "annotations.jsonl"));
      queue_.replay_journal(dir / "reviews.jsonl");
    }
    queue_.attach_journal(dir / "reviews.jsonl");
    if (config_.reviewer == "sim" && clients_.auto_review) clients_.auto_review(queue_, t);
    if (!queue_.wait_until_drained(t, std::chrono::milliseconds(config_.review_wait_ms))) {
      s.status = LoopStatus::Halted;
      s.halt_reason = "awaiting review";
      save_state(s);
      log_event(t, "review", "reviews.jsonl", {{"pending", queue_.pending(t)}});
      spdlog::warn("iteration {}: {} records still awaiting review; halting", t, queue_.pending(t));
      return s;
    }
    write_records(dir / "resolved.jsonl", queue_.records(t));
    ledger.mark("review", {"resolved.jsonl"});
    log_event(t, "review", "resolved.jsonl", to_json(queue_.stats(t)));
  } else if (queue_.records(t).empty()) {
    queue_.add(read_records(dir / "resolved.jsonl"));
  }
  const auto resolved = read_records(dir / "resolved.jsonl");

  if (!ledger.done("quality")) {
    const auto report = quality_check(resolved, store_, config_, exported_hashes(prior_dirs(t), store_));
    std::vector<Json> lines;
    std::size_t dropped = 0;
    for (const auto& d : report) {
      lines.push_back(quality::to_json(d));
      dropped += !d.kept;
    }
    jsonl::write(dir / "qa_report.jsonl", lines);
    ledger.mark("quality", {"qa_report.jsonl"});
    log_event(t, "quality", "qa_report.jsonl", {{"checked", report.size()}, {"dropped", dropped}});
  }

  const std::string export_ref = "iter-" + std::to_string(t) + "/train.jsonl";
  if (!ledger.done("export")) {
    std::vector<quality::Disposition> report;
    jsonl::for_each(dir / "qa_report.jsonl", [&](const Json& j) { report.push_back(quality::disposition_from_json(j)); });
    const auto n = export_training_set(kept_records(resolved, report), dir / "train.jsonl");
    ledger.mark("export", {"train.jsonl"});
    log_event(t, "export", export_ref, {{"records", n}});
  }

  // Evolving: fine-tune, then measure the new model on dev.
  if (!ledger.done("train")) {
    std::vector<fs::path> sets;
    if (config_.cumulative) {
      for (const auto& ref : s.exported_sets) sets.push_back(config_.artifacts / ref);
    }
    sets.push_back(dir / "train.jsonl");
    const auto& base = config_.cumulative ? s.base_model_tag : s.model_tag;
    const auto tag = clients_.trainer->fine_tune(sets, base, [&](double f, const std::string& msg) {
      spdlog::debug("iteration {} training {:.0f}% {}", t, 100.0 * f, msg);
    });
    write_json(dir / "trained.json", {{"model_tag", tag}, {"base_model_tag", base}, {"training_sets", sets.size()}});
    ledger.mark("train", {"trained.json"});
    log_event(t, "train", "trained.json", {{"training_sets", sets.size()}});
  }
  const auto new_tag = read_json(dir / "trained.json").at("model_tag").get<std::string>();

  if (!ledger.done("measure")) {
    auto trained = clients_.resolver->resolve(new_tag);
    eval::MetricsOptions mo{config_.parallelism, clients_.scorer, config_.description_pass};
    write_json(dir / "metrics.json", eval::to_json(eval::dev_metrics(dev, *trained, mo)));
    ledger.mark("measure", {"metrics.json"});
    log_event(t, "measure", "metrics.json", Json::object());
  }

  s.metrics_history.push_back(eval::metrics_from_json(read_json(dir / "metrics.json")));
  s.model_tag = new_tag;
  s.annotated.push_back(static_cast<std::int64_t>(set.entries.size()));
  s.budget_spent += static_cast<std::int64_t>(set.entries.size());
  s.failure_pool_ref = "iter-" + std::to_string(t) + "/failures.jsonl";
  s.prototypes_ref = "iter-" + std::to_string(t) + "/prototypes.jsonl";
  s.exported_sets.push_back(export_ref);
  s.t = t + 1;
  if (check_plateau(s.metrics_history, config_.plateau_eps, config_.patience)) {
    s.status = LoopStatus::Plateaued;
  } else if (config_.global_budget > 0 && s.budget_spent >= config_.global_budget) {
    s.status = LoopStatus::BudgetExhausted;
  }
  save_state(s);
  spdlog::info("iteration {} done: model {} dev acc {:.4f} status {}", t, s.model_tag,
               s.metrics_history.back().overall_acc, to_string(s.status));
  return s;
}

}  // namespace fpe::loop
