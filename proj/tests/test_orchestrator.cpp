#include <map>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "fpe/jsonl.hpp"
#include "fpe/orchestrator.hpp"
#include "fpe/runtime.hpp"
#include "test_support.hpp"

using namespace fpe;
using namespace fpe::loop;
namespace fs = std::filesystem;

namespace {

EngineConfig small_config(const fs::path& root) {
  EngineConfig c;
  c.world.pool_size = 1500;
  c.world.dev_size = 300;
  c.budget = 100;
  c.plateau_eps = 0.0;
  c.max_iter = 3;
  c.store = root / "store";
  c.artifacts = root / "artifacts";
  return c;
}

// Every artifact except the wall-clock event log.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "iteration_log.jsonl") continue;
    out[fs::relative(e.path(), dir).generic_string()] = jsonl::read_file(e.path());
  }
  return out;
}

std::map<std::string, int> routes(const fs::path& routing_json) {
  return Json::parse(jsonl::read_file(routing_json)).at("routes").get<std::map<std::string, int>>();
}

}  // namespace

TEST(Plateau, Examples) {
  const std::vector<double> a{0.60, 0.70, 0.74}, b{0.60, 0.70, 0.703}, c{0.60};
  EXPECT_FALSE(check_plateau(a, 0.005, 1));
  EXPECT_TRUE(check_plateau(b, 0.005, 1));
  EXPECT_FALSE(check_plateau(c, 0.005, 1));
  EXPECT_FALSE(check_plateau(b, 0.005, 2));
  const std::vector<double> d{0.5, 0.501, 0.502};
  EXPECT_TRUE(check_plateau(d, 0.005, 2));
}

TEST(Engine, StateRoundTrip) {
  IterationState s;
  s.t = 2;
  s.base_model_tag = "mock:7";
  s.model_tag = "mock:7:n=1,2,3";
  s.metrics_history.resize(3);
  s.metrics_history[1].overall_acc = 0.5;
  s.budget_spent = 10;
  s.annotated = {4, 6};
  s.exported_sets = {"iter-0/train.jsonl", "iter-1/train.jsonl"};
  s.status = LoopStatus::Halted;
  s.halt_reason = "awaiting review";
  const auto back = state_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
}

TEST(Engine, ColdStartThenThreeWayRouting) {
  test::TempDir dir;
  auto rt = open_runtime(small_config(dir.path()));
  auto s = rt->engine->run_iteration();
  const auto it0 = rt->engine->iteration_dir(0);
  const auto r0 = routes(it0 / "routing.json");
  ASSERT_EQ(r0.size(), 1u);
  EXPECT_GT(r0.at("cold_start_review"), 0);
  for (const auto& r : annotate::read_records(it0 / "annotations.jsonl")) {
    EXPECT_EQ(r.route, annotate::Route::ColdStartReview);
  }

  s = rt->engine->run_iteration();
  const auto r1 = routes(rt->engine->iteration_dir(1) / "routing.json");
  EXPECT_FALSE(r1.contains("cold_start_review"));
  EXPECT_GT(r1.at("adopt_oracle"), 0);
  EXPECT_GT(r1.at("adopt_self"), 0);
  EXPECT_GT(r1.at("escalate"), 0);
  EXPECT_EQ(s.t, 2);
  EXPECT_EQ(s.metrics_history.size(), 3u);
  EXPECT_EQ(s.budget_spent, s.annotated[0] + s.annotated[1]);
}

TEST(Engine, IterationsDoNotReannotateSamples) {
  test::TempDir dir;
  auto rt = open_runtime(small_config(dir.path()));
  rt->engine->run(2);
  std::set<std::string> first;
  for (const auto& r : annotate::read_records(rt->engine->iteration_dir(0) / "resolved.jsonl")) {
    if (r.status() != annotate::Status::Rejected) first.insert(r.sample_id);
  }
  for (const auto& r : annotate::read_records(rt->engine->iteration_dir(1) / "resolved.jsonl")) {
    EXPECT_FALSE(first.contains(r.sample_id)) << r.sample_id;
  }
}

TEST(Engine, CumulativeTrainingRestartsFromTheBase) {
  test::TempDir dir;
  auto rt = open_runtime(small_config(dir.path()));
  rt->engine->run(2);
  const auto j = Json::parse(jsonl::read_file(rt->engine->iteration_dir(1) / "trained.json"));
  EXPECT_EQ(j.at("base_model_tag"), "mock:7");
  EXPECT_EQ(j.at("training_sets"), 2);

  test::TempDir dir2;
  auto c = small_config(dir2.path());
  c.cumulative = false;
  auto rt2 = open_runtime(c);
  const auto s = rt2->engine->run(2);
  const auto j2 = Json::parse(jsonl::read_file(rt2->engine->iteration_dir(1) / "trained.json"));
  EXPECT_EQ(j2.at("training_sets"), 1);
  EXPECT_NE(j2.at("base_model_tag"), "mock:7");
  // Same data either way under the counting trainer.
  EXPECT_EQ(s.model_tag, rt->engine->state().model_tag);
}

TEST(Engine, ResumeAfterCrashReproducesTheRun) {
  test::TempDir ref_dir, crash_dir;
  {
    auto rt = open_runtime(small_config(ref_dir.path()));
    rt->engine->run(2);
  }
  const auto reference = snapshot(ref_dir / "artifacts");

  const auto c = small_config(crash_dir.path());
  {
    auto rt = open_runtime(c);
    rt->engine->run(1);
  }
  const auto after_first = jsonl::read_file(c.artifacts / "state.json");
  {
    auto rt = open_runtime(c);
    rt->engine->run(1);
  }
  // Crash midway through iteration 1: state still says t=1, later artifacts are gone or
  // torn.
  jsonl::write_atomic(c.artifacts / "state.json", after_first);
  fs::remove(c.artifacts / "iter-1/trained.json");
  fs::remove(c.artifacts / "iter-1/metrics.json");
  jsonl::write_atomic(c.artifacts / "iter-1/qa_report.jsonl", "{\"torn\n");
  {
    auto rt = open_runtime(c);
    rt->engine->hydrate_queue();
    rt->engine->run(1);
  }
  EXPECT_EQ(snapshot(c.artifacts), reference);

  // Finished iterations are not redone: a rerun over the final state is a no-op.
  {
    auto rt = open_runtime(c);
    rt->engine->hydrate_queue();
    const auto s = rt->engine->state();
    EXPECT_EQ(s.t, 2);
  }
  EXPECT_EQ(snapshot(c.artifacts), reference);
}

TEST(Engine, TamperedSelectionIsRedoneDownstream) {
  test::TempDir ref_dir, dir;
  {
    auto rt = open_runtime(small_config(ref_dir.path()));
    rt->engine->run(1);
  }
  const auto c = small_config(dir.path());
  {
    auto rt = open_runtime(c);
    rt->engine->run(1);
  }
  // Rewind to t=0 and damage the selection: everything from retrieve on is rebuilt.
  auto state = Json::parse(jsonl::read_file(c.artifacts / "state.json"));
  IterationState s = state_from_json(state);
  s.t = 0;
  s.model_tag = s.base_model_tag;
  s.metrics_history.resize(1);
  s.annotated.clear();
  s.budget_spent = 0;
  s.exported_sets.clear();
  s.failure_pool_ref.clear();
  s.prototypes_ref.clear();
  jsonl::write_atomic(c.artifacts / "state.json", to_json(s).dump(2) + "\n");
  jsonl::write_atomic(c.artifacts / "iter-0/annotation_set.jsonl", "");
  {
    auto rt = open_runtime(c);
    rt->engine->run(1);
  }
  EXPECT_EQ(snapshot(c.artifacts), snapshot(ref_dir / "artifacts"));
}

TEST(Engine, ExternalReviewHaltsThenResumes) {
  test::TempDir dir;
  auto c = small_config(dir.path());
  c.reviewer = "external";
  auto rt = open_runtime(c);
  auto s = rt->engine->run(3);
  EXPECT_EQ(s.status, LoopStatus::Halted);
  EXPECT_EQ(s.halt_reason, "awaiting review");
  EXPECT_EQ(s.t, 0);
  const auto pending = rt->queue.pending(0);
  ASSERT_GT(pending, 0u);

  // Not yet drained: still halted.
  const auto page = rt->queue.queue({}, 0, 1);
  const auto first = page.items.at(0);
  rt->queue.submit_review(first.record_id, annotate::ReviewAction::Reject, "", "alice");
  s = rt->engine->run_iteration();
  EXPECT_EQ(s.status, LoopStatus::Halted);
  EXPECT_EQ(rt->queue.pending(0), pending - 1);

  sim::review_all(*rt->world, rt->queue, 0);
  s = rt->engine->run_iteration();
  EXPECT_EQ(s.status, LoopStatus::Running);
  EXPECT_EQ(s.t, 1);
  const auto resolved = annotate::read_records(rt->engine->iteration_dir(0) / "resolved.jsonl");
  for (const auto& r : resolved) EXPECT_FALSE(r.needs_review());
  // The rejected sample is free to be picked again.
  EXPECT_FALSE(excluded_samples(std::vector<fs::path>{rt->engine->iteration_dir(0)}).contains(first.sample_id));
}

TEST(Engine, ExternalReviewSurvivesRestart) {
  test::TempDir dir;
  auto c = small_config(dir.path());
  c.reviewer = "external";
  std::string reviewed;
  {
    auto rt = open_runtime(c);
    rt->engine->run(1);
    reviewed = rt->queue.queue({}, 0, 1).items.at(0).record_id;
    rt->queue.submit_review(reviewed, annotate::ReviewAction::Edit, "severe", "bob");
  }
  auto rt = open_runtime(c);
  rt->engine->hydrate_queue();
  const auto r = rt->queue.get(reviewed);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->final_label, "severe");
  EXPECT_EQ(r->review->reviewer, "bob");
}

TEST(Engine, GlobalBudgetStopsTheLoop) {
  test::TempDir dir;
  auto c = small_config(dir.path());
  c.global_budget = 150;
  auto rt = open_runtime(c);
  const auto s = rt->engine->run(5);
  EXPECT_EQ(s.status, LoopStatus::BudgetExhausted);
  EXPECT_EQ(s.budget_spent, 150);
  EXPECT_EQ(s.annotated, (std::vector<std::int64_t>{100, 50}));
}

TEST(Engine, PlateauStopsTheLoop) {
  test::TempDir dir;
  auto c = small_config(dir.path());
  c.plateau_eps = 1.0;
  auto rt = open_runtime(c);
  const auto s = rt->engine->run(5);
  EXPECT_EQ(s.status, LoopStatus::Plateaued);
  EXPECT_EQ(s.t, 1);
}

TEST(Export, SkipsRejectedAndRefusesPending) {
  test::TempDir dir;
  annotate::AnnotationRecord a;
  a.record_id = "0:s1:0";
  a.sample_id = "s1";
  a.image_ref = "sim://s1";
  a.question = "q";
  a.route = annotate::Route::AdoptOracle;
  a.y_oracle = "mild";
  a.final_label = "mild";
  auto rej = a;
  rej.record_id = "0:s0:0";
  rej.sample_id = "s0";
  rej.route = annotate::Route::ColdStartReview;
  rej.final_label.reset();
  rej.review = annotate::Review{annotate::ReviewAction::Reject, "", "r", 1};
  std::vector<annotate::AnnotationRecord> recs{rej, a};
  EXPECT_EQ(export_training_set(recs, dir / "t.jsonl"), 1u);
  const auto lines = jsonl::read(dir / "t.jsonl");
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].at("answer"), "mild");
  auto pending = rej;
  pending.review.reset();
  recs.push_back(pending);
  EXPECT_THROW(export_training_set(recs, dir / "u.jsonl"), Error);
}
