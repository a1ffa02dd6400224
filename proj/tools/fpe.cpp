// fpe: command-line surface of the engine. Every pipeline phase is a subcommand that
// reads and writes the same files the closed loop does; `loop`, `iterate` and `serve`
// drive the engine itself.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fpe/config.hpp"
#include "fpe/evaluator.hpp"
#include "fpe/experiment.hpp"
#include "fpe/http_clients.hpp"
#include "fpe/jsonl.hpp"
#include "fpe/orchestrator.hpp"
#include "fpe/runtime.hpp"
#include "fpe/service.hpp"

namespace fs = std::filesystem;
using namespace fpe;

namespace {

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model, oracle;
  std::optional<std::int64_t> budget;
  std::optional<double> alpha, tau_sim, gamma;
  std::optional<int> runs;
  std::optional<fs::path> out, store;
  bool verbose = false;
};

EngineConfig build_config(const Globals& g) {
  auto c = load_config_or_default(g.config);
  if (g.seed) reseed(c, *g.seed);
  if (g.model) c.model = *g.model;
  if (g.oracle) c.oracle = *g.oracle;
  if (g.budget) c.budget = *g.budget;
  if (g.alpha) c.alpha = *g.alpha;
  if (g.tau_sim) c.tau_sim = *g.tau_sim;
  if (g.gamma) c.gamma = *g.gamma;
  if (g.runs) c.runs = *g.runs;
  if (g.store) c.store = *g.store;
  validate(c);
  return c;
}

// Phase commands read and write inside --out (default: current directory).
fs::path work_dir(const Globals& g) {
  const auto d = g.out.value_or(".");
  fs::create_directories(d);
  return d;
}

fs::path or_default(const std::optional<fs::path>& p, const fs::path& dir, const char* name) {
  return p ? *p : dir / name;
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

void write_json_file(const fs::path& p, const Json& j) { jsonl::write_atomic(p, j.dump(2) + "\n"); }

Json routes_of(std::span<const annotate::AnnotationRecord> records) {
  std::map<std::string, std::size_t> routes;
  for (const auto& r : records) ++routes[std::string(annotate::to_string(r.route))];
  return routes;
}

int iteration_of(std::span<const annotate::AnnotationRecord> records) {
  if (records.empty()) throw ValidationError("no annotation records");
  const int t = records.front().iteration;
  for (const auto& r : records) {
    if (r.iteration != t) throw ValidationError("records span several iterations");
  }
  return t;
}

service::Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("fpe"));

  CLI::App app{"fpe: failure-driven data engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "config file (default: $FPE_CONFIG, else built-in defaults)");
  app.add_option("--seed", g.seed, "engine seed; reseeds every mock client");
  app.add_option("--model", g.model, "model client: mock:<seed> or http(s) URL");
  app.add_option("--oracle", g.oracle, "oracle client: mock:<seed> or http(s) URL");
  app.add_option("--budget", g.budget, "annotation budget per iteration (simulate: total)");
  app.add_option("--alpha", g.alpha, "budget skew exponent");
  app.add_option("--tau-sim", g.tau_sim, "retrieval similarity threshold");
  app.add_option("--gamma", g.gamma, "failure frequency threshold");
  app.add_option("--runs", g.runs, "evaluation runs per question");
  app.add_option("--out", g.out, "output directory (engine commands: artifacts directory)");
  app.add_option("--store", g.store, "datastore directory");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load samples and QA items into the datastore");
  std::optional<fs::path> samples_file, qa_file;
  bool sim_world = false;
  std::optional<std::size_t> ingest_dim, ingest_k;
  ingest->add_option("--samples", samples_file, "sample records (JSONL)");
  ingest->add_option("--qa", qa_file, "QA records (JSONL)");
  ingest->add_flag("--sim-world", sim_world, "ingest the simulated world described by the config");
  ingest->add_option("--dim", ingest_dim, "embedding dimension of a new store");
  ingest->add_option("--capabilities", ingest_k, "capability count K of a new store");

  auto* verify = app.add_subcommand("verify", "check split integrity; exit 1 on violations");

  // phases
  std::optional<fs::path> in_failures, in_errors, in_prototypes, in_set, in_records, in_report;
  std::vector<fs::path> prior;
  int iteration = 0;
  std::optional<std::string> tag;

  auto* evaluate = app.add_subcommand("evaluate", "collect the failure pool and error distribution on dev");
  evaluate->add_option("--tag", tag, "model tag to evaluate (default: the --model spec)");

  auto* cluster = app.add_subcommand("cluster", "mine failure prototypes");
  cluster->add_option("--failures", in_failures, "failure pool (default: <out>/failures.jsonl)");

  auto* retrieve = app.add_subcommand("retrieve", "build the annotation set");
  retrieve->add_option("--prototypes", in_prototypes, "prototypes (default: <out>/prototypes.jsonl)");
  retrieve->add_option("--errors", in_errors, "error distribution (default: <out>/error_distribution.json)");
  retrieve->add_option("--iteration", iteration, "iteration index");
  retrieve->add_option("--prior", prior, "earlier iteration directories whose samples are excluded");

  auto* annotate_cmd = app.add_subcommand("annotate", "annotate and route the annotation set");
  annotate_cmd->add_option("--set", in_set, "annotation set (default: <out>/annotation_set.jsonl)");
  annotate_cmd->add_option("--iteration", iteration, "iteration index");
  annotate_cmd->add_option("--tag", tag, "model tag producing self-annotations (default: the --model spec)");

  auto* review = app.add_subcommand("review-export", "offline review through an editable decisions file");
  std::optional<fs::path> decisions_out, decisions_in;
  bool review_sim = false;
  review->add_option("--records", in_records, "annotation records (default: <out>/annotations.jsonl)");
  review->add_option("--file", decisions_out, "where to write pending decisions (default: <out>/decisions.jsonl)");
  review->add_option("--import", decisions_in, "apply a filled-in decisions file");
  review->add_flag("--sim", review_sim, "resolve every pending record with the simulated reviewer");

  auto* qa = app.add_subcommand("qa", "quality gate over resolved records");
  qa->add_option("--records", in_records, "resolved records (default: <out>/resolved.jsonl)");
  qa->add_option("--prior", prior, "earlier iteration directories already exported");

  auto* export_cmd = app.add_subcommand("export", "write the training set");
  export_cmd->add_option("--records", in_records, "resolved records (default: <out>/resolved.jsonl)");
  export_cmd->add_option("--report", in_report, "quality report (default: <out>/qa_report.jsonl)");

  // engine
  auto* iterate = app.add_subcommand("iterate", "run (or resume) one loop iteration");
  auto* loop_cmd = app.add_subcommand("loop", "run the closed loop");
  std::optional<int> max_iter;
  loop_cmd->add_option("--max-iter", max_iter, "iterations to run (default: config)");

  auto* serve = app.add_subcommand("serve", "HTTP review API and engine status");
  service::ServiceOptions sopts;
  std::optional<fs::path> static_dir;
  serve->add_option("--host", sopts.host, "bind address");
  serve->add_option("--port", sopts.port, "port (0 picks a free one)");
  serve->add_option("--static", static_dir, "review UI bundle to host at /");
  serve->add_flag("--run-loop", sopts.run_loop, "drive the loop in the background, waiting on HTTP reviews");
  serve->add_option("--max-iter", max_iter, "iterations for --run-loop (default: config)");

  auto* simulate = app.add_subcommand("simulate", "failure-driven vs random efficiency curves on the simulated world");
  std::string strategy = "both";
  int sim_iterations = 10;
  simulate->add_option("--strategy", strategy, "failure_driven, random or both")
      ->check(CLI::IsMember({"failure_driven", "random", "both"}));
  simulate->add_option("--iterations", sim_iterations, "loop iterations sharing the budget");

  auto* stats = app.add_subcommand("stats", "review statistics");
  std::optional<int> stats_iteration;
  stats->add_option("--iteration", stats_iteration, "restrict to one iteration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  if (g.verbose) spdlog::set_level(spdlog::level::debug);

  try {
    auto config = build_config(g);

    if (ingest->parsed()) {
      if (sim_world == (samples_file.has_value() || qa_file.has_value())) {
        throw ValidationError("ingest needs either --sim-world or --samples/--qa");
      }
      const auto world = sim::SimWorld::generate(config.world);
      std::optional<StoreShape> shape;
      if (!store_exists(config.store)) {
        StoreShape s;
        s.dedup_threshold = config.dedup_hamming;
        s.dim = sim_world ? config.world.dim : ingest_dim.value_or(0);
        s.capabilities = sim_world ? config.world.k : ingest_k.value_or(0);
        if (s.dim == 0 || s.capabilities == 0) throw ValidationError("a new store needs --dim and --capabilities");
        shape = s;
      }
      Datastore store(config.store, shape);
      IngestReport report;
      if (sim_world) {
        report = world->ingest_into(store);
      } else {
        std::vector<Sample> samples;
        std::vector<QAItem> items;
        if (samples_file) jsonl::for_each(*samples_file, [&](const Json& j) { samples.push_back(sample_from_json(j)); });
        if (qa_file) jsonl::for_each(*qa_file, [&](const Json& j) { items.push_back(qa_from_json(j)); });
        std::unique_ptr<EmbeddingProvider> embedder;
        if (sim::is_mock(config.embedder)) {
          embedder = std::make_unique<sim::SimEmbedder>(world);
        } else {
          embedder = std::make_unique<http::Embedder>(config.embedder);
        }
        report = store.ingest(samples, items, embedder.get());
      }
      print(to_json(report));
      return 0;
    }

    if (verify->parsed()) {
      if (!store_exists(config.store)) throw NotFound("no store at " + config.store.string());
      const auto report = Datastore(config.store).verify_split_integrity();
      print(to_json(report));
      return report.disjoint && report.cross_split_hash_pairs.empty() ? 0 : 1;
    }

    if (simulate->parsed()) {
      const auto out = g.out.value_or("sim-out");
      const std::int64_t total = g.budget.value_or(2000);
      std::vector<sim::ExperimentResult> results;
      for (auto s : {Strategy::FailureDriven, Strategy::Random}) {
        if (strategy != "both" && strategy != to_string(s)) continue;
        results.push_back(sim::run_efficiency_experiment(config, total, sim_iterations, s, out / "work"));
      }
      sim::write_curve_csv(out / "curve.csv", results);
      sim::write_curve_svg(out / "curve.svg", results);
      Json summary = Json::object();
      for (const auto& r : results) {
        summary[std::string(to_string(r.strategy))] = {{"final_accuracy", r.curve.back().accuracy},
                                                      {"budget_spent", r.curve.back().budget},
                                                      {"model_tag", r.state.model_tag}};
      }
      if (results.size() == 2) {
        const auto target = results[1].curve.back().accuracy;
        const auto b = sim::budget_to_reach(results[0].curve, target);
        summary["failure_driven_budget_to_match_random"] = b ? Json(*b) : Json(nullptr);
      }
      write_json_file(out / "summary.json", summary);
      print(summary);
      return 0;
    }

    // Everything below talks to the store and the clients.
    const bool engine_cmd = iterate->parsed() || loop_cmd->parsed() || serve->parsed() || stats->parsed();
    if (engine_cmd && g.out) config.artifacts = *g.out;
    if (serve->parsed() && sopts.run_loop) {
      config.reviewer = "external";
      config.review_wait_ms = std::max<std::int64_t>(config.review_wait_ms, 200);
    }
    auto rt = open_runtime(config, !serve->parsed());
    rt->queue.set_accept_adopts_self(config.accept_adopts_self);
    auto& store = *rt->store;

    if (iterate->parsed() || loop_cmd->parsed()) {
      rt->engine->hydrate_queue();
      const auto s = iterate->parsed() ? rt->engine->run_iteration() : rt->engine->run(max_iter.value_or(config.max_iter));
      print(loop::to_json(s));
      return 0;
    }

    if (stats->parsed()) {
      rt->engine->hydrate_queue();
      print(annotate::to_json(rt->queue.stats(stats_iteration)));
      return 0;
    }

    if (serve->parsed()) {
      rt->engine->hydrate_queue();
      sopts.static_dir = static_dir;
      sopts.max_iter = max_iter.value_or(config.max_iter);
      service::Service svc(*rt, sopts);
      svc.bind();
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      svc.listen();
      g_service = nullptr;
      return 0;
    }

    const auto dir = work_dir(g);
    const auto dev = eval::eval_items(store, Split::Dev);

    if (evaluate->parsed()) {
      auto model = rt->resolver->resolve(tag.value_or(config.model));
      const auto pool = loop::find_failures(dev, *model, config, rt->scorer.get());
      const auto dist = eval::error_distribution(pool, dev);
      eval::write_failure_pool(dir / "failures.jsonl", pool);
      write_json_file(dir / "error_distribution.json", eval::to_json(dist));
      print({{"failures", pool.cases.size()}, {"incidents", pool.incidents.size()}, {"e", dist.e}});
      return 0;
    }

    if (cluster->parsed()) {
      const auto pool = eval::read_failure_pool(or_default(in_failures, dir, "failures.jsonl"));
      const auto protos = loop::mine_prototypes(pool, store, *rt->text_embedder, config);
      proto::write_prototypes(dir / "prototypes.jsonl", protos);
      print({{"N_c", protos.prototypes.size()}, {"failures", pool.cases.size()}});
      return 0;
    }

    if (retrieve->parsed()) {
      const auto protos = proto::read_prototypes(or_default(in_prototypes, dir, "prototypes.jsonl"));
      const auto dist = eval::error_distribution_from_json(
          Json::parse(jsonl::read_file(or_default(in_errors, dir, "error_distribution.json"))));
      const auto set =
          loop::select_samples(store, protos, dist.e, config.budget, loop::excluded_samples(prior), config, iteration);
      retrieve::write_annotation_set(dir / "annotation_set.jsonl", set);
      print({{"selected", set.entries.size()}, {"quotas", set.quotas}, {"shortfall", set.shortfall}});
      return 0;
    }

    if (annotate_cmd->parsed()) {
      const auto set = retrieve::read_annotation_set(or_default(in_set, dir, "annotation_set.jsonl"));
      auto model = rt->resolver->resolve(tag.value_or(config.model));
      const auto th = loop::routing_thresholds(dev, *model, config, rt->scorer.get());
      const auto records =
          loop::annotate_samples(store, set, *model, *rt->oracle, rt->agreement, th, config, iteration);
      annotate::write_records(dir / "annotations.jsonl", records);
      const auto routes = routes_of(records);
      write_json_file(dir / "routing.json", {{"tau_h", th.tau_h}, {"tau_ann", th.tau_ann}, {"routes", routes}});
      print({{"records", records.size()}, {"tau_h", th.tau_h}, {"routes", routes}});
      return 0;
    }

    if (review->parsed()) {
      auto records = annotate::read_records(or_default(in_records, dir, "annotations.jsonl"));
      const int t = iteration_of(records);
      auto& q = rt->queue;
      q.add(records);
      q.replay_journal(dir / "reviews.jsonl");
      q.attach_journal(dir / "reviews.jsonl");
      if (review_sim) {
        if (!rt->world) throw ValidationError("--sim needs a simulated world (mock clients)");
        sim::review_all(*rt->world, q, t, config.accept_adopts_self);
      } else if (decisions_in) {
        jsonl::for_each(*decisions_in, [&](const Json& j) {
          if (!j.contains("action") || j.at("action").is_null()) return;
          const auto text = j.contains("edited_text") && j.at("edited_text").is_string()
                                ? j.at("edited_text").get<std::string>()
                                : std::string();
          const auto reviewer = j.contains("reviewer") && j.at("reviewer").is_string()
                                    ? j.at("reviewer").get<std::string>()
                                    : std::string("offline");
          q.submit_review(j.at("record_id").get<std::string>(),
                          annotate::parse_action(j.at("action").get<std::string>()), text, reviewer);
        });
      } else {
        std::vector<Json> lines;
        for (const auto& r : q.queue({}, 0, records.size() + 1).items) {
          lines.push_back({{"record_id", r.record_id},
                           {"route", r.route},
                           {"image_ref", r.image_ref},
                           {"question", r.question},
                           {"choices", r.choices},
                           {"y_self", r.y_self.text},
                           {"y_oracle", r.y_oracle ? Json(*r.y_oracle) : Json(nullptr)},
                           {"H_traj", r.h_traj},
                           {"delta_ann", r.delta_ann},
                           {"action", nullptr},
                           {"edited_text", nullptr},
                           {"reviewer", nullptr}});
        }
        const auto path = or_default(decisions_out, dir, "decisions.jsonl");
        jsonl::write(path, lines);
        print({{"pending", lines.size()}, {"file", path.string()}});
        return 0;
      }
      const auto pending = q.pending(t);
      print(annotate::to_json(q.stats(t)));
      if (pending > 0) {
        spdlog::error("{} records still pending; resolved.jsonl not written", pending);
        return 1;
      }
      annotate::write_records(dir / "resolved.jsonl", q.records(t));
      return 0;
    }

    if (qa->parsed()) {
      const auto records = annotate::read_records(or_default(in_records, dir, "resolved.jsonl"));
      const auto report = loop::quality_check(records, store, config, loop::exported_hashes(prior, store));
      std::vector<Json> lines;
      std::size_t dropped = 0;
      for (const auto& d : report) {
        lines.push_back(quality::to_json(d));
        dropped += !d.kept;
      }
      jsonl::write(dir / "qa_report.jsonl", lines);
      print({{"checked", report.size()}, {"dropped", dropped}});
      return 0;
    }

    if (export_cmd->parsed()) {
      const auto records = annotate::read_records(or_default(in_records, dir, "resolved.jsonl"));
      std::vector<quality::Disposition> report;
      jsonl::for_each(or_default(in_report, dir, "qa_report.jsonl"),
                      [&](const Json& j) { report.push_back(quality::disposition_from_json(j)); });
      const auto n = loop::export_training_set(loop::kept_records(records, report), dir / "train.jsonl");
      print({{"records", n}});
      return 0;
    }
  } catch (const ClientError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
