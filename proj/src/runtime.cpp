#include "fpe/runtime.hpp"

#include <spdlog/spdlog.h>

#include "fpe/http_clients.hpp"

namespace fpe {

bool store_exists(const std::filesystem::path& root) { return std::filesystem::exists(root / "manifest.json"); }

std::unique_ptr<Runtime> open_runtime(const EngineConfig& config, bool seed_store_from_world) {
  validate(config);
  auto rt = std::make_unique<Runtime>();
  rt->config = config;
  const auto& c = rt->config;
  for (const auto* spec : {&c.model, &c.oracle, &c.trainer, &c.embedder, &c.scorer}) {
    if (sim::is_mock(*spec)) {
      rt->world = sim::SimWorld::generate(c.world);
      break;
    }
    if (!http::is_url(*spec)) throw ValidationError("client spec must be mock:<seed> or an http(s) URL: " + *spec);
  }

  if (sim::is_mock(c.model)) {
    rt->resolver = std::make_shared<sim::SimResolver>(rt->world);
  } else {
    rt->resolver = std::make_shared<http::ModelResolver>(c.model);
  }
  if (sim::is_mock(c.oracle)) {
    rt->oracle = std::make_shared<sim::SimOracle>(rt->world);
  } else {
    rt->oracle = std::make_shared<http::OracleClient>(c.oracle);
  }
  if (sim::is_mock(c.trainer)) {
    rt->trainer = std::make_shared<sim::SimTrainer>(rt->world);
  } else {
    rt->trainer = std::make_shared<http::TrainerClient>(c.trainer);
  }
  if (sim::is_mock(c.embedder)) {
    rt->text_embedder = std::make_shared<sim::SimTextEmbedder>();
    rt->image_embedder = std::make_shared<sim::SimEmbedder>(rt->world);
  } else {
    auto e = std::make_shared<http::Embedder>(c.embedder);
    rt->text_embedder = e;
    rt->image_embedder = e;
  }
  if (sim::is_mock(c.scorer)) {
    rt->scorer = std::make_shared<sim::SimScorer>();
  } else {
    rt->scorer = std::make_shared<http::Scorer>(c.scorer);
  }

  if (!store_exists(c.store)) {
    if (!(seed_store_from_world && rt->world && sim::is_mock(c.model))) {
      throw NotFound("no store at " + c.store.string() + "; run `fpe ingest` first");
    }
    StoreShape shape;
    shape.dim = c.world.dim;
    shape.capabilities = c.world.k;
    shape.dedup_threshold = c.dedup_hamming;
    rt->store = std::make_unique<Datastore>(c.store, shape);
    const auto report = rt->world->ingest_into(*rt->store);
    spdlog::info("seeded store {} with {} simulated samples", c.store.string(), report.samples_added);
  } else {
    rt->store = std::make_unique<Datastore>(c.store);
  }

  loop::Clients clients;
  clients.resolver = rt->resolver.get();
  clients.oracle = rt->oracle.get();
  clients.trainer = rt->trainer.get();
  clients.text_embedder = rt->text_embedder.get();
  clients.scorer = rt->scorer.get();
  clients.agreement = &rt->agreement;
  if (rt->world && c.reviewer == "sim") {
    clients.auto_review = [world = rt->world, self = c.accept_adopts_self](annotate::ReviewQueue& q, int t) {
      return sim::review_all(*world, q, t, self);
    };
  }
  rt->engine = std::make_unique<loop::Engine>(c, *rt->store, std::move(clients), rt->queue);
  return rt;
}

}  // namespace fpe
