#pragma once

#include <memory>

#include "fpe/annotation_router.hpp"
#include "fpe/config.hpp"
#include "fpe/datastore.hpp"
#include "fpe/orchestrator.hpp"
#include "fpe/simkit.hpp"

namespace fpe {

// Everything one engine instance needs, wired from an EngineConfig. Client specs of the
// form "mock:<seed>" get simulated clients over the world described by config.world;
// http(s) URLs get HTTP clients.
struct Runtime {
  EngineConfig config;
  std::shared_ptr<const sim::SimWorld> world;  // set when any client is simulated
  std::unique_ptr<Datastore> store;
  std::shared_ptr<ModelResolver> resolver;
  std::shared_ptr<OracleClient> oracle;
  std::shared_ptr<TrainerClient> trainer;
  std::shared_ptr<TextEmbedClient> text_embedder;
  std::shared_ptr<EmbeddingProvider> image_embedder;
  std::shared_ptr<DescriptionScorer> scorer;
  annotate::DefaultAgreement agreement;
  annotate::ReviewQueue queue;
  std::unique_ptr<loop::Engine> engine;
};

// A missing store is created from the simulated world when `seed_store_from_world` is set
// and the model is simulated; otherwise the store must already exist.
std::unique_ptr<Runtime> open_runtime(const EngineConfig& config, bool seed_store_from_world = true);

bool store_exists(const std::filesystem::path& root);

}  // namespace fpe
