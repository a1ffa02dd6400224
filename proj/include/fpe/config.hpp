#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fpe/annotation_router.hpp"
#include "fpe/simkit.hpp"

namespace fpe {

enum class Strategy { FailureDriven, Random };
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);

struct EngineConfig {
  std::filesystem::path store = "store";
  std::filesystem::path artifacts = "artifacts";

  std::uint64_t seed = 7;
  int runs = 5;
  double gamma = 0.6;
  bool gamma_inclusive = false;
  double tau_sim = 0.75;
  std::int64_t budget = 2000;        // per iteration
  std::int64_t global_budget = 0;    // 0 = unlimited
  double alpha = 1.0;
  double tau_h_quantile = 0.8;
  std::optional<double> tau_h;       // fixed threshold instead of calibration
  double tau_ann = 0.5;
  int dedup_hamming = 5;
  double tfidf_cos = 0.90;
  double plateau_eps = 0.005;
  int patience = 1;
  std::size_t k_min = 2;
  std::size_t k_max = 20;
  double lambda = 1.0;
  double description_pass = 0.5;
  std::size_t parallelism = 1;

  // Client endpoints: "mock:<seed>" or an http(s) base URL.
  std::string model = "mock:7";
  std::string oracle = "mock:7";
  std::string trainer = "mock:7";
  std::string embedder = "mock:7";
  std::string scorer = "mock:7";

  int max_iter = 10;
  Strategy strategy = Strategy::FailureDriven;
  bool quality_gate = true;
  std::optional<annotate::Route> force_route;
  bool accept_adopts_self = false;
  // true: every iteration fine-tunes the base model on all exported sets so far;
  // false: fine-tunes the current model on the newest set only.
  bool cumulative = true;
  std::string reviewer = "sim";  // "sim" resolves reviews in-process; "external" waits
  std::int64_t review_wait_ms = 0;
  std::size_t partitions = 0;    // coarse vector-index cells; 0 = flat scan

  sim::WorldConfig world;

  bool operator==(const EngineConfig&) const = default;
};

// Throws ValidationError naming the first out-of-range constant.
void validate(const EngineConfig& c);

// TOML subset: [section] headers, key = value with strings, integers, floats, booleans
// and flat arrays; '#' comments.
std::string emit_config(const EngineConfig& c);
EngineConfig parse_config(const std::string& text);
// Relative store/artifact paths are resolved against the file's directory.
EngineConfig load_config(const std::filesystem::path& path);

// `explicit_path`, else $FPE_CONFIG, else defaults.
EngineConfig load_config_or_default(const std::optional<std::filesystem::path>& explicit_path);

// Changes the seed and every mock client spec along with it.
void reseed(EngineConfig& c, std::uint64_t seed);

}  // namespace fpe
