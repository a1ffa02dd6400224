#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/config.hpp"
#include "fpe/orchestrator.hpp"

namespace fpe::sim {

struct CurvePoint {
  std::string strategy;
  std::uint64_t seed = 0;
  std::int64_t budget = 0;
  double accuracy = 0.0;  // expected dev accuracy of the model after `budget` annotations
};

struct ExperimentResult {
  Strategy strategy = Strategy::FailureDriven;
  std::vector<CurvePoint> curve;  // starts at budget 0
  loop::IterationState state;
};

// Runs the full closed loop over the simulated world in `config` with `iterations`
// equal per-iteration budgets summing to `total_budget`. Plateau stopping is disabled so
// both strategies spend the same budget. Store and artifacts live under `workdir`; the
// strategy's artifact directory is wiped first so every run starts from iteration 0.
ExperimentResult run_efficiency_experiment(EngineConfig config, std::int64_t total_budget, int iterations,
                                           Strategy strategy, const std::filesystem::path& workdir);

// Linear interpolation along the curve.
double accuracy_at(std::span<const CurvePoint> curve, double budget);
// Smallest (interpolated) budget at which the curve reaches `accuracy`.
std::optional<double> budget_to_reach(std::span<const CurvePoint> curve, double accuracy);

// "strategy,seed,budget,accuracy" rows.
void write_curve_csv(const std::filesystem::path& path, std::span<const ExperimentResult> results);
// Accuracy-vs-budget line chart, one series per result.
void write_curve_svg(const std::filesystem::path& path, std::span<const ExperimentResult> results);

}  // namespace fpe::sim
