#include "fpe/experiment.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/runtime.hpp"

namespace fpe::sim {

namespace {

double expected_accuracy(const SimWorld& world, const std::string& tag) {
  const auto t = parse_tag(tag);
  if (!t) throw ValidationError("experiment model tag is not simulated: " + tag);
  return world.expected_dev_accuracy(world.error_rates(t->counts));
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

ExperimentResult run_efficiency_experiment(EngineConfig config, std::int64_t total_budget, int iterations,
                                           Strategy strategy, const std::filesystem::path& workdir) {
  if (iterations < 1 || total_budget < iterations) throw ValidationError("need total_budget >= iterations >= 1");
  for (const auto* spec : {&config.model, &config.oracle, &config.trainer, &config.embedder}) {
    if (!is_mock(*spec)) throw ValidationError("the efficiency experiment runs on simulated clients only");
  }
  config.strategy = strategy;
  config.budget = total_budget / iterations;
  config.global_budget = config.budget * iterations;
  config.max_iter = iterations;
  config.patience = iterations + 1;
  config.reviewer = "sim";
  config.store = workdir / "store";
  config.artifacts = workdir / std::string(to_string(strategy));
  std::filesystem::remove_all(config.artifacts);

  auto rt = open_runtime(config);
  rt->engine->hydrate_queue();
  ExperimentResult out;
  out.strategy = strategy;
  auto point = [&](std::int64_t budget, const std::string& tag) {
    out.curve.push_back({std::string(to_string(strategy)), config.seed, budget, expected_accuracy(*rt->world, tag)});
  };
  auto s = rt->engine->state();
  point(0, s.base_model_tag);
  std::int64_t spent = 0;
  for (int i = 0; i < iterations && s.status == loop::LoopStatus::Running; ++i) {
    s = rt->engine->run_iteration();
    if (static_cast<int>(s.annotated.size()) <= i) break;
    spent += s.annotated[static_cast<std::size_t>(i)];
    point(spent, s.model_tag);
  }
  out.state = std::move(s);
  spdlog::info("{}: final expected accuracy {:.4f} after budget {}", to_string(strategy), out.curve.back().accuracy,
               spent);
  return out;
}

double accuracy_at(std::span<const CurvePoint> curve, double budget) {
  if (curve.empty()) throw ValidationError("empty curve");
  if (budget <= static_cast<double>(curve.front().budget)) return curve.front().accuracy;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double b0 = static_cast<double>(curve[i - 1].budget), b1 = static_cast<double>(curve[i].budget);
    if (budget <= b1) {
      const double f = b1 > b0 ? (budget - b0) / (b1 - b0) : 1.0;
      return curve[i - 1].accuracy + f * (curve[i].accuracy - curve[i - 1].accuracy);
    }
  }
  return curve.back().accuracy;
}

std::optional<double> budget_to_reach(std::span<const CurvePoint> curve, double accuracy) {
  if (curve.empty()) return std::nullopt;
  if (curve.front().accuracy >= accuracy) return static_cast<double>(curve.front().budget);
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (b.accuracy >= accuracy) {
      const double f = b.accuracy > a.accuracy ? (accuracy - a.accuracy) / (b.accuracy - a.accuracy) : 1.0;
      return static_cast<double>(a.budget) + f * static_cast<double>(b.budget - a.budget);
    }
  }
  return std::nullopt;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const ExperimentResult> results) {
  std::string out = "strategy,seed,budget,accuracy\n";
  for (const auto& r : results) {
    for (const auto& p : r.curve) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.10f", p.accuracy);
      out += p.strategy + "," + std::to_string(p.seed) + "," + std::to_string(p.budget) + "," + buf + "\n";
    }
  }
  jsonl::write_atomic(path, out);
}

void write_curve_svg(const std::filesystem::path& path, std::span<const ExperimentResult> results) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 30, B = 60;
  double max_b = 1, lo = 1, hi = 0;
  for (const auto& r : results) {
    for (const auto& p : r.curve) {
      max_b = std::max(max_b, static_cast<double>(p.budget));
      lo = std::min(lo, p.accuracy);
      hi = std::max(hi, p.accuracy);
    }
  }
  if (hi <= lo) hi = lo + 0.01;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto x = [&](double b) { return L + (W - L - R) * b / max_b; };
  auto y = [&](double a) { return T + (H - T - B) * (1.0 - (a - lo) / (hi - lo)); };
  const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd"};

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_num(W) + "\" height=\"" + fmt_num(H) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + fmt_num(L) + "\" y1=\"" + fmt_num(H - B) + "\" x2=\"" + fmt_num(W - R) + "\" y2=\"" +
       fmt_num(H - B) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt_num(L) + "\" y1=\"" + fmt_num(T) + "\" x2=\"" + fmt_num(L) + "\" y2=\"" + fmt_num(H - B) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double b = max_b * i / 4, a = lo + (hi - lo) * i / 4;
    s += "<text x=\"" + fmt_num(x(b)) + "\" y=\"" + fmt_num(H - B + 18) + "\" text-anchor=\"middle\">" +
         fmt_num(std::round(b)) + "</text>\n";
    s += "<text x=\"" + fmt_num(L - 6) + "\" y=\"" + fmt_num(y(a) + 4) + "\" text-anchor=\"end\">" +
         fmt_num(std::round(a * 1000) / 1000) + "</text>\n";
  }
  s += "<text x=\"" + fmt_num((L + W - R) / 2) + "\" y=\"" + fmt_num(H - 15) +
       "\" text-anchor=\"middle\">annotation budget</text>\n";
  s += "<text transform=\"translate(18," + fmt_num((T + H - B) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">expected dev accuracy</text>\n";
  for (std::size_t r = 0; r < results.size(); ++r) {
    const char* color = colors[r % std::size(colors)];
    std::string pts;
    for (const auto& p : results[r].curve) {
      pts += fmt_num(x(static_cast<double>(p.budget))) + "," + fmt_num(y(p.accuracy)) + " ";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(r);
    s += "<line x1=\"" + fmt_num(W - R - 150) + "\" y1=\"" + fmt_num(ly) + "\" x2=\"" + fmt_num(W - R - 125) +
         "\" y2=\"" + fmt_num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt_num(W - R - 120) + "\" y=\"" + fmt_num(ly + 4) + "\">" +
         std::string(to_string(results[r].strategy)) + "</text>\n";
  }
  s += "</svg>\n";
  jsonl::write_atomic(path, s);
}

}  // namespace fpe::sim
