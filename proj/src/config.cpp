#include "fpe/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "fpe/jsonl.hpp"

namespace fpe {

std::string_view to_string(Strategy s) { return s == Strategy::FailureDriven ? "failure_driven" : "random"; }

Strategy parse_strategy(std::string_view s) {
  if (s == "failure_driven") return Strategy::FailureDriven;
  if (s == "random") return Strategy::Random;
  throw ValidationError("unknown strategy: " + std::string(s));
}

void validate(const EngineConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("config: ") + what);
  };
  need(c.runs >= 1, "runs must be >= 1");
  need(c.gamma >= 0.0 && c.gamma < 1.0, "gamma must be in [0, 1)");
  need(c.tau_sim >= 0.0 && c.tau_sim < 1.0, "tau_sim must be in [0, 1)");
  need(c.budget >= 0, "budget must be >= 0");
  need(c.global_budget >= 0, "global_budget must be >= 0");
  need(c.alpha >= 0.0 && std::isfinite(c.alpha), "alpha must be >= 0");
  need(c.tau_h_quantile >= 0.0 && c.tau_h_quantile <= 1.0, "tau_h_quantile must be in [0, 1]");
  need(!c.tau_h || (std::isfinite(*c.tau_h) && *c.tau_h >= 0.0), "tau_h must be >= 0");
  need(c.tau_ann >= 0.0 && c.tau_ann <= 1.0, "tau_ann must be in [0, 1]");
  need(c.dedup_hamming >= 0 && c.dedup_hamming <= 64, "dedup_hamming must be in [0, 64]");
  need(c.tfidf_cos >= 0.0 && c.tfidf_cos <= 1.0, "tfidf_cos must be in [0, 1]");
  need(c.plateau_eps >= 0.0, "plateau_eps must be >= 0");
  need(c.patience >= 1, "patience must be >= 1");
  need(c.k_min >= 2 && c.k_min <= c.k_max, "k range must satisfy 2 <= k_min <= k_max");
  need(c.lambda >= 0.0 && std::isfinite(c.lambda), "lambda must be >= 0");
  need(c.description_pass >= 0.0 && c.description_pass <= 1.0, "description_pass must be in [0, 1]");
  need(c.parallelism >= 1, "parallelism must be >= 1");
  need(c.max_iter >= 0, "max_iter must be >= 0");
  need(c.reviewer == "sim" || c.reviewer == "external", "reviewer must be sim or external");
  need(c.review_wait_ms >= 0, "review_wait_ms must be >= 0");
  for (const auto* spec : {&c.model, &c.oracle, &c.trainer, &c.embedder, &c.scorer}) {
    need(!sim::is_mock(*spec) || sim::mock_seed(*spec) == c.seed, "mock client seeds must equal the engine seed");
  }
  need(c.world.seed == c.seed, "world seed must equal the engine seed");
  sim::validate(c.world);
}

namespace {

using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eE") == std::string::npos && s.find_first_of("ni") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    if (ch == '\n') {
      out += "\\n";
      continue;
    }
    out += ch;
  }
  return out + "\"";
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

// One binding per key: reads a Value into the config and writes it back out.
struct Field {
  std::string section;
  std::string key;
  std::function<void(EngineConfig&, const Value&)> set;
  std::function<std::optional<std::string>(const EngineConfig&)> get;
};

template <typename T>
T as(const Value& v, const std::string& key);

template <>
bool as<bool>(const Value& v, const std::string& key) {
  if (auto b = std::get_if<bool>(&v)) return *b;
  throw ValidationError("config: " + key + " must be a boolean");
}
template <>
std::int64_t as<std::int64_t>(const Value& v, const std::string& key) {
  if (auto i = std::get_if<std::int64_t>(&v)) return *i;
  throw ValidationError("config: " + key + " must be an integer");
}
template <>
double as<double>(const Value& v, const std::string& key) {
  if (auto d = std::get_if<double>(&v)) return *d;
  if (auto i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw ValidationError("config: " + key + " must be a number");
}
template <>
std::string as<std::string>(const Value& v, const std::string& key) {
  if (auto s = std::get_if<std::string>(&v)) return *s;
  throw ValidationError("config: " + key + " must be a string");
}
template <>
std::vector<double> as<std::vector<double>>(const Value& v, const std::string& key) {
  if (auto a = std::get_if<std::vector<double>>(&v)) return *a;
  throw ValidationError("config: " + key + " must be an array of numbers");
}

template <typename M>
Field real(std::string sec, std::string key, M EngineConfig::*m) {
  return {sec, key, [m, key](EngineConfig& c, const Value& v) { c.*m = as<double>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(num(c.*m)); }};
}
template <typename M>
Field integer(std::string sec, std::string key, M EngineConfig::*m) {
  return {sec, key,
          [m, key](EngineConfig& c, const Value& v) {
            const auto x = as<std::int64_t>(v, key);
            if constexpr (std::is_unsigned_v<M>) {
              if (x < 0) throw ValidationError("config: " + key + " must be >= 0");
            }
            c.*m = static_cast<M>(x);
          },
          [m](const EngineConfig& c) { return std::optional<std::string>(std::to_string(c.*m)); }};
}
Field boolean(std::string sec, std::string key, bool EngineConfig::*m) {
  return {sec, key, [m, key](EngineConfig& c, const Value& v) { c.*m = as<bool>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(c.*m ? "true" : "false"); }};
}
Field text(std::string sec, std::string key, std::string EngineConfig::*m) {
  return {sec, key, [m, key](EngineConfig& c, const Value& v) { c.*m = as<std::string>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(quote(c.*m)); }};
}
Field path(std::string sec, std::string key, std::filesystem::path EngineConfig::*m) {
  return {sec, key, [m, key](EngineConfig& c, const Value& v) { c.*m = as<std::string>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(quote((c.*m).generic_string())); }};
}
template <typename M>
Field world_real(std::string key, M sim::WorldConfig::*m) {
  return {"world", key, [m, key](EngineConfig& c, const Value& v) { c.world.*m = as<double>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(num(c.world.*m)); }};
}
Field world_size(std::string key, std::size_t sim::WorldConfig::*m) {
  return {"world", key,
          [m, key](EngineConfig& c, const Value& v) {
            const auto x = as<std::int64_t>(v, key);
            if (x < 0) throw ValidationError("config: " + key + " must be >= 0");
            c.world.*m = static_cast<std::size_t>(x);
          },
          [m](const EngineConfig& c) { return std::optional<std::string>(std::to_string(c.world.*m)); }};
}
Field world_list(std::string key, std::vector<double> sim::WorldConfig::*m) {
  return {"world", key, [m, key](EngineConfig& c, const Value& v) { c.world.*m = as<std::vector<double>>(v, key); },
          [m](const EngineConfig& c) { return std::optional<std::string>(list(c.world.*m)); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(path("paths", "store", &EngineConfig::store));
    v.push_back(path("paths", "artifacts", &EngineConfig::artifacts));
    v.push_back(integer("engine", "seed", &EngineConfig::seed));
    v.push_back(integer("engine", "runs", &EngineConfig::runs));
    v.push_back(real("engine", "gamma", &EngineConfig::gamma));
    v.push_back(boolean("engine", "gamma_inclusive", &EngineConfig::gamma_inclusive));
    v.push_back(real("engine", "tau_sim", &EngineConfig::tau_sim));
    v.push_back(integer("engine", "budget", &EngineConfig::budget));
    v.push_back(integer("engine", "global_budget", &EngineConfig::global_budget));
    v.push_back(real("engine", "alpha", &EngineConfig::alpha));
    v.push_back(real("engine", "tau_h_quantile", &EngineConfig::tau_h_quantile));
    v.push_back({"engine", "tau_h", [](EngineConfig& c, const Value& x) { c.tau_h = as<double>(x, "tau_h"); },
                 [](const EngineConfig& c) { return c.tau_h ? std::optional(num(*c.tau_h)) : std::nullopt; }});
    v.push_back(real("engine", "tau_ann", &EngineConfig::tau_ann));
    v.push_back(integer("engine", "dedup_hamming", &EngineConfig::dedup_hamming));
    v.push_back(real("engine", "tfidf_cos", &EngineConfig::tfidf_cos));
    v.push_back(real("engine", "plateau_eps", &EngineConfig::plateau_eps));
    v.push_back(integer("engine", "patience", &EngineConfig::patience));
    v.push_back(integer("engine", "k_min", &EngineConfig::k_min));
    v.push_back(integer("engine", "k_max", &EngineConfig::k_max));
    v.push_back(real("engine", "lambda", &EngineConfig::lambda));
    v.push_back(real("engine", "description_pass", &EngineConfig::description_pass));
    v.push_back(integer("engine", "parallelism", &EngineConfig::parallelism));
    v.push_back(text("clients", "model", &EngineConfig::model));
    v.push_back(text("clients", "oracle", &EngineConfig::oracle));
    v.push_back(text("clients", "trainer", &EngineConfig::trainer));
    v.push_back(text("clients", "embedder", &EngineConfig::embedder));
    v.push_back(text("clients", "scorer", &EngineConfig::scorer));
    v.push_back(integer("loop", "max_iter", &EngineConfig::max_iter));
    v.push_back({"loop", "strategy",
                 [](EngineConfig& c, const Value& x) { c.strategy = parse_strategy(as<std::string>(x, "strategy")); },
                 [](const EngineConfig& c) { return std::optional(quote(std::string(to_string(c.strategy)))); }});
    v.push_back(boolean("loop", "quality_gate", &EngineConfig::quality_gate));
    v.push_back({"loop", "force_route",
                 [](EngineConfig& c, const Value& x) {
                   c.force_route = annotate::parse_route(as<std::string>(x, "force_route"));
                 },
                 [](const EngineConfig& c) {
                   return c.force_route ? std::optional(quote(std::string(annotate::to_string(*c.force_route))))
                                        : std::nullopt;
                 }});
    v.push_back(boolean("loop", "accept_adopts_self", &EngineConfig::accept_adopts_self));
    v.push_back(boolean("loop", "cumulative", &EngineConfig::cumulative));
    v.push_back(text("loop", "reviewer", &EngineConfig::reviewer));
    v.push_back(integer("loop", "review_wait_ms", &EngineConfig::review_wait_ms));
    v.push_back(integer("loop", "partitions", &EngineConfig::partitions));
    v.push_back(world_size("k", &sim::WorldConfig::k));
    v.push_back(world_size("dim", &sim::WorldConfig::dim));
    v.push_back(world_size("pool_size", &sim::WorldConfig::pool_size));
    v.push_back(world_size("dev_size", &sim::WorldConfig::dev_size));
    v.push_back(world_size("test_size", &sim::WorldConfig::test_size));
    v.push_back(world_list("base_error", &sim::WorldConfig::base_error));
    v.push_back(world_list("scales", &sim::WorldConfig::scales));
    v.push_back(world_real("spread", &sim::WorldConfig::spread));
    v.push_back(world_real("duplicate_fraction", &sim::WorldConfig::duplicate_fraction));
    v.push_back(world_real("kappa", &sim::WorldConfig::kappa));
    v.push_back(world_real("oracle_error", &sim::WorldConfig::oracle_error));
    v.push_back(world_real("reject_rate", &sim::WorldConfig::reject_rate));
    v.push_back(world_size("choices", &sim::WorldConfig::choices));
    return v;
  }();
  return f;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_str) {
      ++i;
    } else if (line[i] == '"') {
      in_str = !in_str;
    } else if (line[i] == '#' && !in_str) {
      return line.substr(0, i);
    }
  }
  return line;
}

Value parse_scalar(const std::string& raw, const std::string& where) {
  if (raw.empty()) throw ValidationError(where + ": missing value");
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') throw ValidationError(where + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 2 < raw.size()) {
        const char n = raw[++i];
        out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
      } else {
        out += raw[i];
      }
    }
    return out;
  }
  const bool is_float = raw.find_first_of(".eE") != std::string::npos || raw == "inf" || raw == "nan";
  if (!is_float) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec == std::errc() && p == raw.data() + raw.size()) return v;
  } else {
    double d = 0;
    auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), d);
    if (ec == std::errc() && p == raw.data() + raw.size()) return d;
  }
  throw ValidationError(where + ": cannot parse value '" + raw + "'");
}

Value parse_value(const std::string& raw, const std::string& where) {
  if (raw.empty() || raw.front() != '[') return parse_scalar(raw, where);
  if (raw.back() != ']') throw ValidationError(where + ": unterminated array");
  std::vector<double> out;
  std::stringstream ss(raw.substr(1, raw.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto v = parse_scalar(item, where);
    out.push_back(as<double>(v, where));
  }
  return out;
}

}  // namespace

std::string emit_config(const EngineConfig& c) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto v = f.get(c);
    if (!v) continue;
    if (f.section != section) {
      out += (section.empty() ? "" : "\n") + ("[" + f.section + "]\n");
      section = f.section;
    }
    out += f.key + " = " + *v + "\n";
  }
  return out;
}

EngineConfig parse_config(const std::string& text) {
  EngineConfig c;
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.section + "." + f.key] = &f;
  std::stringstream ss(text);
  std::string line, section;
  for (int lineno = 1; std::getline(ss, line); ++lineno) {
    const auto where = "config line " + std::to_string(lineno);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ValidationError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    auto it = index.find(section + "." + key);
    if (it == index.end()) throw ValidationError(where + ": unknown key " + section + "." + key);
    it->second->set(c, parse_value(trim(line.substr(eq + 1)), where));
  }
  c.world.seed = c.seed;
  validate(c);
  return c;
}

EngineConfig load_config(const std::filesystem::path& path) {
  auto c = parse_config(jsonl::read_file(path));
  const auto dir = path.parent_path();
  if (c.store.is_relative()) c.store = dir / c.store;
  if (c.artifacts.is_relative()) c.artifacts = dir / c.artifacts;
  return c;
}

EngineConfig load_config_or_default(const std::optional<std::filesystem::path>& explicit_path) {
  if (explicit_path) return load_config(*explicit_path);
  if (const char* env = std::getenv("FPE_CONFIG"); env && *env) return load_config(env);
  EngineConfig c;
  c.world.seed = c.seed;
  return c;
}

void reseed(EngineConfig& c, std::uint64_t seed) {
  const std::string spec = "mock:" + std::to_string(seed);
  for (auto* s : {&c.model, &c.oracle, &c.trainer, &c.embedder, &c.scorer}) {
    if (sim::is_mock(*s)) *s = spec;
  }
  c.seed = seed;
  c.world.seed = seed;
}

}  // namespace fpe
