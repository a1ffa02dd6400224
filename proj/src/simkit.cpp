#include "fpe/simkit.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/options.hpp"

namespace fpe::sim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double gaussian(std::uint64_t seed, std::string_view stream, std::string_view key, std::uint64_t i) {
  const double a = u01(seed, stream, key, 2 * i);
  const double b = u01(seed, stream, key, 2 * i + 1);
  return std::sqrt(-2.0 * std::log1p(-a)) * std::cos(2.0 * std::numbers::pi * b);
}

constexpr std::string_view kFamilies[] = {"noise",     "motion artifact", "blur",       "low contrast",
                                          "ghosting",  "aliasing",        "bias field", "streak artifact"};
constexpr std::string_view kSeverities[] = {"none",   "minimal", "mild",    "moderate",
                                            "marked", "severe",  "extreme", "critical"};

std::vector<std::string> severity_choices(std::size_t c) {
  if (c == 4) return {"none", "mild", "moderate", "severe"};
  return {kSeverities, kSeverities + c};
}

std::string family(std::size_t k) {
  return k < std::size(kFamilies) ? std::string(kFamilies[k]) : "capability " + std::to_string(k);
}

std::string request_key(const AnswerRequest& r) { return r.image_ref + "\n" + r.question_text; }

std::size_t wrong_option(std::size_t truth, std::size_t choices, std::uint64_t h) {
  return (truth + 1 + h % (choices - 1)) % choices;
}

}  // namespace

std::uint64_t mix(std::uint64_t seed, std::string_view stream, std::string_view key, std::uint64_t counter) {
  std::uint64_t h = fnv1a64(stream, splitmix64(seed));
  h = fnv1a64(key, splitmix64(h));
  return splitmix64(h ^ splitmix64(counter));
}

double u01(std::uint64_t seed, std::string_view stream, std::string_view key, std::uint64_t counter) {
  return static_cast<double>(mix(seed, stream, key, counter) >> 11) * 0x1.0p-53;
}

void validate(const WorldConfig& c) {
  if (c.k < 2) throw ValidationError("simulated world needs K >= 2");
  if (c.dev_size < c.k) throw ValidationError("dev_size must be >= K");
  if (c.pool_size < c.dev_size) throw ValidationError("pool_size must be >= dev_size");
  if (c.k > c.dim) {
    throw ValidationError("infeasible separation: K=" + std::to_string(c.k) + " clusters need D >= K (D=" +
                          std::to_string(c.dim) + ")");
  }
  if (c.base_error.size() != c.k || c.scales.size() != c.k) {
    throw ValidationError("base_error and scales need one entry per dimension");
  }
  for (double e : c.base_error) {
    if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("base error rates must be in [0, 1]");
  }
  for (double s : c.scales) {
    if (!(s > 0.0)) throw ValidationError("learning scales must be > 0");
  }
  if (!(c.kappa >= 0.0 && c.kappa < 1.0)) throw ValidationError("kappa must be in [0, 1)");
  if (c.choices < 2 || c.choices > std::size(kSeverities)) throw ValidationError("choices must be in [2, 8]");
  for (double r : {c.duplicate_fraction, c.oracle_error, c.reject_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("rates must be in [0, 1]");
  }
  if (!(c.spread >= 0.0)) throw ValidationError("spread must be >= 0");
}

std::shared_ptr<const SimWorld> SimWorld::generate(const WorldConfig& config) {
  validate(config);
  auto w = std::make_shared<SimWorld>();
  w->config_ = config;
  const auto seed = config.seed;
  const std::size_t d = config.dim, k = config.k;

  // Gram-Schmidt over Gaussian draws: pairwise orthogonal, unit centers.
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = gaussian(seed, "center", std::to_string(c), j);
    for (const auto& prev : w->centers_) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * prev[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * prev[j];
    }
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 < 1e-12) throw ValidationError("degenerate cluster center draw");
    std::vector<float> unit(d);
    for (std::size_t j = 0; j < d; ++j) unit[j] = static_cast<float>(v[j] / std::sqrt(n2));
    w->centers_.push_back(std::move(unit));
  }

  const auto choices = severity_choices(config.choices);
  const double sigma = config.spread / std::sqrt(static_cast<double>(d));
  auto normalized = [&](std::vector<double> v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    std::vector<float> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(v[j] / std::sqrt(n2));
    return out;
  };

  w->dev_per_dim_.assign(k, 0);
  const std::pair<Split, std::size_t> splits[] = {
      {Split::Pool, config.pool_size}, {Split::Dev, config.dev_size}, {Split::Test, config.test_size}};
  for (const auto& [split, count] : splits) {
    const std::size_t base = w->samples_.size();
    for (std::size_t i = 0; i < count; ++i) {
      const std::string ref = "sim://" + std::string(to_string(split)) + "/" + std::to_string(i);
      SimItem it;
      it.dim = i % k;
      it.sample = w->samples_.size();
      Sample s;
      s.image_ref = ref;
      s.split = split;
      s.id = std::string(to_string(split)) + "-" + std::to_string(i);
      s.capability_labels.assign(k, 0);
      s.capability_labels[it.dim] = 1;

      const bool dup = split == Split::Pool && i >= k && u01(seed, "duplicate", ref) < config.duplicate_fraction;
      if (dup) {
        const auto& src_item = w->items_[base + i - k];
        const auto& src = w->samples_[base + i - k];
        it.content = src_item.content;
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = src.embedding[j] + 0.01 * sigma * gaussian(seed, "jitter", ref, j);
        s.embedding = normalized(std::move(v));
        s.phash = *src.phash ^ (std::uint64_t{1} << (mix(seed, "flip", ref) % 64));
      } else {
        it.content = mix(seed, "content", ref);
        std::vector<double> v(d);
        for (std::size_t j = 0; j < d; ++j) v[j] = w->centers_[it.dim][j] + sigma * gaussian(seed, "point", ref, j);
        s.embedding = normalized(std::move(v));
        s.phash = mix(seed, "phash", hex64(it.content));
      }
      const auto ckey = hex64(it.content);
      it.truth = mix(seed, "truth", ckey) % config.choices;
      s.modality = kAllModalities[mix(seed, "modality", ckey) % std::size(kAllModalities)];

      QAItem qa;
      qa.sample_id = s.id;
      qa.task = Task::Perception;
      qa.question_type = QuestionType::How;
      qa.question_text = "How severe is the " + family(it.dim) + " in this " + std::string(to_string(s.modality)) +
                         " image?";
      qa.choices = choices;
      if (split != Split::Pool) qa.gold_answer = choices[it.truth];
      if (split == Split::Dev) ++w->dev_per_dim_[it.dim];

      w->by_ref_.emplace(ref, w->samples_.size());
      w->samples_.push_back(std::move(s));
      w->qa_.push_back(std::move(qa));
      w->items_.push_back(it);
    }
  }
  return w;
}

const SimItem* SimWorld::lookup(std::string_view image_ref) const {
  auto it = by_ref_.find(std::string(image_ref));
  return it == by_ref_.end() ? nullptr : &items_[it->second];
}

std::string SimWorld::truth_text(const SimItem& item) const { return qa_[item.sample].choices[item.truth]; }

std::vector<double> SimWorld::error_rates(std::span<const std::int64_t> trained_counts) const {
  std::vector<double> e(config_.k);
  for (std::size_t i = 0; i < config_.k; ++i) {
    const double n = i < trained_counts.size() ? static_cast<double>(trained_counts[i]) : 0.0;
    e[i] = config_.base_error[i] * std::exp(-n / config_.scales[i]);
  }
  return e;
}

double SimWorld::expected_dev_accuracy(std::span<const double> error_rates) const {
  double wrong = 0.0;
  for (std::size_t i = 0; i < config_.k; ++i) wrong += static_cast<double>(dev_per_dim_[i]) * error_rates[i];
  return 1.0 - wrong / static_cast<double>(config_.dev_size);
}

IngestReport SimWorld::ingest_into(Datastore& store) const { return store.ingest(samples_, qa_, nullptr); }

std::optional<ModelTag> parse_tag(std::string_view tag) {
  if (!tag.starts_with("mock:")) return std::nullopt;
  tag.remove_prefix(5);
  ModelTag out;
  const auto colon = tag.find(':');
  const auto seed_part = tag.substr(0, colon);
  auto [p, ec] = std::from_chars(seed_part.data(), seed_part.data() + seed_part.size(), out.seed);
  if (ec != std::errc() || p != seed_part.data() + seed_part.size() || seed_part.empty()) return std::nullopt;
  if (colon == std::string_view::npos) return out;
  auto rest = tag.substr(colon + 1);
  if (!rest.starts_with("n=")) return std::nullopt;
  rest.remove_prefix(2);
  while (!rest.empty()) {
    const auto comma = std::min(rest.find(','), rest.size());
    std::int64_t v = 0;
    auto [q, ec2] = std::from_chars(rest.data(), rest.data() + comma, v);
    if (ec2 != std::errc() || q != rest.data() + comma || v < 0) return std::nullopt;
    out.counts.push_back(v);
    rest.remove_prefix(std::min(comma + 1, rest.size()));
  }
  return out;
}

std::string format_tag(const ModelTag& tag) {
  std::string s = "mock:" + std::to_string(tag.seed);
  bool any = false;
  for (auto c : tag.counts) any = any || c != 0;
  if (!any) return s;
  s += ":n=";
  for (std::size_t i = 0; i < tag.counts.size(); ++i) s += (i ? "," : "") + std::to_string(tag.counts[i]);
  return s;
}

bool is_mock(std::string_view spec) { return parse_tag(spec).has_value(); }

std::uint64_t mock_seed(std::string_view spec) {
  auto t = parse_tag(spec);
  if (!t) throw ValidationError("not a mock client spec: " + std::string(spec));
  return t->seed;
}

SimModel::SimModel(std::shared_ptr<const SimWorld> world, std::vector<std::int64_t> counts)
    : world_(std::move(world)) {
  counts.resize(world_->config().k, 0);
  err_ = world_->error_rates(counts);
  tag_ = format_tag({world_->config().seed, std::move(counts)});
}

ModelAnswer SimModel::answer(const AnswerRequest& request) {
  const auto* item = world_->lookup(request.image_ref);
  if (!item) throw ClientError("unknown image_ref " + request.image_ref);
  const auto& cfg = world_->config();
  const auto seed = cfg.seed;
  const auto key = request_key(request);
  const auto run = static_cast<std::uint64_t>(request.run);
  const double err = err_[item->dim];
  const bool correct = u01(seed, "answer", key, run) >= err;

  ModelAnswer a;
  if (request.choices.empty()) {
    a.text = correct ? world_->truth_text(*item) : "unremarkable";
  } else {
    const auto c = request.choices.size();
    const auto truth = std::min(item->truth, c - 1);
    a.text = request.choices[correct ? truth : wrong_option(truth, c, mix(seed, "wrong", key, run))];
  }

  // Mean logprob ln(1 - err * kappa), scaled per item by a factor in [0.5, 1.5], with
  // zero-sum per-token jitter of at most +-80% so every token stays <= 0.
  const std::size_t len = 3 + mix(seed, "length", key, run) % 4;
  const double m = std::log1p(-err * cfg.kappa) * (0.5 + u01(seed, "scale", key));
  std::vector<double> z(len);
  double zsum = 0.0;
  for (std::size_t i = 0; i < len; ++i) zsum += z[i] = 0.8 * u01(seed, "token", key, run * 16 + i) - 0.4;
  for (std::size_t i = 0; i < len; ++i) {
    const double lp = m * (1.0 + z[i] - zsum / static_cast<double>(len));
    a.token_logprobs.push_back(std::min(lp, 0.0));
  }
  return a;
}

std::string SimOracle::annotate(const AnswerRequest& request) {
  const auto* item = world_->lookup(request.image_ref);
  if (!item) throw ClientError("unknown image_ref " + request.image_ref);
  const auto seed = world_->config().seed;
  const auto key = request_key(request);
  const bool wrong = u01(seed, "oracle", key) < world_->config().oracle_error;
  if (request.choices.empty()) return wrong ? "unremarkable" : world_->truth_text(*item);
  const auto c = request.choices.size();
  const auto truth = std::min(item->truth, c - 1);
  return request.choices[wrong ? wrong_option(truth, c, mix(seed, "oracle-wrong", key)) : truth];
}

std::string SimOracle::identity() const { return "mock-oracle:" + std::to_string(world_->config().seed); }

std::vector<float> SimEmbedder::embed_image(const std::string& image_ref) {
  const auto* item = world_->lookup(image_ref);
  if (!item) throw ClientError("unknown image_ref " + image_ref);
  return world_->samples()[item->sample].embedding;
}

std::vector<float> SimTextEmbedder::embed_text(const std::string& text) {
  std::vector<float> v(dim_, 0.0f);
  const auto norm = options::normalize(text);
  std::size_t i = 0;
  while (i < norm.size()) {
    const auto j = std::min(norm.find(' ', i), norm.size());
    const auto h = fnv1a64(std::string_view(norm).substr(i, j - i));
    v[h % dim_] += (h >> 63) ? -1.0f : 1.0f;
    i = j + 1;
  }
  return v;
}

double SimScorer::score(const std::string& answer, const QAItem& qa) {
  return max_score() * annotate::token_f1(answer, qa.gold_answer);
}

std::string SimTrainer::fine_tune(std::span<const std::filesystem::path> training_sets,
                                  const std::string& base_model_tag, const ProgressFn& progress) {
  auto base = parse_tag(base_model_tag);
  if (!base) throw ClientError("simulated trainer cannot start from " + base_model_tag);
  if (base->seed != world_->config().seed) throw ClientError("model tag seed does not match the simulated world");
  const auto k = world_->config().k;
  base->counts.resize(k, 0);
  std::vector<std::unordered_set<std::uint64_t>> learned(k);
  for (std::size_t f = 0; f < training_sets.size(); ++f) {
    jsonl::for_each(training_sets[f], [&](const Json& r) {
      const auto ref = r.at("image_ref").get<std::string>();
      const auto* item = world_->lookup(ref);
      if (!item) {
        spdlog::warn("simulated trainer: skipping unknown image_ref {}", ref);
        return;
      }
      const auto& choices = world_->qa()[item->sample].choices;
      const auto picked = options::resolve(r.at("answer").get<std::string>(), choices);
      if (picked && *picked == item->truth) learned[item->dim].insert(item->content);
    });
    if (progress) progress(static_cast<double>(f + 1) / static_cast<double>(training_sets.size()),
                           training_sets[f].filename().string());
  }
  for (std::size_t i = 0; i < k; ++i) base->counts[i] += static_cast<std::int64_t>(learned[i].size());
  return format_tag(*base);
}

std::shared_ptr<ModelClient> SimResolver::resolve(const std::string& tag) {
  auto t = parse_tag(tag);
  if (!t) throw ClientError("not a simulated model tag: " + tag);
  if (t->seed != world_->config().seed) throw ClientError("model tag seed does not match the simulated world");
  return std::make_shared<SimModel>(world_, t->counts);
}

ReviewDecision simulated_review(const SimWorld& world, const annotate::AnnotationRecord& record,
                                bool accept_adopts_self) {
  using annotate::ReviewAction;
  const auto* item = world.lookup(record.image_ref);
  if (!item) throw ClientError("unknown image_ref " + record.image_ref);
  if (u01(world.config().seed, "reject", record.record_id) < world.config().reject_rate) {
    return {ReviewAction::Reject, ""};
  }
  const bool self = record.route == annotate::Route::Escalate && accept_adopts_self;
  const std::string& pending = self ? record.y_self.text : record.y_oracle.value_or("");
  const auto picked = options::resolve(pending, record.choices);
  if (picked && *picked == item->truth) return {ReviewAction::Accept, ""};
  return {ReviewAction::Edit, world.truth_text(*item)};
}

std::size_t review_all(const SimWorld& world, annotate::ReviewQueue& queue, int iteration, bool accept_adopts_self) {
  annotate::QueueFilter filter;
  filter.iteration = iteration;
  const auto page = queue.queue(filter, 0, std::numeric_limits<std::size_t>::max());
  for (const auto& r : page.items) {
    const auto d = simulated_review(world, r, accept_adopts_self);
    queue.submit_review(r.record_id, d.action, d.edited_text, "sim-reviewer");
  }
  return page.items.size();
}

double total_error(std::span<const double> e, std::span<const std::int64_t> n, std::span<const double> s) {
  double total = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) total += e[i] * std::exp(-static_cast<double>(n[i]) / s[i]);
  return total;
}

Enumeration enumerate_allocations(std::span<const double> e, std::span<const double> s, std::int64_t budget) {
  if (e.empty() || e.size() != s.size()) throw ValidationError("enumeration needs matching e and s");
  Enumeration out;
  out.best_error = std::numeric_limits<double>::infinity();
  std::vector<std::int64_t> n(e.size(), 0);
  auto rec = [&](auto&& self, std::size_t i, std::int64_t left) -> void {
    if (i + 1 == e.size()) {
      n[i] = left;
      ++out.allocations;
      const double err = total_error(e, n, s);
      if (err < out.best_error) {
        out.best_error = err;
        out.best = n;
      }
      return;
    }
    for (std::int64_t v = 0; v <= left; ++v) {
      n[i] = v;
      self(self, i + 1, left - v);
    }
  };
  rec(rec, 0, budget);
  return out;
}

}  // namespace fpe::sim
