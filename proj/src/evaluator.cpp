#include "fpe/evaluator.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/options.hpp"
#include "fpe/parallel.hpp"

namespace fpe::eval {

GradeResult grade(std::string_view answer_text, const QAItem& qa, DescriptionScorer* scorer,
                  double description_pass) {
  if (qa.task == Task::Description) {
    if (!scorer) throw ValidationError("scorer required");
    const double s = scorer->score(std::string(answer_text), qa);
    return {s >= description_pass * scorer->max_score(), s};
  }
  const auto gold = options::resolve(qa.gold_answer, qa.choices);
  if (!gold) throw ValidationError("gold_answer not in choices for " + qa.sample_id);
  const auto got = options::resolve(answer_text, qa.choices);
  return {got.has_value() && *got == *gold, std::nullopt};
}

std::vector<EvalItem> eval_items(const Datastore& store, Split split) {
  std::vector<EvalItem> out;
  for (const auto& s : store.samples(split)) {
    const auto qa = store.qa_for(s.id);
    for (std::size_t i = 0; i < qa.size(); ++i) {
      out.push_back({{s.id, i}, qa[i], s.image_ref, s.modality, s.capability_labels});
    }
  }
  return out;
}

void check_answer(const ModelAnswer& a) {
  if (!a.text.empty() && a.token_logprobs.empty()) {
    throw ClientError("answer has text but no token logprobs");
  }
  for (double lp : a.token_logprobs) {
    if (!(lp <= 0.0)) throw ClientError("token logprob > 0 or NaN");
  }
}

namespace {

AnswerRequest request_for(const EvalItem& item, int run) {
  return {item.image_ref, item.qa.question_text, item.qa.choices, run};
}

// One attempt plus one retry. nullopt means both attempts failed.
std::optional<ModelAnswer> answer_with_retry(ModelClient& model, const AnswerRequest& req,
                                             std::string& failure) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      ModelAnswer a = model.answer(req);
      check_answer(a);
      return a;
    } catch (const std::exception& ex) {
      failure = ex.what();
    }
  }
  return std::nullopt;
}

}  // namespace

FailurePool collect_failures(std::span<const EvalItem> items, ModelClient& model,
                             const CollectOptions& opts) {
  if (opts.runs < 1) throw ValidationError("R must be >= 1");
  if (!(opts.gamma >= 0.0 && opts.gamma < 1.0)) throw ValidationError("gamma must be in [0, 1)");

  struct Outcome {
    int wrong = 0;
    std::vector<std::string> transcripts;
    std::vector<Incident> incidents;
  };
  std::vector<Outcome> outcomes(items.size());

  parallel_for(items.size(), opts.parallelism, [&](std::size_t i) {
    const auto& item = items[i];
    auto& out = outcomes[i];
    out.transcripts.resize(static_cast<std::size_t>(opts.runs));
    for (int r = 0; r < opts.runs; ++r) {
      std::string failure;
      auto ans = answer_with_retry(model, request_for(item, r), failure);
      if (!ans) {
        ++out.wrong;
        out.incidents.push_back({item.ref, r, failure});
        continue;
      }
      out.transcripts[static_cast<std::size_t>(r)] = ans->text;
      if (!grade(ans->text, item.qa, opts.scorer, opts.description_pass).correct) ++out.wrong;
    }
  });

  std::size_t failed_runs = 0;
  for (const auto& o : outcomes) failed_runs += o.incidents.size();
  if (!items.empty() && failed_runs == items.size() * static_cast<std::size_t>(opts.runs)) {
    // Every call failed: the client is down, not the model wrong.
    throw ClientError("model client failed on every run: " + outcomes.front().incidents.front().message);
  }

  FailurePool pool;
  pool.runs = opts.runs;
  pool.gamma = opts.gamma;
  pool.inclusive = opts.inclusive;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& out = outcomes[i];
    for (auto& inc : out.incidents) {
      spdlog::warn("model client failed on {} run {} after retry: {}", inc.ref.key(), inc.run, inc.message);
      pool.incidents.push_back(std::move(inc));
    }
    const double rate = static_cast<double>(out.wrong) / opts.runs;
    const bool failed = opts.inclusive ? rate >= opts.gamma : rate > opts.gamma;
    if (!failed) continue;
    pool.cases.push_back({items[i].ref, rate, out.wrong, opts.runs, items[i].labels,
                          std::move(out.transcripts)});
  }
  return pool;
}

ErrorDistribution error_distribution(const FailurePool& pool, std::span<const EvalItem> dev) {
  std::size_t k = 0;
  if (!dev.empty()) {
    k = dev.front().labels.size();
  } else if (!pool.cases.empty()) {
    k = pool.cases.front().labels.size();
  }
  ErrorDistribution d;
  d.e.assign(k, 0.0);
  d.support_counts.assign(k, 0);
  d.failure_counts.assign(k, 0);
  for (const auto& item : dev) {
    if (item.labels.size() != k) throw ValidationError("K mismatch inside dev set");
    for (std::size_t j = 0; j < k; ++j) d.support_counts[j] += item.labels[j] ? 1 : 0;
  }
  for (const auto& c : pool.cases) {
    if (c.labels.size() != k) {
      throw ValidationError("K mismatch between failure pool (" + std::to_string(c.labels.size()) +
                            ") and dev set (" + std::to_string(k) + ")");
    }
    for (std::size_t j = 0; j < k; ++j) d.failure_counts[j] += c.labels[j] ? 1 : 0;
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (d.support_counts[j] > 0) {
      d.e[j] = static_cast<double>(d.failure_counts[j]) / static_cast<double>(d.support_counts[j]);
    }
  }
  return d;
}

MetricsSnapshot dev_metrics(std::span<const EvalItem> items, ModelClient& model,
                            const MetricsOptions& opts, std::vector<ModelAnswer>* answers) {
  if (items.empty()) throw ValidationError("dev set is empty");
  std::vector<ModelAnswer> got(items.size());
  std::vector<GradeResult> grades(items.size());
  parallel_for(items.size(), opts.parallelism, [&](std::size_t i) {
    std::string failure;
    auto ans = answer_with_retry(model, request_for(items[i], 0), failure);
    if (!ans) {
      spdlog::warn("model client failed on {} during dev metrics: {}", items[i].ref.key(), failure);
      return;
    }
    grades[i] = grade(ans->text, items[i].qa, opts.scorer, opts.description_pass);
    got[i] = std::move(*ans);
  });

  MetricsSnapshot m;
  m.model_tag = model.identity();
  m.items = items.size();
  std::map<QuestionType, std::pair<std::size_t, std::size_t>> by_type;
  std::map<Modality, std::pair<std::size_t, std::size_t>> by_modality;
  std::size_t correct = 0, perception = 0, descriptions = 0;
  double desc_sum = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    if (item.qa.task == Task::Description) {
      ++descriptions;
      if (grades[i].score && opts.scorer) desc_sum += *grades[i].score / opts.scorer->max_score();
      continue;
    }
    ++perception;
    const bool ok = grades[i].correct;
    correct += ok;
    auto& t = by_type[item.qa.question_type];
    t.first += ok;
    ++t.second;
    auto& md = by_modality[item.modality];
    md.first += ok;
    ++md.second;
  }
  m.overall_acc = perception ? static_cast<double>(correct) / perception : 0.0;
  for (auto qt : {QuestionType::YesNo, QuestionType::What, QuestionType::How}) {
    auto it = by_type.find(qt);
    if (it == by_type.end()) {
      m.per_type_acc[qt] = std::nullopt;
    } else {
      m.per_type_acc[qt] = static_cast<double>(it->second.first) / it->second.second;
    }
  }
  for (const auto& [mod, c] : by_modality) m.per_modality_acc[mod] = static_cast<double>(c.first) / c.second;
  if (descriptions > 0) m.description_score = desc_sum / descriptions;
  if (answers) *answers = std::move(got);
  return m;
}

Json to_json(const FailureCase& c) {
  return Json{{"sample_id", c.ref.sample_id}, {"qa_index", c.ref.qa_index},
              {"error_rate", c.error_rate},   {"capability_labels", c.labels},
              {"transcripts", c.transcripts}};
}

FailureCase failure_case_from_json(const Json& j) {
  FailureCase c;
  c.ref = {j.at("sample_id").get<std::string>(), j.at("qa_index").get<std::size_t>()};
  c.error_rate = j.at("error_rate").get<double>();
  c.labels = j.at("capability_labels").get<CapabilityLabels>();
  c.transcripts = j.at("transcripts").get<std::vector<std::string>>();
  c.runs = static_cast<int>(c.transcripts.size());
  c.wrong_runs = static_cast<int>(std::lround(c.error_rate * c.runs));
  return c;
}

void write_failure_pool(const std::filesystem::path& path, const FailurePool& pool) {
  std::vector<Json> lines;
  lines.reserve(pool.cases.size());
  for (const auto& c : pool.cases) lines.push_back(to_json(c));
  jsonl::write(path, lines);
}

FailurePool read_failure_pool(const std::filesystem::path& path) {
  FailurePool pool;
  jsonl::for_each(path, [&](const Json& j) { pool.cases.push_back(failure_case_from_json(j)); });
  if (!pool.cases.empty()) pool.runs = pool.cases.front().runs;
  return pool;
}

Json to_json(const ErrorDistribution& d) {
  return Json{{"e", d.e}, {"support_counts", d.support_counts}, {"failure_counts", d.failure_counts}};
}

ErrorDistribution error_distribution_from_json(const Json& j) {
  return {j.at("e").get<std::vector<double>>(), j.at("support_counts").get<std::vector<std::size_t>>(),
          j.at("failure_counts").get<std::vector<std::size_t>>()};
}

Json to_json(const MetricsSnapshot& m) {
  Json types = Json::object();
  for (const auto& [qt, v] : m.per_type_acc) {
    types[std::string(to_string(qt))] = v ? Json(*v) : Json(nullptr);
  }
  Json mods = Json::object();
  for (const auto& [mod, v] : m.per_modality_acc) mods[std::string(to_string(mod))] = v;
  Json j{{"model_tag", m.model_tag},
         {"items", m.items},
         {"overall_acc", m.overall_acc},
         {"per_type_acc", types},
         {"per_modality_acc", mods}};
  j["description_score"] = m.description_score ? Json(*m.description_score) : Json(nullptr);
  return j;
}

MetricsSnapshot metrics_from_json(const Json& j) {
  MetricsSnapshot m;
  m.model_tag = j.value("model_tag", "");
  m.items = j.value("items", std::size_t{0});
  m.overall_acc = j.at("overall_acc").get<double>();
  for (const auto& [k, v] : j.at("per_type_acc").items()) {
    const auto qt = Json(k).get<QuestionType>();
    m.per_type_acc[qt] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  for (const auto& [k, v] : j.at("per_modality_acc").items()) m.per_modality_acc[parse_modality(k)] = v.get<double>();
  if (j.contains("description_score") && !j["description_score"].is_null()) {
    m.description_score = j["description_score"].get<double>();
  }
  return m;
}

}  // namespace fpe::eval
