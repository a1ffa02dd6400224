#include "fpe/annotation_router.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/options.hpp"
#include "fpe/parallel.hpp"

namespace fpe::annotate {

std::string_view to_string(Route r) {
  switch (r) {
    case Route::AdoptOracle: return "adopt_oracle";
    case Route::Escalate: return "escalate";
    case Route::AdoptSelf: return "adopt_self";
    case Route::ColdStartReview: return "cold_start_review";
  }
  return "?";
}

std::string_view to_string(ReviewAction a) {
  switch (a) {
    case ReviewAction::Accept: return "accept";
    case ReviewAction::Edit: return "edit";
    case ReviewAction::Reject: return "reject";
  }
  return "?";
}

Route parse_route(std::string_view s) {
  for (auto r : {Route::AdoptOracle, Route::Escalate, Route::AdoptSelf, Route::ColdStartReview}) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("unknown route: " + std::string(s));
}

ReviewAction parse_action(std::string_view s) {
  for (auto a : {ReviewAction::Accept, ReviewAction::Edit, ReviewAction::Reject}) {
    if (to_string(a) == s) return a;
  }
  throw ValidationError("unknown review action: " + std::string(s));
}

double trajectory_entropy(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw ValidationError("empty trajectory");
  double sum = 0.0;
  for (double lp : token_logprobs) {
    if (!(lp <= 0.0)) throw ValidationError("token logprob must be <= 0");
    sum += lp;
  }
  // -0.0 for an all-zero trajectory would print oddly.
  return sum == 0.0 ? 0.0 : -sum / static_cast<double>(token_logprobs.size());
}

Route route(double h_traj, double delta_ann, const Thresholds& th, int t, bool has_oracle) {
  if (t < 0) throw ValidationError("iteration must be >= 0");
  if (!std::isfinite(th.tau_h) || !std::isfinite(th.tau_ann)) throw ValidationError("thresholds must be finite");
  if (t == 0) return Route::ColdStartReview;
  if (h_traj >= th.tau_h) {
    if (!has_oracle) throw ValidationError("oracle annotation required");
    return Route::AdoptOracle;
  }
  return delta_ann < th.tau_ann ? Route::Escalate : Route::AdoptSelf;
}

double calibrate_tau_h(std::span<const double> entropies, double q) {
  if (entropies.empty()) throw ValidationError("no entropies to calibrate from");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile must be in [0, 1]");
  std::vector<double> v(entropies.begin(), entropies.end());
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double token_f1(std::string_view a, std::string_view b) {
  auto split = [](std::string_view s) {
    std::unordered_map<std::string, int> bag;
    const std::string n = options::normalize(s);
    std::size_t i = 0;
    while (i < n.size()) {
      const auto j = std::min(n.find(' ', i), n.size());
      ++bag[n.substr(i, j - i)];
      i = j + 1;
    }
    return bag;
  };
  const auto ta = split(a), tb = split(b);
  int na = 0, nb = 0, common = 0;
  for (const auto& [w, c] : ta) na += c;
  for (const auto& [w, c] : tb) nb += c;
  if (na == 0 && nb == 0) return 1.0;
  if (na == 0 || nb == 0) return 0.0;
  for (const auto& [w, c] : ta) {
    if (auto it = tb.find(w); it != tb.end()) common += std::min(c, it->second);
  }
  return 2.0 * common / static_cast<double>(na + nb);
}

double DefaultAgreement::score(const std::string& y_self, const std::string& y_oracle, const QAItem& qa) const {
  if (qa.task == Task::Description) return token_f1(y_self, y_oracle);
  const auto a = options::resolve(y_self, qa.choices);
  const auto b = options::resolve(y_oracle, qa.choices);
  if (a && b) return *a == *b ? 1.0 : 0.0;
  if (!a && !b) return options::normalize(y_self) == options::normalize(y_oracle) ? 1.0 : 0.0;
  return 0.0;
}

Status AnnotationRecord::status() const {
  if (review && review->action == ReviewAction::Reject) return Status::Rejected;
  return final_label ? Status::Resolved : Status::Pending;
}

std::string record_id(int iteration, const std::string& sample_id, std::size_t qa_index) {
  return std::to_string(iteration) + ":" + sample_id + ":" + std::to_string(qa_index);
}

namespace {

std::string_view status_name(Status s) {
  switch (s) {
    case Status::Pending: return "pending";
    case Status::Resolved: return "resolved";
    case Status::Rejected: return "rejected";
  }
  return "?";
}

}  // namespace

Json to_json(const AnnotationRecord& r) {
  Json j{{"record_id", r.record_id},
         {"iteration", r.iteration},
         {"sample_id", r.sample_id},
         {"qa_index", r.qa_index},
         {"image_ref", r.image_ref},
         {"modality", r.modality},
         {"task", r.task},
         {"question", r.question},
         {"choices", r.choices},
         {"y_self", {{"text", r.y_self.text}, {"token_logprobs", r.y_self.token_logprobs}}},
         {"y_oracle", r.y_oracle ? Json{{"text", *r.y_oracle}} : Json(nullptr)},
         {"H_traj", r.h_traj},
         {"delta_ann", r.delta_ann},
         {"route", r.route},
         {"review", nullptr},
         {"final_label", r.final_label ? Json(*r.final_label) : Json(nullptr)},
         {"status", status_name(r.status())},
         {"source_prototype", r.source_prototype},
         {"target_dimension", r.target_dimension}};
  if (r.review) {
    Json rv{{"action", r.review->action}, {"reviewer", r.review->reviewer}, {"timestamp", r.review->timestamp}};
    if (r.review->action == ReviewAction::Edit) rv["edited_text"] = r.review->edited_text;
    j["review"] = std::move(rv);
  }
  return j;
}

AnnotationRecord record_from_json(const Json& j) {
  AnnotationRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.iteration = j.at("iteration").get<int>();
  r.sample_id = j.at("sample_id").get<std::string>();
  r.qa_index = j.at("qa_index").get<std::size_t>();
  r.image_ref = j.at("image_ref").get<std::string>();
  r.modality = parse_modality(j.at("modality").get<std::string>());
  r.task = j.at("task").get<Task>();
  r.question = j.at("question").get<std::string>();
  r.choices = j.at("choices").get<std::vector<std::string>>();
  r.y_self.text = j.at("y_self").at("text").get<std::string>();
  r.y_self.token_logprobs = j.at("y_self").at("token_logprobs").get<std::vector<double>>();
  if (const auto& o = j.at("y_oracle"); !o.is_null()) r.y_oracle = o.at("text").get<std::string>();
  r.h_traj = j.at("H_traj").get<double>();
  r.delta_ann = j.at("delta_ann").get<double>();
  r.route = parse_route(j.at("route").get<std::string>());
  if (const auto& rv = j.at("review"); !rv.is_null()) {
    Review review;
    review.action = parse_action(rv.at("action").get<std::string>());
    review.edited_text = rv.value("edited_text", "");
    review.reviewer = rv.at("reviewer").get<std::string>();
    review.timestamp = rv.at("timestamp").get<std::int64_t>();
    r.review = std::move(review);
  }
  if (const auto& f = j.at("final_label"); !f.is_null()) r.final_label = f.get<std::string>();
  r.source_prototype = j.value("source_prototype", "");
  r.target_dimension = j.value("target_dimension", -1);
  return r;
}

std::vector<AnnotationRecord> annotate_and_route(std::span<const AnnotateTarget> targets, ModelClient& model,
                                                 OracleClient& oracle, const AgreementScorer& agreement,
                                                 const AnnotateOptions& opts) {
  std::vector<AnnotationRecord> out(targets.size());
  parallel_for(targets.size(), opts.parallelism, [&](std::size_t i) {
    const auto& tg = targets[i];
    const AnswerRequest req{tg.image_ref, tg.qa.question_text, tg.qa.choices, 0};
    auto with_retry = [&](auto&& call, const char* who) {
      try {
        return call();
      } catch (const std::exception& first) {
        spdlog::warn("{} call failed for {} ({}); retrying once", who, tg.ref.key(), first.what());
        try {
          return call();
        } catch (const std::exception& e) {
          throw ClientError(std::string(who) + " failed for " + tg.ref.key() + ": " + e.what());
        }
      }
    };
    AnnotationRecord r;
    r.iteration = opts.iteration;
    r.sample_id = tg.ref.sample_id;
    r.qa_index = tg.ref.qa_index;
    r.record_id = record_id(opts.iteration, r.sample_id, r.qa_index);
    r.image_ref = tg.image_ref;
    r.modality = tg.modality;
    r.task = tg.qa.task;
    r.question = tg.qa.question_text;
    r.choices = tg.qa.choices;
    r.source_prototype = tg.source_prototype;
    r.target_dimension = tg.target_dimension;
    r.y_self = with_retry([&] { return model.answer(req); }, "model");
    r.y_oracle = with_retry([&] { return oracle.annotate(req); }, "oracle");
    r.h_traj = trajectory_entropy(r.y_self.token_logprobs);
    r.delta_ann = std::clamp(agreement.score(r.y_self.text, *r.y_oracle, tg.qa), 0.0, 1.0);
    r.route = opts.iteration > 0 && opts.force_route
                  ? *opts.force_route
                  : route(r.h_traj, r.delta_ann, opts.thresholds, opts.iteration, r.y_oracle.has_value());
    if (r.route == Route::AdoptOracle) r.final_label = r.y_oracle;
    if (r.route == Route::AdoptSelf) r.final_label = r.y_self.text;
    out[i] = std::move(r);
  });
  return out;
}

double ReviewStats::review_rate() const {
  return total == 0 ? 0.0 : static_cast<double>(routed_to_review) / static_cast<double>(total);
}

double ReviewStats::rate(std::size_t n) const {
  return reviewed() == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(reviewed());
}

Json to_json(const ReviewStats& s) {
  Json routes = Json::object();
  for (const auto& [r, n] : s.by_route) routes[std::string(to_string(r))] = n;
  return {{"total", s.total},
          {"routed_to_review", s.routed_to_review},
          {"review_rate", s.review_rate()},
          {"pending", s.pending},
          {"accept", s.accepted},
          {"edit", s.edited},
          {"reject", s.rejected},
          {"accept_rate", s.rate(s.accepted)},
          {"edit_rate", s.rate(s.edited)},
          {"reject_rate", s.rate(s.rejected)},
          {"by_route", routes}};
}

void ReviewQueue::add(std::vector<AnnotationRecord> records) {
  {
    std::lock_guard lock(mu_);
    for (const auto& r : records) {
      if (records_.contains(r.record_id)) throw Conflict("duplicate annotation record: " + r.record_id);
    }
    for (auto& r : records) {
      if (r.review) clocks_[r.iteration] = std::max(clocks_[r.iteration], r.review->timestamp);
      auto id = r.record_id;
      records_.emplace(std::move(id), std::move(r));
    }
  }
  drained_.notify_all();
}

void ReviewQueue::clear_iteration(int iteration) {
  std::lock_guard lock(mu_);
  std::erase_if(records_, [&](const auto& kv) { return kv.second.iteration == iteration; });
  clocks_.erase(iteration);
}

void ReviewQueue::set_accept_adopts_self(bool v) {
  std::lock_guard lock(mu_);
  accept_adopts_self_ = v;
}

AnnotationRecord ReviewQueue::apply_locked(AnnotationRecord& r, ReviewAction action, const std::string& edited_text,
                                           const std::string& reviewer, std::int64_t timestamp) {
  if (r.review || r.final_label) throw Conflict("already resolved");
  if (r.route != Route::ColdStartReview && r.route != Route::Escalate) {
    throw ValidationError("record " + r.record_id + " is not awaiting review");
  }
  if (action == ReviewAction::Edit && edited_text.empty()) throw ValidationError("edit requires edited_text");
  switch (action) {
    case ReviewAction::Accept:
      if (r.route == Route::Escalate && accept_adopts_self_) {
        r.final_label = r.y_self.text;
      } else {
        if (!r.y_oracle) throw ValidationError("oracle annotation required");
        r.final_label = r.y_oracle;
      }
      break;
    case ReviewAction::Edit: r.final_label = edited_text; break;
    case ReviewAction::Reject: break;
  }
  r.review = Review{action, action == ReviewAction::Edit ? edited_text : "", reviewer, timestamp};
  return r;
}

AnnotationRecord ReviewQueue::submit_review(const std::string& id, ReviewAction action,
                                            const std::string& edited_text, const std::string& reviewer) {
  AnnotationRecord result;
  {
    std::lock_guard lock(mu_);
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFound("no annotation record " + id);
    AnnotationRecord copy = it->second;
    auto& clock = clocks_[copy.iteration];
    result = apply_locked(copy, action, edited_text, reviewer, clock + 1);
    if (journal_) {
      Json e{{"record_id", id}, {"action", action}, {"reviewer", reviewer}, {"timestamp", clock + 1}};
      if (action == ReviewAction::Edit) e["edited_text"] = edited_text;
      jsonl::append(*journal_, e);
    }
    ++clock;
    it->second = result;
  }
  drained_.notify_all();
  return result;
}

std::optional<AnnotationRecord> ReviewQueue::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

QueuePage ReviewQueue::queue(const QueueFilter& filter, std::size_t cursor, std::size_t limit) const {
  std::vector<const AnnotationRecord*> hits;
  std::lock_guard lock(mu_);
  for (const auto& [id, r] : records_) {
    if (!r.needs_review()) continue;
    if (filter.modality && r.modality != *filter.modality) continue;
    if (filter.iteration && r.iteration != *filter.iteration) continue;
    if (filter.route && r.route != *filter.route) continue;
    hits.push_back(&r);
  }
  std::sort(hits.begin(), hits.end(), [](const AnnotationRecord* a, const AnnotationRecord* b) {
    if (a->iteration != b->iteration) return a->iteration < b->iteration;
    if (a->h_traj != b->h_traj) return a->h_traj > b->h_traj;
    return a->record_id < b->record_id;
  });
  QueuePage page;
  page.total = hits.size();
  for (std::size_t i = cursor; i < hits.size() && page.items.size() < limit; ++i) page.items.push_back(*hits[i]);
  if (cursor + page.items.size() < hits.size()) page.next_cursor = cursor + page.items.size();
  return page;
}

std::vector<AnnotationRecord> ReviewQueue::records(std::optional<int> iteration) const {
  std::lock_guard lock(mu_);
  std::vector<AnnotationRecord> out;
  for (const auto& [id, r] : records_) {
    if (!iteration || r.iteration == *iteration) out.push_back(r);
  }
  return out;
}

ReviewStats ReviewQueue::stats(std::optional<int> iteration) const {
  std::lock_guard lock(mu_);
  ReviewStats s;
  for (const auto& [id, r] : records_) {
    if (iteration && r.iteration != *iteration) continue;
    ++s.total;
    ++s.by_route[r.route];
    if (r.route == Route::ColdStartReview || r.route == Route::Escalate) ++s.routed_to_review;
    if (r.needs_review()) ++s.pending;
    if (!r.review) continue;
    switch (r.review->action) {
      case ReviewAction::Accept: ++s.accepted; break;
      case ReviewAction::Edit: ++s.edited; break;
      case ReviewAction::Reject: ++s.rejected; break;
    }
  }
  return s;
}

std::size_t ReviewQueue::pending(std::optional<int> iteration) const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const auto& kv) {
    return kv.second.needs_review() && (!iteration || kv.second.iteration == *iteration);
  }));
}

bool ReviewQueue::wait_until_drained(int iteration, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return drained_.wait_for(lock, timeout, [&] {
    return std::none_of(records_.begin(), records_.end(), [&](const auto& kv) {
      return kv.second.iteration == iteration && kv.second.needs_review();
    });
  });
}

void ReviewQueue::attach_journal(const std::filesystem::path& path) {
  std::lock_guard lock(mu_);
  journal_ = path;
}

std::size_t ReviewQueue::replay_journal(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return 0;
  std::size_t applied = 0;
  {
    std::lock_guard lock(mu_);
    jsonl::for_each(path, [&](const Json& e) {
      auto it = records_.find(e.at("record_id").get<std::string>());
      if (it == records_.end() || it->second.review || it->second.final_label) return;
      const auto ts = e.at("timestamp").get<std::int64_t>();
      AnnotationRecord copy = it->second;
      apply_locked(copy, parse_action(e.at("action").get<std::string>()), e.value("edited_text", ""),
                   e.at("reviewer").get<std::string>(), ts);
      clocks_[copy.iteration] = std::max(clocks_[copy.iteration], ts);
      it->second = std::move(copy);
      ++applied;
    });
  }
  drained_.notify_all();
  return applied;
}

void write_records(const std::filesystem::path& path, std::span<const AnnotationRecord> records) {
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  jsonl::write(path, lines);
}

std::vector<AnnotationRecord> read_records(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> out;
  jsonl::for_each(path, [&](const Json& j) { out.push_back(record_from_json(j)); });
  return out;
}

}  // namespace fpe::annotate
