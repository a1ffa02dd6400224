#include "fpe/http_clients.hpp"

#include <httplib.h>

#include "fpe/datastore.hpp"

namespace fpe::http {

bool is_url(std::string_view spec) { return spec.starts_with("http://") || spec.starts_with("https://"); }

Endpoint parse_url(const std::string& url) {
  if (!is_url(url)) throw ValidationError("expected an http(s) URL, got '" + url + "'");
  const auto host_start = url.find("://") + 3;
  const auto slash = url.find('/', host_start);
  Endpoint ep;
  ep.origin = url.substr(0, slash);
  if (slash != std::string::npos) {
    ep.prefix = url.substr(slash);
    while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  }
  if (host_start == ep.origin.size()) throw ValidationError("URL without host: " + url);
  return ep;
}

Json post_json(const Endpoint& ep, const std::string& path, const Json& body, int timeout_s) {
  httplib::Client cli(ep.origin);
  cli.set_connection_timeout(10);
  cli.set_read_timeout(timeout_s);
  cli.set_write_timeout(timeout_s);
  const auto target = ep.prefix + path;
  auto res = cli.Post(target, body.dump(), "application/json");
  if (!res) throw ClientError("POST " + ep.origin + target + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ClientError("POST " + ep.origin + target + " returned " + std::to_string(res->status));
  }
  try {
    return Json::parse(res->body);
  } catch (const Json::exception& e) {
    throw ClientError("POST " + ep.origin + target + " returned invalid JSON: " + e.what());
  }
}

namespace {

template <typename T>
T field(const Json& j, const char* key, const char* what) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ClientError(std::string(what) + " reply lacks a valid '" + key + "'");
  }
}

Json request_body(const AnswerRequest& r) {
  Json j{{"image_ref", r.image_ref}, {"question_text", r.question_text}, {"run", r.run}};
  if (!r.choices.empty()) j["choices"] = r.choices;
  return j;
}

}  // namespace

ModelAnswer ModelClient::answer(const AnswerRequest& request) {
  auto body = request_body(request);
  body["model"] = tag_;
  const auto j = post_json(ep_, "/v1/answer", body);
  return {field<std::string>(j, "text", "answer"), field<std::vector<double>>(j, "token_logprobs", "answer")};
}

std::shared_ptr<fpe::ModelClient> ModelResolver::resolve(const std::string& tag) {
  return std::make_shared<ModelClient>(ep_, tag == url_ ? "base" : tag);
}

std::string OracleClient::annotate(const AnswerRequest& request) {
  return field<std::string>(post_json(ep_, "/v1/annotate", request_body(request)), "text", "annotate");
}

std::string TrainerClient::fine_tune(std::span<const std::filesystem::path> training_sets,
                                     const std::string& base_model_tag, const ProgressFn& progress) {
  Json sets = Json::array();
  for (const auto& p : training_sets) sets.push_back(std::filesystem::absolute(p).string());
  const auto j = post_json(ep_, "/v1/fine_tune", {{"training_sets", sets}, {"base_model_tag", base_model_tag}},
                           24 * 3600);
  if (progress) progress(1.0, "remote fine-tune finished");
  return field<std::string>(j, "model_tag", "fine_tune");
}

std::vector<float> Embedder::embed_image(const std::string& image_ref) {
  return field<std::vector<float>>(post_json(ep_, "/v1/embed", {{"image_ref", image_ref}}), "embedding", "embed");
}

std::vector<float> Embedder::embed_text(const std::string& text) {
  auto v = field<std::vector<float>>(post_json(ep_, "/v1/embed", {{"text", text}}), "embedding", "embed");
  dim_.store(v.size());
  return v;
}

double Scorer::score(const std::string& answer, const QAItem& qa) {
  const auto j = post_json(ep_, "/v1/score",
                           {{"answer", answer}, {"question_text", qa.question_text}, {"gold_answer", qa.gold_answer}});
  return field<double>(j, "score", "score");
}

}  // namespace fpe::http
