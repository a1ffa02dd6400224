#pragma once

// JSON-over-HTTP client implementations. Each call opens its own connection, so one
// instance is safe to share across worker threads. Transport failures and non-2xx
// replies surface as ClientError.

#include <atomic>
#include <string>

#include "fpe/clients.hpp"

namespace fpe::http {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};
// Throws ValidationError for anything but an http(s) URL.
Endpoint parse_url(const std::string& url);
bool is_url(std::string_view spec);

// POST `body` to origin + prefix + path and parse the JSON reply.
Json post_json(const Endpoint& ep, const std::string& path, const Json& body, int timeout_s = 60);

// POST /v1/answer {model, image_ref, question_text, choices, run} -> {text, token_logprobs}
class ModelClient final : public fpe::ModelClient {
 public:
  ModelClient(Endpoint ep, std::string tag) : ep_(std::move(ep)), tag_(std::move(tag)) {}
  ModelAnswer answer(const AnswerRequest& request) override;
  std::string identity() const override { return tag_; }

 private:
  Endpoint ep_;
  std::string tag_;
};

// Any tag resolves to the same endpoint; the tag travels in the request's "model" field.
class ModelResolver final : public fpe::ModelResolver {
 public:
  explicit ModelResolver(const std::string& url) : url_(url), ep_(parse_url(url)) {}
  std::shared_ptr<fpe::ModelClient> resolve(const std::string& tag) override;

 private:
  std::string url_;
  Endpoint ep_;
};

// POST /v1/annotate {image_ref, question_text, choices} -> {text}
class OracleClient final : public fpe::OracleClient {
 public:
  explicit OracleClient(const std::string& url) : url_(url), ep_(parse_url(url)) {}
  std::string annotate(const AnswerRequest& request) override;
  std::string identity() const override { return url_; }

 private:
  std::string url_;
  Endpoint ep_;
};

// POST /v1/fine_tune {training_sets, base_model_tag} -> {model_tag}; blocking.
class TrainerClient final : public fpe::TrainerClient {
 public:
  explicit TrainerClient(const std::string& url) : ep_(parse_url(url)) {}
  std::string fine_tune(std::span<const std::filesystem::path> training_sets, const std::string& base_model_tag,
                        const ProgressFn& progress) override;

 private:
  Endpoint ep_;
};

// POST /v1/embed {image_ref} or {text} -> {embedding}
class Embedder final : public EmbeddingProvider, public TextEmbedClient {
 public:
  explicit Embedder(const std::string& url) : ep_(parse_url(url)) {}
  std::vector<float> embed_image(const std::string& image_ref) override;
  std::vector<float> embed_text(const std::string& text) override;
  // 0 until the first text embedding has been fetched.
  std::size_t dim() const override { return dim_.load(); }

 private:
  Endpoint ep_;
  std::atomic<std::size_t> dim_{0};
};

// POST /v1/score {answer, question_text, gold_answer} -> {score}; scores on a 0-5 scale.
class Scorer final : public DescriptionScorer {
 public:
  explicit Scorer(const std::string& url) : ep_(parse_url(url)) {}
  double score(const std::string& answer, const QAItem& qa) override;
  double max_score() const override { return 5.0; }

 private:
  Endpoint ep_;
};

}  // namespace fpe::http
