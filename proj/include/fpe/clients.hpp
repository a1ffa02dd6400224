#pragma once

// Pluggable client interfaces. Every implementation must be safe to call from several
// threads at once; the evaluator fans requests out over a worker pool.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/common.hpp"

namespace fpe {

struct QAItem;

struct AnswerRequest {
  std::string image_ref;
  std::string question_text;
  std::vector<std::string> choices;
  // Evaluation run index in [0, R); lets a client vary its sampling per run.
  int run = 0;
};

struct ModelAnswer {
  std::string text;
  std::vector<double> token_logprobs;
};

class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual ModelAnswer answer(const AnswerRequest& request) = 0;
  virtual std::string identity() const = 0;
};

class OracleClient {
 public:
  virtual ~OracleClient() = default;
  virtual std::string annotate(const AnswerRequest& request) = 0;
  virtual std::string identity() const = 0;
};

// Image embedding provider (f_enc) used at ingest when a sample arrives without one.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<float> embed_image(const std::string& image_ref) = 0;
};

class TextEmbedClient {
 public:
  virtual ~TextEmbedClient() = default;
  virtual std::vector<float> embed_text(const std::string& text) = 0;
  virtual std::size_t dim() const = 0;
};

// Scores a description answer against its QA item, in [0, max_score()].
class DescriptionScorer {
 public:
  virtual ~DescriptionScorer() = default;
  virtual double score(const std::string& answer, const QAItem& qa) = 0;
  virtual double max_score() const = 0;
};

using ProgressFn = std::function<void(double fraction, const std::string& message)>;

class TrainerClient {
 public:
  virtual ~TrainerClient() = default;
  // Blocking. Returns a model tag resolvable by the ModelResolver.
  virtual std::string fine_tune(std::span<const std::filesystem::path> training_sets,
                                const std::string& base_model_tag, const ProgressFn& progress) = 0;
};

// Maps a model tag (the base tag or one returned by a trainer) to a live client.
class ModelResolver {
 public:
  virtual ~ModelResolver() = default;
  virtual std::shared_ptr<ModelClient> resolve(const std::string& tag) = 0;
};

}  // namespace fpe
