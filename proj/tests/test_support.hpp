#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fpe/clients.hpp"
#include "fpe/datastore.hpp"

namespace fpe::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "fpe-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Model whose answer is a pure function of the request, supplied by the test.
class ScriptedModel final : public ModelClient {
 public:
  using Fn = std::function<ModelAnswer(const AnswerRequest&)>;
  explicit ScriptedModel(Fn fn) : fn_(std::move(fn)) {}
  ModelAnswer answer(const AnswerRequest& r) override { return fn_(r); }
  std::string identity() const override { return "scripted"; }

 private:
  Fn fn_;
};

inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g;
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = g(rng);
    n += x * x;
  }
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / std::sqrt(n));
  return out;
}

inline Sample make_sample(const std::string& id, Split split, std::vector<float> emb, CapabilityLabels labels,
                          Modality m = Modality::MRI) {
  Sample s;
  s.id = id;
  s.image_ref = "sim://" + id;
  s.modality = m;
  s.embedding = std::move(emb);
  s.capability_labels = std::move(labels);
  s.split = split;
  return s;
}

inline QAItem make_qa(const std::string& sample_id, std::string gold, QuestionType type = QuestionType::What) {
  QAItem q;
  q.sample_id = sample_id;
  q.task = Task::Perception;
  q.question_type = type;
  q.question_text = "Which finding is present?";
  q.choices = {"A) none", "B) motion artifact", "C) lesion", "D) edema"};
  q.gold_answer = std::move(gold);
  return q;
}

}  // namespace fpe::test
