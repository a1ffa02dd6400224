#include "fpe/datastore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "fpe/jsonl.hpp"
#include "fpe/kernels.hpp"
#include "fpe/options.hpp"
#include "fpe/quality_gate.hpp"

namespace fpe {

namespace fs = std::filesystem;

namespace {

constexpr char kMatrixMagic[4] = {'F', 'P', 'E', '1'};
constexpr std::size_t kMatrixHeader = 4 + 4 + 8;

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>, std::uint32_t, T>>;
  U u;
  if constexpr (std::is_floating_point_v<T>) {
    u = std::bit_cast<std::uint32_t>(v);
  } else {
    u = static_cast<U>(v);
  }
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::string matrix_header(std::size_t dim, std::size_t rows) {
  std::string h(kMatrixMagic, 4);
  put_le<std::uint32_t>(h, static_cast<std::uint32_t>(dim));
  put_le<std::uint64_t>(h, rows);
  return h;
}

std::string encode_rows(std::span<const float> values) {
  std::string out;
  out.reserve(values.size() * 4);
  for (float f : values) put_le<float>(out, f);
  return out;
}

void append_rows(const fs::path& path, std::size_t dim, std::size_t total_rows,
                 std::span<const float> new_values) {
  if (!fs::exists(path)) {
    jsonl::write_atomic(path, matrix_header(dim, 0));
  }
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  f.seekp(0, std::ios::end);
  const auto payload = encode_rows(new_values);
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  f.seekp(0);
  const auto header = matrix_header(dim, total_rows);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
}

bool is_local_file(const std::string& ref) {
  if (ref.rfind("file://", 0) == 0) return fs::is_regular_file(ref.substr(7));
  if (ref.find("://") != std::string::npos) return false;
  std::error_code ec;
  return fs::is_regular_file(ref, ec);
}

std::string local_path(const std::string& ref) {
  return ref.rfind("file://", 0) == 0 ? ref.substr(7) : ref;
}

std::optional<std::string> validate_labels(const CapabilityLabels& labels, std::size_t k) {
  if (labels.size() != k) {
    return "capability_labels length " + std::to_string(labels.size()) + " != K=" + std::to_string(k);
  }
  for (auto v : labels) {
    if (v > 1) return std::string("capability_labels must be 0/1");
  }
  return std::nullopt;
}

}  // namespace

Json to_json(const Sample& s, std::optional<std::size_t> embedding_row) {
  Json j{{"id", s.id},
         {"image_ref", s.image_ref},
         {"modality", s.modality},
         {"split", s.split},
         {"capability_labels", s.capability_labels}};
  if (embedding_row) {
    j["embedding_row"] = *embedding_row;
  } else {
    j["embedding"] = s.embedding;
  }
  if (s.phash) j["phash"] = hex64(*s.phash);
  return j;
}

Sample sample_from_json(const Json& j) {
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.image_ref = j.value("image_ref", "");
    s.modality = parse_modality(j.at("modality").get<std::string>());
    s.split = parse_split(j.at("split").get<std::string>());
    s.capability_labels = j.at("capability_labels").get<CapabilityLabels>();
    if (j.contains("embedding")) s.embedding = j["embedding"].get<std::vector<float>>();
    if (j.contains("phash")) s.phash = parse_hex64(j["phash"].get<std::string>());
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad sample record: ") + e.what());
  }
  return s;
}

Json to_json(const QAItem& q) {
  return Json{{"sample_id", q.sample_id},   {"task", q.task},
              {"question_type", q.question_type}, {"question_text", q.question_text},
              {"choices", q.choices},       {"gold_answer", q.gold_answer}};
}

QAItem qa_from_json(const Json& j) {
  QAItem q;
  try {
    q.sample_id = j.at("sample_id").get<std::string>();
    q.task = j.at("task").get<Task>();
    q.question_type = j.at("question_type").get<QuestionType>();
    q.question_text = j.at("question_text").get<std::string>();
    if (j.contains("choices") && !j["choices"].is_null()) {
      q.choices = j["choices"].get<std::vector<std::string>>();
    }
    q.gold_answer = j.value("gold_answer", "");
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad QA record: ") + e.what());
  }
  return q;
}

std::vector<std::string> IngestReport::rejected_ids() const {
  std::vector<std::string> out;
  for (const auto& r : rejected) out.push_back(r.id);
  return out;
}

Json to_json(const IngestReport& r) {
  Json rej = Json::array();
  for (const auto& x : r.rejected) rej.push_back({{"id", x.id}, {"kind", x.kind}, {"reason", x.reason}});
  return Json{{"samples_added", r.samples_added}, {"qa_added", r.qa_added}, {"rejected", rej}};
}

Json to_json(const IntegrityReport& r) {
  Json ids = Json::array();
  for (const auto& c : r.id_collisions) ids.push_back({{"id", c.id}, {"splits", c.splits}});
  Json pairs = Json::array();
  for (const auto& p : r.cross_split_hash_pairs) {
    pairs.push_back({{"id_a", p.id_a}, {"split_a", p.split_a}, {"id_b", p.id_b},
                     {"split_b", p.split_b}, {"distance", p.distance}});
  }
  return Json{{"disjoint", r.disjoint}, {"id_collisions", ids}, {"cross_split_hash_pairs", pairs}};
}

void write_embedding_matrix(const fs::path& path, const EmbeddingMatrix& m) {
  jsonl::write_atomic(path, matrix_header(m.dim, m.rows()) + encode_rows(m.values));
}

EmbeddingMatrix read_embedding_matrix(const fs::path& path) {
  const std::string bytes = jsonl::read_file(path);
  if (bytes.size() < kMatrixHeader || std::memcmp(bytes.data(), kMatrixMagic, 4) != 0) {
    throw ValidationError(path.string() + ": not an FPE1 embedding matrix");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EmbeddingMatrix m;
  m.dim = get_le<std::uint32_t>(p + 4);
  const auto rows = get_le<std::uint64_t>(p + 8);
  if (bytes.size() < kMatrixHeader + rows * m.dim * 4) {
    throw ValidationError(path.string() + ": truncated embedding matrix");
  }
  m.values.resize(rows * m.dim);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + kMatrixHeader + 4 * i));
  }
  return m;
}

Datastore::Datastore(fs::path root, std::optional<StoreShape> shape) : root_(std::move(root)) {
  if (fs::exists(root_ / "manifest.json")) {
    const Json manifest = Json::parse(jsonl::read_file(root_ / "manifest.json"));
    shape_.dim = manifest.at("dim").get<std::size_t>();
    shape_.capabilities = manifest.at("capabilities").get<std::size_t>();
    shape_.dedup_threshold = manifest.value("dedup_threshold", 5);
    if (shape && (shape->dim != shape_.dim || shape->capabilities != shape_.capabilities)) {
      throw ValidationError("store at " + root_.string() + " has D=" + std::to_string(shape_.dim) +
                            ", K=" + std::to_string(shape_.capabilities) +
                            "; D and K are fixed per store");
    }
    load();
    return;
  }
  if (!shape) throw NotFound("no store at " + root_.string());
  if (shape->dim == 0 || shape->capabilities == 0) {
    throw ValidationError("store needs D >= 1 and K >= 1");
  }
  shape_ = *shape;
  matrix_.dim = shape_.dim;
  fs::create_directories(root_);
  write_embedding_matrix(root_ / "embeddings.bin", matrix_);
  write_manifest();
}

void Datastore::load() {
  matrix_ = read_embedding_matrix(root_ / "embeddings.bin");
  if (matrix_.dim != shape_.dim) throw ValidationError("embedding matrix D does not match manifest");
  if (fs::exists(root_ / "samples.jsonl")) {
    jsonl::for_each(root_ / "samples.jsonl", [&](const Json& j) {
      Entry e;
      e.meta = sample_from_json(j);
      e.row = j.at("embedding_row").get<std::size_t>();
      if (e.row >= matrix_.rows()) throw ValidationError("sample " + e.meta.id + " points past matrix");
      by_id_[e.meta.id] = entries_.size();
      entries_.push_back(std::move(e));
    });
  }
  if (fs::exists(root_ / "qa.jsonl")) {
    jsonl::for_each(root_ / "qa.jsonl", [&](const Json& j) {
      QAItem q = qa_from_json(j);
      auto it = by_id_.find(q.sample_id);
      if (it == by_id_.end()) throw ValidationError("QA record for unknown sample " + q.sample_id);
      entries_[it->second].qa.push_back(std::move(q));
    });
  }
}

void Datastore::write_manifest() const {
  std::map<std::string, std::size_t> counts{{"pool", 0}, {"dev", 0}, {"test", 0}};
  for (const auto& e : entries_) ++counts[std::string(to_string(e.meta.split))];
  Json m{{"format", "fpe-store/1"},
         {"dim", shape_.dim},
         {"capabilities", shape_.capabilities},
         {"dedup_threshold", shape_.dedup_threshold},
         {"counts", counts},
         {"hash_registry", "samples.jsonl:phash"}};
  jsonl::write_atomic(root_ / "manifest.json", m.dump(2) + "\n");
}

IngestReport Datastore::ingest(std::span<const Sample> samples, std::span<const QAItem> qa,
                               EmbeddingProvider* embedder) {
  std::unique_lock lock(mutex_);
  IngestReport report;

  std::vector<Entry> accepted;
  std::unordered_map<std::string, std::size_t> batch_ids;
  std::vector<float> new_rows;

  for (const Sample& in : samples) {
    auto reject = [&](std::string reason) {
      report.rejected.push_back({in.id, "sample", std::move(reason)});
    };
    if (in.id.empty()) {
      reject("empty id");
      continue;
    }
    if (by_id_.contains(in.id) || batch_ids.contains(in.id)) {
      reject("duplicate id");
      continue;
    }
    if (auto bad = validate_labels(in.capability_labels, shape_.capabilities)) {
      reject(*bad);
      continue;
    }
    std::vector<float> emb = in.embedding;
    if (emb.empty() && embedder) {
      try {
        emb = embedder->embed_image(in.image_ref);
      } catch (const std::exception& ex) {
        reject(std::string("embedding provider failed: ") + ex.what());
        continue;
      }
    }
    if (emb.empty()) {
      reject("missing embedding and no embedding provider");
      continue;
    }
    if (emb.size() != shape_.dim) {
      reject("dimension mismatch: got " + std::to_string(emb.size()) + ", expected " +
             std::to_string(shape_.dim));
      continue;
    }
    double norm2 = 0.0;
    bool finite = true;
    for (float v : emb) {
      finite = finite && std::isfinite(v);
      norm2 += static_cast<double>(v) * v;
    }
    if (!finite) {
      reject("non-finite embedding");
      continue;
    }
    if (norm2 <= 0.0) {
      reject("zero-norm embedding");
      continue;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (float& v : emb) v = static_cast<float>(v * inv);

    std::optional<std::uint64_t> hash = in.phash;
    if (!hash && is_local_file(in.image_ref)) {
      try {
        hash = quality::phash_file(local_path(in.image_ref), in.id);
      } catch (const ValidationError& ex) {
        reject(ex.what());
        continue;
      }
    }

    Entry e;
    e.meta = in;
    e.meta.embedding.clear();
    e.meta.phash = hash;
    e.row = matrix_.rows() + accepted.size();
    new_rows.insert(new_rows.end(), emb.begin(), emb.end());
    batch_ids[in.id] = accepted.size();
    accepted.push_back(std::move(e));
  }

  // (entry slot, item); batch samples get slots past the current end of entries_.
  std::vector<std::pair<std::size_t, QAItem>> new_qa;
  for (const QAItem& item : qa) {
    auto reject = [&](std::string reason) {
      report.rejected.push_back({item.sample_id, "qa", std::move(reason)});
    };
    Entry* owner = nullptr;
    std::size_t slot = 0;
    if (auto it = by_id_.find(item.sample_id); it != by_id_.end()) {
      owner = &entries_[it->second];
      slot = it->second;
    } else if (auto bt = batch_ids.find(item.sample_id); bt != batch_ids.end()) {
      owner = &accepted[bt->second];
      slot = entries_.size() + bt->second;
    }
    if (!owner) {
      reject("unknown sample id");
      continue;
    }
    if (item.question_text.empty()) {
      reject("empty question_text");
      continue;
    }
    if (item.task == Task::Perception) {
      if (item.choices.empty()) {
        reject("perception item without choices");
        continue;
      }
      if (item.gold_answer.empty()) {
        if (owner->meta.split != Split::Pool) {
          reject("gold_answer required outside the pool split");
          continue;
        }
      } else if (!options::resolve(item.gold_answer, item.choices)) {
        reject("gold_answer not in choices");
        continue;
      }
    } else if (!item.choices.empty()) {
      reject("description item with choices");
      continue;
    }
    const bool dup =
        std::find(owner->qa.begin(), owner->qa.end(), item) != owner->qa.end() ||
        std::any_of(new_qa.begin(), new_qa.end(),
                    [&](const auto& p) { return p.first == slot && p.second == item; });
    if (dup) {
      reject("duplicate QA item");
      continue;
    }
    new_qa.emplace_back(slot, item);
  }

  if (accepted.empty() && new_qa.empty()) return report;

  // Persist: matrix rows first, then sample records, then QA, then manifest.
  append_rows(root_ / "embeddings.bin", shape_.dim, matrix_.rows() + accepted.size(), new_rows);
  {
    std::string lines;
    for (const auto& e : accepted) lines += to_json(e.meta, e.row).dump() + "\n";
    std::ofstream f(root_ / "samples.jsonl", std::ios::app | std::ios::binary);
    f << lines;
  }
  {
    std::string lines;
    for (const auto& [slot, item] : new_qa) lines += to_json(item).dump() + "\n";
    std::ofstream f(root_ / "qa.jsonl", std::ios::app | std::ios::binary);
    f << lines;
  }

  matrix_.values.insert(matrix_.values.end(), new_rows.begin(), new_rows.end());
  for (auto& e : accepted) {
    by_id_[e.meta.id] = entries_.size();
    entries_.push_back(std::move(e));
  }
  for (auto& [slot, item] : new_qa) entries_[slot].qa.push_back(std::move(item));
  report.samples_added = accepted.size();
  report.qa_added = new_qa.size();
  write_manifest();
  spdlog::debug("ingest: +{} samples, +{} qa, {} rejected", report.samples_added, report.qa_added,
                report.rejected.size());
  return report;
}

IntegrityReport Datastore::verify_split_integrity() const {
  std::shared_lock lock(mutex_);
  IntegrityReport report;

  std::map<std::string, std::set<Split>> seen;
  for (const auto& e : entries_) seen[e.meta.id].insert(e.meta.split);
  for (const auto& [id, splits] : seen) {
    if (splits.size() > 1) report.id_collisions.push_back({id, {splits.begin(), splits.end()}});
  }

  struct Hashes {
    std::vector<std::uint64_t> bits;
    std::vector<const Entry*> owners;
  };
  std::map<Split, Hashes> by_split;
  for (const auto& e : entries_) {
    if (!e.meta.phash) continue;
    auto& h = by_split[e.meta.split];
    h.bits.push_back(*e.meta.phash);
    h.owners.push_back(&e);
  }
  const Split order[] = {Split::Pool, Split::Dev, Split::Test};
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      const auto& ha = by_split[order[a]];
      const auto& hb = by_split[order[b]];
      for (const auto& hit : kernels::parallel::hamming_within(ha.bits, hb.bits, shape_.dedup_threshold)) {
        report.cross_split_hash_pairs.push_back({ha.owners[hit.a]->meta.id, order[a],
                                                 hb.owners[hit.b]->meta.id, order[b], hit.distance});
      }
    }
  }
  report.disjoint = report.id_collisions.empty() && report.cross_split_hash_pairs.empty();
  return report;
}

Sample Datastore::materialize(const Entry& e) const {
  Sample s = e.meta;
  auto r = matrix_.row(e.row);
  s.embedding.assign(r.begin(), r.end());
  return s;
}

std::size_t Datastore::count(Split split) const {
  std::shared_lock lock(mutex_);
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                [&](const Entry& e) { return e.meta.split == split; }));
}

std::optional<Sample> Datastore::sample(std::string_view id) const {
  std::shared_lock lock(mutex_);
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return materialize(entries_[it->second]);
}

std::vector<Sample> Datastore::samples(Split split) const {
  std::shared_lock lock(mutex_);
  std::vector<Sample> out;
  for (const auto& e : entries_) {
    if (e.meta.split == split) out.push_back(materialize(e));
  }
  return out;
}

std::vector<std::string> Datastore::ids(Split split) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.meta.split == split) out.push_back(e.meta.id);
  }
  return out;
}

std::vector<QAItem> Datastore::qa_for(std::string_view sample_id) const {
  std::shared_lock lock(mutex_);
  auto it = by_id_.find(std::string(sample_id));
  if (it == by_id_.end()) return {};
  return entries_[it->second].qa;
}

std::optional<QAItem> Datastore::qa(const QaRef& ref) const {
  std::shared_lock lock(mutex_);
  auto it = by_id_.find(ref.sample_id);
  if (it == by_id_.end() || ref.qa_index >= entries_[it->second].qa.size()) return std::nullopt;
  return entries_[it->second].qa[ref.qa_index];
}

std::vector<Datastore::QaEntry> Datastore::qa_items(Split split) const {
  std::shared_lock lock(mutex_);
  std::vector<QaEntry> out;
  for (const auto& e : entries_) {
    if (e.meta.split != split) continue;
    for (std::size_t i = 0; i < e.qa.size(); ++i) out.push_back({{e.meta.id, i}, e.qa[i]});
  }
  return out;
}

PoolSnapshot Datastore::pool_snapshot() const {
  std::shared_lock lock(mutex_);
  PoolSnapshot snap;
  snap.matrix.dim = shape_.dim;
  for (const auto& e : entries_) {
    if (e.meta.split != Split::Pool) continue;
    snap.ids.push_back(e.meta.id);
    auto r = matrix_.row(e.row);
    snap.matrix.values.insert(snap.matrix.values.end(), r.begin(), r.end());
  }
  return snap;
}

}  // namespace fpe
