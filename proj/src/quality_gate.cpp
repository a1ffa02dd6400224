#include "fpe/quality_gate.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fpe/jsonl.hpp"

namespace fpe::quality {

namespace {

constexpr int kSide = 32;
constexpr int kBlock = 8;

// Orthonormal DCT-II basis rows for the first 8 frequencies of a 32-point transform.
const std::array<std::array<double, kSide>, kBlock>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, kSide>, kBlock> b{};
    for (int u = 0; u < kBlock; ++u) {
      const double scale = u == 0 ? std::sqrt(1.0 / kSide) : std::sqrt(2.0 / kSide);
      for (int x = 0; x < kSide; ++x) {
        b[u][x] = scale * std::cos((2.0 * x + 1.0) * u * std::numbers::pi / (2.0 * kSide));
      }
    }
    return b;
  }();
  return basis;
}

}  // namespace

std::uint64_t phash_pixels(std::span<const double> gray) {
  if (gray.size() != static_cast<std::size_t>(kSide * kSide)) {
    throw ValidationError("phash_pixels expects a 32x32 raster");
  }
  const auto& basis = dct_basis();

  // Separable transform: columns first (vertical frequency u), then rows (horizontal v).
  std::array<std::array<double, kSide>, kBlock> partial{};
  for (int u = 0; u < kBlock; ++u) {
    for (int col = 0; col < kSide; ++col) {
      double acc = 0.0;
      for (int row = 0; row < kSide; ++row) acc += basis[u][row] * gray[row * kSide + col];
      partial[u][col] = acc;
    }
  }
  std::array<double, kBlock * kBlock> block{};
  for (int u = 0; u < kBlock; ++u) {
    for (int v = 0; v < kBlock; ++v) {
      double acc = 0.0;
      for (int col = 0; col < kSide; ++col) acc += partial[u][col] * basis[v][col];
      block[u * kBlock + v] = acc;
    }
  }

  std::array<double, kBlock * kBlock - 1> ac{};
  std::copy(block.begin() + 1, block.end(), ac.begin());
  auto mid = ac.begin() + ac.size() / 2;
  std::nth_element(ac.begin(), mid, ac.end());
  const double median = *mid;

  std::uint64_t bits = 0;
  for (int p = 1; p < kBlock * kBlock; ++p) {
    if (block[p] > median) bits |= std::uint64_t{1} << (63 - p);
  }
  return bits;
}

std::uint64_t phash(std::span<const unsigned char> image_bytes, std::string_view sample_id) {
  cv::Mat raw(1, static_cast<int>(image_bytes.size()), CV_8UC1,
              const_cast<unsigned char*>(image_bytes.data()));
  cv::Mat img = image_bytes.empty() ? cv::Mat{} : cv::imdecode(raw, cv::IMREAD_GRAYSCALE);
  if (img.empty()) {
    throw ValidationError("undecodable image for sample '" + std::string(sample_id) + "'");
  }
  cv::Mat small;
  cv::resize(img, small, cv::Size(kSide, kSide), 0, 0, cv::INTER_AREA);
  std::vector<double> gray(kSide * kSide);
  for (int r = 0; r < kSide; ++r) {
    for (int c = 0; c < kSide; ++c) gray[r * kSide + c] = small.at<unsigned char>(r, c);
  }
  return phash_pixels(gray);
}

std::uint64_t phash_file(const std::filesystem::path& path, std::string_view sample_id) {
  std::string bytes;
  try {
    bytes = jsonl::read_file(path);
  } catch (const NotFound&) {
    throw ValidationError("unreadable image '" + path.string() + "' for sample '" +
                          std::string(sample_id) + "'");
  }
  return phash(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()),
               sample_id);
}

int hamming(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

FilterResult dedup(std::span<const HashedRecord> records, int threshold,
                   std::span<const HashedRecord> prior) {
  FilterResult result;
  std::vector<const HashedRecord*> keepers;
  for (const auto& p : prior) {
    if (p.hash) keepers.push_back(&p);
  }
  for (const auto& rec : records) {
    if (!rec.hash) {
      result.kept.push_back(rec.id);
      continue;
    }
    const HashedRecord* match = nullptr;
    int best = 65;
    for (const auto* k : keepers) {
      const int d = hamming(*rec.hash, *k->hash);
      if (d <= threshold && d < best) {
        best = d;
        match = k;
      }
    }
    if (match) {
      result.dropped.push_back({rec.id, match->id, static_cast<double>(best), "near-duplicate image"});
    } else {
      result.kept.push_back(rec.id);
      keepers.push_back(&rec);
    }
  }
  return result;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<SparseVector> tfidf(std::span<const std::string> documents) {
  std::vector<SparseVector> tf(documents.size());
  std::unordered_map<std::string, int> df;
  std::size_t non_empty = 0;
  for (std::size_t i = 0; i < documents.size(); ++i) {
    for (auto& tok : tokenize(documents[i])) tf[i][tok] += 1.0;
    if (!tf[i].empty()) ++non_empty;
    for (const auto& [term, _] : tf[i]) ++df[term];
  }
  const double n = static_cast<double>(non_empty);
  for (auto& vec : tf) {
    for (auto& [term, w] : vec) w *= std::log((1.0 + n) / (1.0 + df[term])) + 1.0;
  }
  return tf;
}

double cosine(const SparseVector& a, const SparseVector& b) {
  double na = 0.0, nb = 0.0, d = 0.0;
  for (const auto& [t, w] : a) na += w * w;
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (const auto& [t, w] : small) {
    if (auto it = large.find(t); it != large.end()) d += w * it->second;
  }
  return d / (std::sqrt(na) * std::sqrt(nb));
}

FilterResult diversity_filter(std::span<const TextRecord> descriptions, double sim_threshold) {
  FilterResult result;
  std::vector<std::size_t> candidates;
  std::vector<std::string> docs;
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    if (tokenize(descriptions[i].text).empty()) continue;
    candidates.push_back(i);
    docs.push_back(descriptions[i].text);
  }
  const auto vecs = tfidf(docs);

  std::vector<std::size_t> kept_slots;  // indices into candidates/vecs
  std::size_t next = 0;
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    if (next >= candidates.size() || candidates[next] != i) {
      result.dropped.push_back({descriptions[i].id, "", 0.0, "empty"});
      continue;
    }
    const std::size_t slot = next++;
    std::optional<std::size_t> match;
    double best = -1.0;
    for (std::size_t k : kept_slots) {
      const double c = cosine(vecs[slot], vecs[k]);
      if (c > sim_threshold && c > best) {
        best = c;
        match = k;
      }
    }
    if (match) {
      result.dropped.push_back(
          {descriptions[i].id, descriptions[candidates[*match]].id, best, "near-duplicate description"});
    } else {
      result.kept.push_back(descriptions[i].id);
      kept_slots.push_back(slot);
    }
  }
  return result;
}

Json to_json(const Disposition& d) {
  Json j{{"record_id", d.record_id},
         {"disposition", d.kept ? "kept" : "dropped"},
         {"reason", d.reason}};
  if (d.matched_id) j["matched_id"] = *d.matched_id;
  if (d.measure) j["distance_or_cosine"] = *d.measure;
  return j;
}

Disposition disposition_from_json(const Json& j) {
  Disposition d;
  d.record_id = j.at("record_id").get<std::string>();
  d.kept = j.at("disposition").get<std::string>() == "kept";
  d.reason = j.value("reason", "");
  if (j.contains("matched_id")) d.matched_id = j["matched_id"].get<std::string>();
  if (j.contains("distance_or_cosine")) d.measure = j["distance_or_cosine"].get<double>();
  return d;
}

}  // namespace fpe::quality
