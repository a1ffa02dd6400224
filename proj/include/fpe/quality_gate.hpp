#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpe/common.hpp"

namespace fpe::quality {

inline constexpr int kDefaultHammingThreshold = 5;
inline constexpr double kDefaultTfIdfThreshold = 0.90;
inline constexpr std::string_view kPHashAlgorithm = "dct32-8x8-median";

struct PerceptualHash {
  std::string sample_id;
  std::uint64_t bits = 0;
  std::string algorithm{kPHashAlgorithm};
};

// DCT pHash over an already-reduced 32x32 grayscale raster (row-major, 1024 values).
//
// The 2D DCT-II is taken over the full raster and the top-left 8x8 block is read in
// row-major order. Position (0,0) is the DC term; it is excluded from the median and its
// bit is the fixed padding bit (always 0). The remaining 63 bits are set where the
// coefficient exceeds the median of those 63 coefficients. Block position p maps to bit
// (63 - p), so the first block entry is the most significant bit.
std::uint64_t phash_pixels(std::span<const double> gray32x32);

// Decode (any format OpenCV reads), convert to grayscale, area-resize to 32x32, hash.
// Throws ValidationError naming `sample_id` when the bytes cannot be decoded.
std::uint64_t phash(std::span<const unsigned char> image_bytes, std::string_view sample_id = {});
std::uint64_t phash_file(const std::filesystem::path& path, std::string_view sample_id = {});

int hamming(std::uint64_t a, std::uint64_t b);

struct HashedRecord {
  std::string id;
  std::optional<std::uint64_t> hash;
};

struct DroppedPair {
  std::string dropped;
  std::string matched;
  double measure = 0.0;  // Hamming distance or cosine
  std::string reason;
};

struct FilterResult {
  std::vector<std::string> kept;
  std::vector<DroppedPair> dropped;
};

// Greedy first-seen-wins: a record is dropped iff its hash is within `threshold` of an
// earlier kept record or of any entry of `prior` (the cumulative training ledger).
// Records without a hash are kept.
FilterResult dedup(std::span<const HashedRecord> records, int threshold,
                   std::span<const HashedRecord> prior = {});

// Lowercase alphanumeric word tokens.
std::vector<std::string> tokenize(std::string_view text);

using SparseVector = std::map<std::string, double>;

// Raw-TF x smoothed-IDF vectors built over one batch: idf = ln((1+N)/(1+df)) + 1,
// N = number of non-empty documents in the batch.
std::vector<SparseVector> tfidf(std::span<const std::string> documents);
double cosine(const SparseVector& a, const SparseVector& b);

struct TextRecord {
  std::string id;
  std::string text;
};

// Drops any description whose TF-IDF cosine to an earlier kept one exceeds
// `sim_threshold`; empty descriptions are dropped with reason "empty".
FilterResult diversity_filter(std::span<const TextRecord> descriptions, double sim_threshold);

// One QA report line: {record_id, disposition, reason, matched_id?, distance_or_cosine?}.
struct Disposition {
  std::string record_id;
  bool kept = true;
  std::string reason;
  std::optional<std::string> matched_id;
  std::optional<double> measure;
};

Json to_json(const Disposition& d);
Disposition disposition_from_json(const Json& j);

}  // namespace fpe::quality
