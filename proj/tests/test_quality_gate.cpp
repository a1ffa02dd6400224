#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fpe/quality_gate.hpp"
#include "test_support.hpp"

using namespace fpe;
using namespace fpe::quality;

namespace {

// Smooth synthetic "scan": a few blurred ellipses, so re-encoding perturbs it only mildly.
cv::Mat phantom(unsigned seed) {
  cv::Mat img(128, 128, CV_8UC1, cv::Scalar(20));
  std::mt19937 rng(seed);
  for (int i = 0; i < 5; ++i) {
    cv::ellipse(img, {int(rng() % 128), int(rng() % 128)}, {int(10 + rng() % 30), int(10 + rng() % 30)},
                double(rng() % 180), 0, 360, cv::Scalar(double(60 + rng() % 190)), -1);
  }
  cv::GaussianBlur(img, img, {9, 9}, 3);
  return img;
}

std::vector<unsigned char> encode(const cv::Mat& m, const std::string& ext, std::vector<int> params = {}) {
  std::vector<unsigned char> buf;
  cv::imencode(ext, m, buf, params);
  return buf;
}

// Independent pHash oracle: orthonormal DCT-II summed directly, top-left 8x8, DC excluded
// from the median.
std::uint64_t oracle_phash(const std::vector<double>& px) {
  double c[8][8];
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      double s = 0;
      for (int x = 0; x < 32; ++x)
        for (int y = 0; y < 32; ++y)
          s += px[static_cast<std::size_t>(x * 32 + y)] * std::cos((2 * x + 1) * u * M_PI / 64) *
               std::cos((2 * y + 1) * v * M_PI / 64);
      const double au = u == 0 ? std::sqrt(1.0 / 32) : std::sqrt(2.0 / 32);
      const double av = v == 0 ? std::sqrt(1.0 / 32) : std::sqrt(2.0 / 32);
      c[u][v] = au * av * s;
    }
  }
  std::vector<double> ac;
  for (int p = 1; p < 64; ++p) ac.push_back(c[p / 8][p % 8]);
  auto sorted = ac;
  std::nth_element(sorted.begin(), sorted.begin() + 31, sorted.end());
  const double median = sorted[31];
  std::uint64_t bits = 0;
  for (int p = 1; p < 64; ++p)
    if (c[p / 8][p % 8] > median) bits |= 1ULL << (63 - p);
  return bits;
}

}  // namespace

TEST(PHash, MatchesTextbookDct) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> px(1024);
    for (auto& v : px) v = double(rng() % 256);
    EXPECT_EQ(phash_pixels(px), oracle_phash(px)) << trial;
  }
}

TEST(PHash, IdenticalBytesDistanceZero) {
  const auto png = encode(phantom(1), ".png");
  EXPECT_EQ(hamming(phash(png), phash(png)), 0);
}

TEST(PHash, HighQualityReencodeStaysWithinThreshold) {
  const auto img = phantom(2);
  const auto png = encode(img, ".png");
  const auto jpg = encode(img, ".jpg", {cv::IMWRITE_JPEG_QUALITY, 95});
  EXPECT_LE(hamming(phash(png), phash(jpg)), kDefaultHammingThreshold);
}

TEST(PHash, InverseImageIsFar) {
  const auto img = phantom(3);
  cv::Mat inv;
  cv::bitwise_not(img, inv);
  EXPECT_GE(hamming(phash(encode(img, ".png")), phash(encode(inv, ".png"))), 32);
}

TEST(PHash, UndecodableBytesNameTheSample) {
  const std::vector<unsigned char> junk{1, 2, 3};
  try {
    phash(junk, "sample-9");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("sample-9"), std::string::npos);
  }
}

TEST(Dedup, IdenticalImagesSecondDropped) {
  const std::vector<HashedRecord> rs{{"a", 0xABCDULL}, {"b", 0xABCDULL}};
  const auto r = dedup(rs, 5);
  EXPECT_EQ(r.kept, std::vector<std::string>{"a"});
  ASSERT_EQ(r.dropped.size(), 1u);
  EXPECT_EQ(r.dropped[0].dropped, "b");
  EXPECT_EQ(r.dropped[0].matched, "a");
  EXPECT_EQ(r.dropped[0].measure, 0.0);
}

TEST(Dedup, DistinctNoiseImagesAllKept) {
  std::vector<HashedRecord> rs;
  cv::theRNG().state = 77;
  for (int i = 0; i < 20; ++i) {
    cv::Mat m(64, 64, CV_8UC1);
    cv::randu(m, cv::Scalar(0), cv::Scalar(255));
    rs.push_back({"n" + std::to_string(i), phash(encode(m, ".png"))});
  }
  // Fixture check first: every pair really is farther apart than the threshold.
  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = i + 1; j < rs.size(); ++j) ASSERT_GT(hamming(*rs[i].hash, *rs[j].hash), kDefaultHammingThreshold);
  EXPECT_TRUE(dedup(rs, kDefaultHammingThreshold).dropped.empty());
}

TEST(Dedup, ThresholdZeroDropsOnlyExactMatches) {
  const std::vector<HashedRecord> rs{{"a", 0b1000ULL}, {"b", 0b1001ULL}, {"c", 0b1000ULL}};
  const auto r = dedup(rs, 0);
  EXPECT_EQ(r.kept, (std::vector<std::string>{"a", "b"}));
}

TEST(Dedup, PriorLedgerAndMissingHashes) {
  const std::vector<HashedRecord> prior{{"old", 0xF0ULL}};
  const std::vector<HashedRecord> rs{{"a", 0xF1ULL}, {"b", std::nullopt}};
  const auto r = dedup(rs, 2, prior);
  EXPECT_EQ(r.kept, std::vector<std::string>{"b"});
  EXPECT_EQ(r.dropped[0].matched, "old");
}

TEST(TfIdf, IdenticalStringsDroppedAtCosineOne) {
  const std::vector<TextRecord> rs{{"a", "mild edema in the left lobe"}, {"b", "mild edema in the left lobe"}};
  const auto r = diversity_filter(rs, kDefaultTfIdfThreshold);
  EXPECT_EQ(r.kept, std::vector<std::string>{"a"});
  EXPECT_NEAR(r.dropped[0].measure, 1.0, 1e-12);
}

TEST(TfIdf, DisjointVocabulariesBothKept) {
  const std::vector<std::string> docs{"mild edema", "severe artifact"};
  const auto v = tfidf(docs);
  EXPECT_EQ(cosine(v[0], v[1]), 0.0);
  const std::vector<TextRecord> rs{{"a", docs[0]}, {"b", docs[1]}};
  EXPECT_EQ(diversity_filter(rs, kDefaultTfIdfThreshold).kept.size(), 2u);
}

TEST(TfIdf, ParaphrasePairCosine) {
  // Smoothed idf over the two-document batch: the six shared words get idf 1, the two
  // extra words idf 1 + ln(1.5). Cosine = 6 / sqrt(6 * (6 + 2 (1 + ln 1.5)^2)).
  const std::vector<std::string> docs{"severe motion artifact in brain MRI",
                                      "severe motion artifact in the brain MRI scan"};
  const auto v = tfidf(docs);
  const double w = 1.0 + std::log(1.5);
  const double want = 6.0 / std::sqrt(6.0 * (6.0 + 2.0 * w * w));
  EXPECT_NEAR(cosine(v[0], v[1]), want, 1e-12);
  EXPECT_NEAR(cosine(v[0], v[1]), 0.7765, 1e-4);
  const std::vector<TextRecord> rs{{"a", docs[0]}, {"b", docs[1]}};
  EXPECT_EQ(diversity_filter(rs, 0.90).kept.size(), 2u);
  EXPECT_EQ(diversity_filter(rs, 0.75).kept.size(), 1u);
}

TEST(TfIdf, EmptyDescriptionDropped) {
  const std::vector<TextRecord> rs{{"a", "  "}, {"b", "lesion"}};
  const auto r = diversity_filter(rs, 0.9);
  ASSERT_EQ(r.dropped.size(), 1u);
  EXPECT_EQ(r.dropped[0].reason, "empty");
}

TEST(QualityGate, KeptSetsPassExhaustiveRecheck) {
  std::mt19937_64 rng(8);
  const char* vocab[] = {"mild", "severe", "edema", "lesion", "artifact", "left", "right", "lobe", "motion", "no"};
  for (int batch = 0; batch < 4; ++batch) {
    const std::size_t n = 500 * (batch + 1);
    std::vector<HashedRecord> hs;
    std::vector<TextRecord> ts;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t h = rng();
      if (i > 0 && rng() % 4 == 0) h = *hs[rng() % hs.size()].hash ^ (1ULL << (rng() % 64));
      hs.push_back({"i" + std::to_string(i), h});
      std::string t;
      for (int w = 0; w < 4; ++w) t += std::string(vocab[rng() % 10]) + " ";
      ts.push_back({"t" + std::to_string(i), t});
    }
    const auto kept_h = dedup(hs, kDefaultHammingThreshold).kept;
    std::map<std::string, std::uint64_t> hash_of;
    for (const auto& h : hs) hash_of[h.id] = *h.hash;
    for (std::size_t i = 0; i < kept_h.size(); ++i)
      for (std::size_t j = i + 1; j < kept_h.size(); ++j)
        ASSERT_GT(hamming(hash_of[kept_h[i]], hash_of[kept_h[j]]), kDefaultHammingThreshold);

    const auto kept_t = diversity_filter(ts, kDefaultTfIdfThreshold).kept;
    std::map<std::string, std::string> text_of;
    for (const auto& t : ts) text_of[t.id] = t.text;
    std::vector<std::string> docs;
    for (const auto& t : ts) docs.push_back(t.text);
    const auto vecs = tfidf(docs);  // same batch statistics the filter used
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < ts.size(); ++i) pos[ts[i].id] = i;
    for (std::size_t i = 0; i < kept_t.size(); ++i)
      for (std::size_t j = i + 1; j < kept_t.size(); ++j)
        ASSERT_LE(cosine(vecs[pos[kept_t[i]]], vecs[pos[kept_t[j]]]), kDefaultTfIdfThreshold);
  }
}

TEST(Disposition, JsonRoundTrip) {
  Disposition d{"r1", false, "near-duplicate image", "r0", 3.0};
  const auto j = to_json(d);
  EXPECT_EQ(j.at("disposition"), "dropped");
  const auto back = disposition_from_json(j);
  EXPECT_EQ(back.record_id, "r1");
  EXPECT_FALSE(back.kept);
  EXPECT_EQ(back.matched_id, "r0");
  EXPECT_EQ(back.measure, 3.0);
}
