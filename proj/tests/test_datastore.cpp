#include <fstream>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "fpe/datastore.hpp"
#include "fpe/quality_gate.hpp"
#include "test_support.hpp"

using namespace fpe;
using fpe::test::TempDir;

namespace {

StoreShape shape(std::size_t dim = 8, std::size_t k = 2) {
  StoreShape s;
  s.dim = dim;
  s.capabilities = k;
  return s;
}

std::vector<float> e(std::size_t dim, std::size_t hot, float scale = 1.0f) {
  std::vector<float> v(dim, 0.0f);
  v[hot] = scale;
  return v;
}

void write_noise_png(const std::filesystem::path& p, unsigned seed) {
  cv::theRNG().state = seed;
  cv::Mat img(64, 64, CV_8UC1);
  cv::randu(img, cv::Scalar(0), cv::Scalar(255));
  cv::imwrite(p.string(), img);
}

}  // namespace

TEST(Datastore, RejectsWrongDimensionAndKeepsTheRest) {
  TempDir dir;
  Datastore store(dir / "s", shape(512, 2));
  std::vector<Sample> in;
  for (int i = 0; i < 3; ++i) in.push_back(test::make_sample("ok" + std::to_string(i), Split::Pool, e(512, i), {1, 0}));
  in.push_back(test::make_sample("short", Split::Pool, e(511, 0), {1, 0}));
  const auto report = store.ingest(in, {});
  EXPECT_EQ(report.samples_added, 3u);
  EXPECT_EQ(report.rejected_ids(), std::vector<std::string>{"short"});
  EXPECT_EQ(store.count(Split::Pool), 3u);
}

TEST(Datastore, DuplicateIdRejectedOnSecondIngest) {
  TempDir dir;
  Datastore store(dir / "s", shape());
  const std::vector<Sample> one{test::make_sample("a", Split::Pool, e(8, 0), {1, 0})};
  EXPECT_EQ(store.ingest(one, {}).samples_added, 1u);
  const auto again = store.ingest(one, {});
  EXPECT_EQ(again.samples_added, 0u);
  ASSERT_EQ(again.rejected.size(), 1u);
  EXPECT_EQ(again.rejected[0].reason, "duplicate id");
}

TEST(Datastore, EmbeddingsAreNormalized) {
  TempDir dir;
  Datastore store(dir / "s", shape());
  store.ingest(std::vector<Sample>{test::make_sample("a", Split::Pool, e(8, 3, 2.0f), {0, 1})}, {});
  const auto s = store.sample("a");
  ASSERT_TRUE(s);
  double n = 0;
  for (float x : s->embedding) n += double(x) * x;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
}

TEST(Datastore, PersistsAcrossReopen) {
  TempDir dir;
  {
    Datastore store(dir / "s", shape());
    std::vector<Sample> in{test::make_sample("a", Split::Dev, e(8, 1), {0, 1})};
    std::vector<QAItem> qa{test::make_qa("a", "B")};
    const auto r = store.ingest(in, qa);
    EXPECT_EQ(r.qa_added, 1u);
  }
  Datastore reopened(dir / "s");
  EXPECT_EQ(reopened.dim(), 8u);
  EXPECT_EQ(reopened.capabilities(), 2u);
  EXPECT_EQ(reopened.count(Split::Dev), 1u);
  ASSERT_EQ(reopened.qa_for("a").size(), 1u);
  EXPECT_EQ(reopened.qa_for("a")[0].gold_answer, "B");
}

TEST(Datastore, QaValidation) {
  TempDir dir;
  Datastore store(dir / "s", shape());
  std::vector<Sample> in{test::make_sample("d", Split::Dev, e(8, 0), {1, 0}),
                         test::make_sample("p", Split::Pool, e(8, 1), {0, 1})};
  std::vector<QAItem> qa{test::make_qa("d", ""), test::make_qa("p", ""), test::make_qa("ghost", "A"),
                         test::make_qa("d", "Z) nope")};
  const auto r = store.ingest(in, qa);
  EXPECT_EQ(r.qa_added, 1u);  // only the unlabeled pool item
  EXPECT_EQ(r.rejected.size(), 3u);
}

TEST(Datastore, DisjointSplitsVerifyClean) {
  TempDir dir;
  Datastore store(dir / "s", shape());
  std::vector<Sample> in{test::make_sample("d", Split::Dev, e(8, 0), {1, 0}),
                         test::make_sample("t", Split::Test, e(8, 1), {0, 1})};
  in[0].phash = 0x0123456789abcdefULL;
  in[1].phash = ~0x0123456789abcdefULL;
  store.ingest(in, {});
  const auto r = store.verify_split_integrity();
  EXPECT_TRUE(r.disjoint);
  EXPECT_TRUE(r.id_collisions.empty());
  EXPECT_TRUE(r.cross_split_hash_pairs.empty());
}

TEST(Datastore, IdenticalImageInPoolAndTestIsReported) {
  TempDir dir;
  write_noise_png(dir / "img.png", 1);
  Datastore store(dir / "s", shape());
  std::vector<Sample> in{test::make_sample("p", Split::Pool, e(8, 0), {1, 0}),
                         test::make_sample("t", Split::Test, e(8, 1), {0, 1})};
  in[0].image_ref = in[1].image_ref = (dir / "img.png").string();
  store.ingest(in, {});
  const auto r = store.verify_split_integrity();
  EXPECT_FALSE(r.disjoint);
  ASSERT_EQ(r.cross_split_hash_pairs.size(), 1u);
  EXPECT_EQ(r.cross_split_hash_pairs[0].distance, 0);
}

TEST(Datastore, DistinctNoiseImagesAreNotPaired) {
  TempDir dir;
  cv::Mat a(64, 64, CV_8UC1), b(64, 64, CV_8UC1);
  cv::theRNG().state = 11;
  cv::randu(a, cv::Scalar(0), cv::Scalar(255));
  cv::randu(b, cv::Scalar(0), cv::Scalar(255));
  cv::imwrite((dir / "a.png").string(), a);
  cv::imwrite((dir / "b.png").string(), b);
  // Oracle: the hash distance itself must clear the threshold for "no pair" to be meaningful.
  const int d = quality::hamming(quality::phash_file(dir / "a.png"), quality::phash_file(dir / "b.png"));
  ASSERT_GT(d, quality::kDefaultHammingThreshold);

  Datastore store(dir / "s", shape());
  std::vector<Sample> in{test::make_sample("p", Split::Dev, e(8, 0), {1, 0}),
                         test::make_sample("t", Split::Test, e(8, 1), {0, 1})};
  in[0].image_ref = (dir / "a.png").string();
  in[1].image_ref = (dir / "b.png").string();
  store.ingest(in, {});
  EXPECT_TRUE(store.verify_split_integrity().cross_split_hash_pairs.empty());
}

TEST(Datastore, EmbeddingMatrixRoundTrip) {
  TempDir dir;
  EmbeddingMatrix m;
  m.dim = 3;
  m.values = {1, 0, 0, 0, 0.6f, 0.8f};
  write_embedding_matrix(dir / "m.bin", m);
  const auto back = read_embedding_matrix(dir / "m.bin");
  EXPECT_EQ(back.dim, 3u);
  EXPECT_EQ(back.values, m.values);
}
