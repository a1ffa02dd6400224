#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "fpe/prototype_miner.hpp"
#include "reference_clustering.hpp"
#include "test_support.hpp"

using namespace fpe;
using namespace fpe::proto;
using namespace fpe::test;

namespace {

class FixedText final : public TextEmbedClient {
 public:
  explicit FixedText(std::vector<float> v) : v_(std::move(v)) {}
  std::vector<float> embed_text(const std::string&) override { return v_; }
  std::size_t dim() const override { return v_.size(); }

 private:
  std::vector<float> v_;
};

}  // namespace

TEST(Fuse, UnitBlocksGiveSquaredNormTwo) {
  eval::FailureCase fc{{"s", 0}, 1.0, 5, 5, {1}, {"A"}};
  Sample s = test::make_sample("s", Split::Dev, {0.6f, 0.8f}, {1});
  FixedText text({3.0f, 4.0f, 0.0f});
  const auto f = fuse(fc, s, test::make_qa("s", "B"), text, 1.0);
  double n2 = 0;
  for (float v : f.fused) n2 += double(v) * v;
  EXPECT_NEAR(n2, 2.0, 1e-6);
  EXPECT_EQ(f.visual_dim, 2u);
}

TEST(Fuse, LambdaZeroZeroesTheQaBlock) {
  eval::FailureCase fc{{"s", 0}, 1.0, 5, 5, {1}, {"A"}};
  Sample s = test::make_sample("s", Split::Dev, {1.0f, 0.0f}, {1});
  FixedText text({1.0f, 1.0f});
  const auto f = fuse(fc, s, test::make_qa("s", "B"), text, 0.0);
  EXPECT_EQ(f.fused[2], 0.0f);
  EXPECT_EQ(f.fused[3], 0.0f);
  const auto g = fuse(fc, s, test::make_qa("s", "B"), text, 0.0);
  EXPECT_EQ(f.fused, g.fused);
}

TEST(Fuse, ZeroTextEmbeddingIsAClientError) {
  eval::FailureCase fc{{"s", 0}, 1.0, 5, 5, {1}, {"A"}};
  Sample s = test::make_sample("s", Split::Dev, {1.0f, 0.0f}, {1});
  FixedText text({0.0f, 0.0f});
  EXPECT_THROW(fuse(fc, s, test::make_qa("s", "B"), text, 1.0), ClientError);
}

TEST(FusionText, UsesMostFrequentAnswer) {
  const std::vector<std::string> t{"A", "C", "C", "B", "C"};
  const auto text = fusion_text(test::make_qa("s", "B"), t);
  EXPECT_NE(text.find("C"), std::string::npos);
}

TEST(Cluster, RecoversPlantedBlobsLikeTheReference) {
  const auto b = planted_blobs(3);
  const auto c = cluster(b.features, {});
  EXPECT_EQ(c.n_clusters, 3u);
  EXPECT_TRUE(same_partition(c.assignments, b.planted));
  const auto ref = reference_cluster(b.features, 2, 10);
  EXPECT_EQ(ref.k, 3u);
  EXPECT_TRUE(same_partition(c.assignments, ref.labels));
}

TEST(Cluster, SerialAndParallelAgree) {
  const auto b = planted_blobs(4);
  ClusterOptions p, s;
  s.parallel = false;
  const auto x = cluster(b.features, p), y = cluster(b.features, s);
  EXPECT_EQ(x.assignments, y.assignments);
  EXPECT_EQ(x.silhouette_by_k, y.silhouette_by_k);
}

TEST(Cluster, TwoPointsMakeTwoClusters) {
  const std::vector<FusedFeature> fs{feature("a", {1, 0}), feature("b", {0, 1})};
  const auto c = cluster(fs, {});
  EXPECT_EQ(c.n_clusters, 2u);
  EXPECT_NE(c.assignments[0], c.assignments[1]);
}

TEST(Cluster, OneFailureIsInsufficient) {
  const std::vector<FusedFeature> fs{feature("a", {1, 0})};
  EXPECT_THROW(cluster(fs, {}), ValidationError);
}

TEST(Cluster, DuplicatedDatasetKeepsClusterCount) {
  const auto once = planted_blobs(5);
  const auto twice = planted_blobs(5, 2);
  const auto a = cluster(once.features, {}), b = cluster(twice.features, {});
  EXPECT_EQ(a.n_clusters, b.n_clusters);
  EXPECT_EQ(reference_cluster(twice.features, 2, 10).k, b.n_clusters);
}

TEST(Cluster, MatchesReferenceOnRandomData) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<FusedFeature> fs;
    for (int i = 0; i < 25; ++i) fs.push_back(feature("r" + std::to_string(i), test::random_unit(rng, 6)));
    ClusterOptions o;
    o.k_max = 8;
    const auto c = cluster(fs, o);
    const auto ref = reference_cluster(fs, 2, 8);
    EXPECT_EQ(c.n_clusters, ref.k) << "trial " << trial;
    EXPECT_TRUE(same_partition(c.assignments, ref.labels)) << "trial " << trial;
  }
}

TEST(Dendrogram, CutUndoesLastMerges) {
  // 1-D points 0, 1, 10 -> first merge {0,1}, then everything.
  const std::vector<double> d{0, 1, 10, 1, 0, 9, 10, 9, 0};
  const auto dg = agglomerate(d, 3, Linkage::Average);
  ASSERT_EQ(dg.merges.size(), 2u);
  EXPECT_DOUBLE_EQ(dg.merges[0].height, 1.0);
  EXPECT_DOUBLE_EQ(dg.merges[1].height, 9.5);
  EXPECT_EQ(cut(dg, 2), (std::vector<int>{0, 0, 1}));
  const auto single = agglomerate(d, 3, Linkage::Single);
  EXPECT_DOUBLE_EQ(single.merges[1].height, 9.0);
  const auto complete = agglomerate(d, 3, Linkage::Complete);
  EXPECT_DOUBLE_EQ(complete.merges[1].height, 10.0);
}

TEST(Prototypes, AnchorsSitOnPlantedCenters) {
  const auto b = planted_blobs(6);
  const auto set = extract_prototypes(cluster(b.features, {}), b.features);
  ASSERT_EQ(set.prototypes.size(), 3u);
  for (const auto& p : set.prototypes) {
    double best = -1;
    for (const auto& c : b.centers) {
      double dot = 0;
      for (std::size_t i = 0; i < c.size(); ++i) dot += double(c[i]) * p.visual_anchor[i];
      best = std::max(best, dot);
    }
    EXPECT_GT(best, 0.99);
    EXPECT_EQ(p.member_ids.size(), 20u);
    EXPECT_EQ(p.dominant_capabilities.size(), 1u);
  }
}

TEST(Prototypes, SingleMemberAnchorIsItsVisualVector) {
  const std::vector<FusedFeature> fs{feature("a", {0.6f, 0.8f}, {1, 0}), feature("b", {0, -1}, {0, 1})};
  Clustering c;
  c.assignments = {0, 1};
  c.n_clusters = 2;
  const auto set = extract_prototypes(c, fs);
  ASSERT_EQ(set.prototypes.size(), 2u);
  EXPECT_NEAR(set.prototypes[0].visual_anchor[0], 0.6f, 1e-6);
  EXPECT_NEAR(set.prototypes[0].visual_anchor[1], 0.8f, 1e-6);
}

TEST(Prototypes, AntipodalClusterIsUnanchored) {
  const std::vector<FusedFeature> fs{feature("a", {1, 0}), feature("b", {-1, 0}), feature("c", {0, 1})};
  Clustering c;
  c.assignments = {0, 0, 1};
  c.n_clusters = 2;
  const auto set = extract_prototypes(c, fs);
  ASSERT_EQ(set.unanchored.size(), 1u);
  EXPECT_EQ(set.unanchored[0], (std::vector<std::string>{"a", "b"}));
  ASSERT_EQ(set.prototypes.size(), 1u);
  EXPECT_EQ(set.prototypes[0].member_ids.size(), 3u);  // orphans reassigned
}

TEST(Prototypes, FileRoundTrip) {
  test::TempDir dir;
  const auto b = planted_blobs(7);
  const auto set = extract_prototypes(cluster(b.features, {}), b.features);
  write_prototypes(dir / "p.jsonl", set);
  const auto back = read_prototypes(dir / "p.jsonl");
  ASSERT_EQ(back.prototypes.size(), set.prototypes.size());
  for (std::size_t i = 0; i < set.prototypes.size(); ++i) {
    EXPECT_EQ(back.prototypes[i].visual_anchor, set.prototypes[i].visual_anchor);
    EXPECT_EQ(back.prototypes[i].member_ids, set.prototypes[i].member_ids);
  }
}
