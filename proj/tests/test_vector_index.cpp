#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fpe/vector_index.hpp"
#include "test_support.hpp"

using namespace fpe;

namespace {

VectorIndex make(const std::vector<std::vector<float>>& vs) {
  std::vector<std::string> ids;
  EmbeddingMatrix m;
  m.dim = vs.front().size();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    ids.push_back("v" + std::to_string(i));
    m.values.insert(m.values.end(), vs[i].begin(), vs[i].end());
  }
  return VectorIndex(std::move(ids), std::move(m));
}

std::set<std::string> ids_of(const std::vector<Neighbor>& ns) {
  std::set<std::string> out;
  for (const auto& n : ns) out.insert(n.id);
  return out;
}

}  // namespace

TEST(VectorIndex, HandComputedNeighborhood) {
  const auto idx = make({{1, 0}, {0, 1}, {0.8f, 0.6f}});
  const std::vector<float> anchor{1, 0};
  const auto n = idx.neighborhood(anchor, 0.75);
  ASSERT_EQ(n.size(), 2u);
  EXPECT_EQ(n[0].id, "v0");
  EXPECT_NEAR(n[0].similarity, 1.0, 1e-7);
  EXPECT_EQ(n[1].id, "v2");
  EXPECT_NEAR(n[1].similarity, 0.8, 1e-6);
}

TEST(VectorIndex, OrthogonalAnchorFindsNothing) {
  const auto idx = make({{1, 0, 0}, {0, 1, 0}});
  const std::vector<float> anchor{0, 0, 1};
  EXPECT_TRUE(idx.neighborhood(anchor, 0.0).empty());
}

TEST(VectorIndex, RejectsBadInputs) {
  const auto idx = make({{1, 0}});
  const std::vector<float> not_unit{2, 0};
  const std::vector<float> unit{1, 0};
  EXPECT_THROW(idx.neighborhood(not_unit, 0.5), ValidationError);
  EXPECT_THROW(idx.neighborhood(unit, 1.0), ValidationError);
  EXPECT_THROW(idx.neighborhood(unit, -0.1), ValidationError);
}

TEST(VectorIndex, PartitionedEqualsBruteForce) {
  std::mt19937_64 rng(9);
  std::vector<std::vector<float>> vs;
  // Clustered data so whole cells can be pruned.
  std::vector<std::vector<float>> centers;
  for (int c = 0; c < 8; ++c) centers.push_back(test::random_unit(rng, 16));
  std::normal_distribution<double> g(0, 0.1);
  for (int i = 0; i < 4000; ++i) {
    auto v = centers[i % 8];
    double n = 0;
    for (auto& x : v) {
      x = static_cast<float>(x + g(rng));
      n += x * x;
    }
    for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
    vs.push_back(v);
  }
  auto flat = make(vs);
  auto part = make(vs);
  part.build_partitions(16);
  // Cells left empty by k-means are dropped.
  EXPECT_GT(part.partition_count(), 8u);
  EXPECT_LE(part.partition_count(), 16u);
  for (int a = 0; a < 10; ++a) {
    const auto anchor = a < 8 ? centers[a] : test::random_unit(rng, 16);
    const auto x = flat.neighborhood(anchor, 0.75);
    const auto y = part.neighborhood(anchor, 0.75);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_EQ(x[i].id, y[i].id);
      EXPECT_EQ(x[i].similarity, y[i].similarity);
    }
    // Brute force over the raw vectors.
    std::set<std::string> want;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (kernels::dot(anchor, vs[i]) > 0.75) want.insert("v" + std::to_string(i));
    }
    EXPECT_EQ(ids_of(y), want);
  }
  // Pruning actually happened for a cluster-center anchor.
  part.neighborhood(centers[0], 0.9);
  EXPECT_LT(VectorIndex::last_scanned(), vs.size());
}

TEST(VectorIndex, OrderedBySimilarityThenId) {
  const auto idx = make({{0.6f, 0.8f}, {1, 0}, {0.6f, 0.8f}});
  const std::vector<float> anchor{0.6f, 0.8f};
  const auto n = idx.neighborhood(anchor, 0.1);
  ASSERT_EQ(n.size(), 3u);
  EXPECT_EQ(n[0].id, "v0");
  EXPECT_EQ(n[1].id, "v2");
  EXPECT_EQ(n[2].id, "v1");
}

TEST(VectorIndex, SaveLoadRoundTrip) {
  test::TempDir dir;
  const auto idx = make({{1, 0}, {0, 1}});
  idx.save(dir / "i.fpex");
  const auto back = VectorIndex::load(dir / "i.fpex");
  EXPECT_EQ(back.ids(), idx.ids());
  EXPECT_EQ(back.matrix().values, idx.matrix().values);
}
