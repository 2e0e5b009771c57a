#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "segmil/error.hpp"
#include "segmil/forest.hpp"

namespace segmil {
namespace {

using testing::RandomBag;

TEST(PoolEmbeddings, HandExample) {
  const auto bag = AssembleBag("b", {{1.0f, -2.0f}, {3.0f, 0.0f}}, 1, 4);
  EXPECT_EQ(PoolEmbeddings(bag, EmbeddingPool::kMax).vector, (std::vector<double>{3.0, 0.0}));
  EXPECT_EQ(PoolEmbeddings(bag, EmbeddingPool::kAvg).vector, (std::vector<double>{2.0, -1.0}));
  const auto one = AssembleBag("c", {{0.5f, -0.25f}}, 0, 4);
  for (auto mode : {EmbeddingPool::kMax, EmbeddingPool::kAvg}) {
    EXPECT_EQ(PoolEmbeddings(one, mode).vector, (std::vector<double>{0.5, -0.25}));
  }
}

TEST(PoolEmbeddings, MaxDominatesAvgPermutationAndDuplicates) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto bag = RandomBag(rng, "b", 1 + rng.below(29), 29, 8, 0);
    const auto mx = PoolEmbeddings(bag, EmbeddingPool::kMax).vector;
    const auto av = PoolEmbeddings(bag, EmbeddingPool::kAvg).vector;
    for (std::size_t d = 0; d < 8; ++d) ASSERT_GE(mx[d], av[d] - 1e-12);
    std::vector<std::vector<float>> rows;
    for (std::size_t t = 0; t < bag.true_length; ++t) rows.emplace_back(bag.row(t).begin(), bag.row(t).end());
    auto shuffled = rows;
    rng.shuffle(std::span<std::vector<float>>(shuffled));
    const auto perm = AssembleBag("p", shuffled, 0, 29);
    EXPECT_EQ(PoolEmbeddings(perm, EmbeddingPool::kMax).vector, mx);
    const auto pav = PoolEmbeddings(perm, EmbeddingPool::kAvg).vector;
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(pav[d], av[d], 1e-12);
    rows.push_back(rows.front());
    EXPECT_EQ(PoolEmbeddings(AssembleBag("d", rows, 0, 40), EmbeddingPool::kMax).vector, mx);
  }
}

std::vector<PooledEmbedding> Separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PooledEmbedding> data;
  for (std::size_t i = 0; i < n; ++i) {
    PooledEmbedding p;
    p.utterance_id = "u" + std::to_string(i);
    p.label = static_cast<int>(i % 2);
    p.vector = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    p.vector[2] = p.label ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.4);
    data.push_back(std::move(p));
  }
  return data;
}

TEST(TrainForest, SeparableDataIsFitPerfectlyWithPureLeaves) {
  const auto data = Separable(200, 2);
  ForestConfig cfg;
  cfg.n_trees = 25;
  const auto forest = TrainForest(data, 2, cfg);
  for (const auto& p : data) EXPECT_EQ(testing::ArgMaxIndex(forest.Predict(p.vector)), p.label);
  for (const auto& tree : forest.trees()) {
    for (double v : tree.distributions) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(TrainForest, DeterministicUnderSeedAndThreadCount) {
  const auto data = Separable(150, 3);
  ForestConfig cfg;
  cfg.n_trees = 20;
  const auto a = TrainForest(data, 2, cfg);
  const auto b = TrainForest(data, 2, cfg);
  cfg.threads = 3;
  const auto c = TrainForest(data, 2, cfg);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a == c);
  cfg.seed = 2;
  EXPECT_FALSE(a == TrainForest(data, 2, cfg));
}

TEST(TrainForest, SingleClassIsDegenerate) {
  auto data = Separable(10, 4);
  for (auto& p : data) p.label = 0;
  try {
    TrainForest(data, 2, ForestConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateData);
  }
}

TEST(RandomForest, SingleLeafReturnsItsDistribution) {
  DecisionTree tree;
  tree.nodes = {TreeNode{}};
  tree.distributions = {0.2, 0.5, 0.3};
  RandomForest forest(3, 2, ForestConfig{}, {tree});
  EXPECT_EQ(forest.Predict({0.0, 1.0}), (std::vector<double>{0.2, 0.5, 0.3}));
  EXPECT_THROW(forest.Predict({0.0}), Error);
}

TEST(RandomForest, TiesGoLeft) {
  DecisionTree tree;
  tree.nodes = {TreeNode{0, 0.5, 1, 2, 0}, TreeNode{-1, 0, 0, 0, 0}, TreeNode{-1, 0, 0, 0, 1}};
  tree.distributions = {1.0, 0.0, 0.0, 1.0};
  RandomForest forest(2, 1, ForestConfig{}, {tree});
  EXPECT_EQ(forest.Predict({0.5})[0], 1.0);
  EXPECT_EQ(forest.Predict({0.5000001})[1], 1.0);
}

// Walks every tree by hand and averages.
std::vector<double> OraclePredict(const RandomForest& f, const std::vector<double>& x) {
  std::vector<double> acc(static_cast<std::size_t>(f.num_classes()), 0.0);
  for (const auto& t : f.trees()) {
    std::size_t n = 0;
    while (t.nodes[n].feature >= 0) {
      const auto& node = t.nodes[n];
      n = x[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left : node.right;
    }
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += t.distributions[t.nodes[n].leaf * acc.size() + k];
  }
  for (auto& v : acc) v /= static_cast<double>(f.trees().size());
  return acc;
}

TEST(RandomForest, MatchesTraversalOracleAndIsProbDist) {
  Rng rng(5);
  std::vector<PooledEmbedding> data;
  for (int i = 0; i < 120; ++i) {
    PooledEmbedding p;
    p.label = i % 3;
    for (int d = 0; d < 6; ++d) p.vector.push_back(rng.uniform() + 0.3 * p.label * (d == p.label));
    data.push_back(p);
  }
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 5;
  const auto forest = TrainForest(data, 3, cfg);
  for (int i = 0; i < 300; ++i) {
    std::vector<double> x;
    for (int d = 0; d < 6; ++d) x.push_back(rng.uniform(-0.2, 1.5));
    const auto p = forest.Predict(x);
    const auto o = OraclePredict(forest, x);
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(p[k], o[k], 1e-12);
      EXPECT_GE(p[k], 0.0);
      s += p[k];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(RandomForest, SerializationIsBitExact) {
  ForestConfig cfg;
  cfg.n_trees = 10;
  const auto forest = TrainForest(Separable(80, 6), 2, cfg);
  std::stringstream ss;
  WriteForest(ss, forest);
  const auto bytes = ss.str();
  const auto back = ReadForest(ss);
  EXPECT_TRUE(back == forest);
  std::stringstream again;
  WriteForest(again, back);
  EXPECT_EQ(again.str(), bytes);
  auto bad = bytes;
  bad[0] = 'X';
  std::stringstream bs(bad);
  EXPECT_THROW(ReadForest(bs), Error);
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(ReadForest(truncated), Error);
}

}  // namespace
}  // namespace segmil
