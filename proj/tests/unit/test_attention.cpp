#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "properties.hpp"
#include "segmil/attention.hpp"

namespace segmil {
namespace {

using namespace segmil::testing;

RowMatrixXd Mat(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(Pooling, DecisionAttentionHandExample) {
  const auto r = DecisionAttentionPool(Mat({{0.9, 0.1}, {0.1, 0.9}}), Mat({{3, 1}, {1, 3}}), {true, true});
  EXPECT_NEAR(r.output[0], 0.7, 1e-12);
  EXPECT_NEAR(r.output[1], 0.7, 1e-12);
  EXPECT_NEAR(r.weights(0, 0), 0.75, 1e-12);
}

TEST(Pooling, FeatureAttentionHandExample) {
  const auto r = FeatureAttentionPool(Mat({{1, 0}, {0, 1}}), Mat({{0.8, 0.2}, {0.2, 0.8}}), {true, true});
  EXPECT_NEAR(r.output[0], 0.8, 1e-12);
  EXPECT_NEAR(r.output[1], 0.8, 1e-12);
}

TEST(Pooling, MaxAndMeanHandExample) {
  const auto f = Mat({{0.2, 0.8}, {0.6, 0.4}});
  EXPECT_EQ(MaxPoolRows(f, {true, true}), (std::vector<double>{0.6, 0.8}));
  const auto mean = MeanPoolRows(f, {true, true});
  EXPECT_NEAR(mean[0], 0.4, 1e-12);
  EXPECT_NEAR(mean[1], 0.6, 1e-12);
  EXPECT_EQ(MaxPoolRows(Mat({{0.3, 0.7}}), {true}), (std::vector<double>{0.3, 0.7}));
}

TEST(Pooling, MaskedRowsAreIgnored) {
  const auto f = Mat({{0.2, 0.8}, {0.9, 0.9}});
  EXPECT_EQ(MaxPoolRows(f, {true, false}), (std::vector<double>{0.2, 0.8}));
  const auto r = DecisionAttentionPool(f, Mat({{1, 1}, {5, 5}}), {true, false});
  EXPECT_NEAR(r.output[0], 0.2, 1e-12);
  EXPECT_EQ(r.weights(1, 0), 0.0);
}

TEST(Pooling, MaxDominatesMeanOnRandomBags) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Index t = 1 + static_cast<Eigen::Index>(rng.below(29));
    RowMatrixXd f(t, 4);
    for (Eigen::Index j = 0; j < f.size(); ++j) f.data()[j] = rng.uniform();
    const std::vector<bool> mask(static_cast<std::size_t>(t), true);
    const auto mx = MaxPoolRows(f, mask), mn = MeanPoolRows(f, mask);
    for (int k = 0; k < 4; ++k) ASSERT_GE(mx[static_cast<std::size_t>(k)], mn[static_cast<std::size_t>(k)] - 1e-15);
  }
}

TEST(Pooling, DecisionAttentionIsConvex) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Index t = 1 + static_cast<Eigen::Index>(rng.below(10));
    RowMatrixXd f(t, 3), s(t, 3);
    for (Eigen::Index j = 0; j < f.size(); ++j) {
      f.data()[j] = rng.uniform();
      s.data()[j] = rng.uniform(0.01, 1.0);
    }
    const auto r = DecisionAttentionPool(f, s, std::vector<bool>(static_cast<std::size_t>(t), true));
    for (Eigen::Index k = 0; k < 3; ++k) {
      EXPECT_GE(r.output[static_cast<std::size_t>(k)], f.col(k).minCoeff() - 1e-12);
      EXPECT_LE(r.output[static_cast<std::size_t>(k)], f.col(k).maxCoeff() + 1e-12);
    }
  }
}

TEST(Pooling, OneHotScoreSelectsInstance) {
  const auto f = Mat({{0.1, 0.3}, {0.7, 0.2}, {0.4, 0.4}});
  const auto r = DecisionAttentionPool(f, Mat({{0, 0}, {1, 1}, {0, 0}}), {true, true, true});
  EXPECT_EQ(r.output[0], 0.7);
  EXPECT_EQ(r.output[1], 0.2);
}

class PerKind : public ::testing::TestWithParam<AggregatorKind> {};

TEST_P(PerKind, GradientCheckMaskedAndUnmasked) {
  for (bool masked : {true, false}) {
    AggregatorConfig cfg;
    cfg.kind = GetParam();
    cfg.input_dim = 8;
    cfg.hidden = 5;
    cfg.feature_dim = 6;
    cfg.num_classes = 3;
    cfg.masked = masked;
    const auto r = CheckAggregatorGradients(cfg, 4, 3, 11);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst << " masked=" << masked;
  }
}

TEST_P(PerKind, IdenticalInstancesReproduceSingleInstance) {
  EXPECT_LT(IdenticalInstanceGap(GetParam(), 100, 3), 1e-6);
}

TEST_P(PerKind, PermutationInvariance) { EXPECT_LT(PermutationGap(GetParam(), 200, 4), 1e-6); }

TEST_P(PerKind, OutputsAreProbDistsAndWeightsNormalized) {
  const auto a = AuditAttentionWeights(GetParam(), 200, 5);
  EXPECT_LT(a.max_prob_error, 1e-6);
  EXPECT_LT(a.max_sum_error, 1e-6);
  EXPECT_GE(a.min_weight, 0.0);
  const auto k = GetParam();
  const std::size_t expected = k == AggregatorKind::kDMulti ? 400 : (k == AggregatorKind::kMaxPool ||
                                                                     k == AggregatorKind::kAvgPool) ? 0 : 200;
  EXPECT_EQ(a.matrices, expected);
}

TEST_P(PerKind, PaddingIsInvisibleWhenMasked) {
  AggregatorModel model(SmallConfig(GetParam()), 6);
  Rng rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto tight = RandomBag(rng, "x", 1 + rng.below(10), 10, 16, 0);
    std::vector<std::vector<float>> rows;
    for (std::size_t t = 0; t < tight.true_length; ++t) rows.emplace_back(tight.row(t).begin(), tight.row(t).end());
    const auto loose = AssembleBag("x", rows, 0, 29);
    EXPECT_LT(MaxAbsDiff(model.Predict(tight).prob, model.Predict(loose).prob), 1e-6);
  }
}

TEST_P(PerKind, RenormalizationKeepsArgmax) {
  AggregatorModel model(SmallConfig(GetParam()), 7);
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const auto out = model.Predict(RandomBag(rng, "x", 1 + rng.below(29), 29, 16, 0));
    EXPECT_EQ(std::max_element(out.prob.begin(), out.prob.end()) - out.prob.begin(),
              std::max_element(out.raw.begin(), out.raw.end()) - out.raw.begin());
  }
}

TEST_P(PerKind, CheckpointRoundTripIsBitExact) {
  AggregatorModel model(SmallConfig(GetParam()), 8);
  const auto ckpt = model.ToCheckpoint();
  std::stringstream ss;
  WriteCheckpoint(ss, ckpt);
  const auto back = AggregatorModel::FromCheckpoint(ReadCheckpoint(ss));
  EXPECT_EQ(back.ToCheckpoint(), ckpt);
  Rng rng(8);
  const auto bag = RandomBag(rng, "x", 7, 29, 16, 0);
  EXPECT_EQ(back.Predict(bag).prob, model.Predict(bag).prob);
}

TEST_P(PerKind, TrainingIsDeterministicAndLearnsPlantedSignal) {
  // Class k bags contain one instance with a bump in dimension k.
  Rng rng(9);
  std::vector<Bag> bags;
  for (int i = 0; i < 160; ++i) {
    const int label = i % 4;
    const std::size_t t = 5 + rng.below(20);
    std::vector<std::vector<float>> rows(t, std::vector<float>(16));
    for (auto& r : rows) {
      for (auto& v : r) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    }
    rows[rng.below(t)][static_cast<std::size_t>(label)] += 2.0f;
    bags.push_back(AssembleBag("u" + std::to_string(1000 + i), rows, label, 29));
  }
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  TrainConfig tcfg;
  tcfg.batch_size = 16;
  tcfg.max_epochs = 15;
  tcfg.learning_rate = 0.005;
  const auto a = TrainAggregator(SmallConfig(GetParam()), ptrs, tcfg);
  const auto b = TrainAggregator(SmallConfig(GetParam()), ptrs, tcfg);
  EXPECT_EQ(a.model.ToCheckpoint(), b.model.ToCheckpoint());
  std::size_t correct = 0;
  const auto out = a.model.Predict(ptrs);
  for (std::size_t i = 0; i < bags.size(); ++i) correct += ArgMaxIndex(out[i].prob) == bags[i].label;
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(bags.size()), 0.6) << ToString(GetParam());
}

INSTANTIATE_TEST_SUITE_P(Kinds, PerKind, ::testing::ValuesIn(AllKinds()),
                         [](const auto& info) { return std::string(ToString(info.param)); });

TEST(Identities, ConstantScoreEqualsAveragePooling) { EXPECT_LT(ConstantScoreVersusAvgPool(300, 10), 1e-6); }

TEST(AggregatorConfig, JsonRoundTripAndKindNames) {
  AggregatorConfig cfg = SmallConfig(AggregatorKind::kDMulti);
  cfg.masked = false;
  const auto back = AggregatorConfig::FromJson(cfg.ToJson());
  EXPECT_EQ(back.kind, cfg.kind);
  EXPECT_EQ(back.hidden, cfg.hidden);
  EXPECT_EQ(back.masked, false);
  for (auto k : AllKinds()) EXPECT_EQ(ParseAggregatorKind(ToString(k)), k);
  EXPECT_THROW(ParseAggregatorKind("nope"), Error);
}

}  // namespace
}  // namespace segmil

namespace segmil {
namespace {

TEST(MaxPoolLoss, SoftmaxCrossEntropyOverRawMaxima) {
  Aggregator<double> agg(testing::SmallConfig(AggregatorKind::kMaxPool), 3);
  Rng rng(8);
  std::vector<Bag> bags;
  for (int b = 0; b < 6; ++b) bags.push_back(testing::RandomBag(rng, "b", 1 + rng.below(29), 29, 16, b % 4));
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  const auto batch = PackBags<double>(ptrs);
  AggregatorTrace<double> tr;
  agg.Forward(batch, tr);
  double expected = 0.0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    double z = 0.0, sum = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      z += std::exp(tr.raw[b * 4 + k]);
      sum += tr.raw[b * 4 + k];
    }
    const auto y = static_cast<std::size_t>(batch.labels[b]);
    expected += std::log(z) - tr.raw[b * 4 + y];
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(tr.prob[b * 4 + k], tr.raw[b * 4 + k] / sum, 1e-12);
  }
  EXPECT_NEAR(agg.Loss(batch, tr), expected / static_cast<double>(batch.batch), 1e-12);
}

}  // namespace
}  // namespace segmil
