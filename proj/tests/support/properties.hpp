#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "segmil/attention.hpp"

namespace segmil::testing {

inline std::vector<AggregatorKind> AllKinds() {
  return {AggregatorKind::kDSingle, AggregatorKind::kDMulti, AggregatorKind::kFeature, AggregatorKind::kMaxPool,
          AggregatorKind::kAvgPool};
}

inline AggregatorConfig SmallConfig(AggregatorKind kind, int k = 4) {
  AggregatorConfig cfg;
  cfg.kind = kind;
  cfg.input_dim = 16;
  cfg.hidden = 12;
  cfg.feature_dim = 10;
  cfg.num_classes = k;
  return cfg;
}

inline double MaxAbsDiff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Largest deviation of `p` from being a probability distribution.
inline double ProbDistError(const std::vector<double>& p) {
  double sum = 0.0, worst = 0.0;
  for (double v : p) {
    if (!std::isfinite(v)) return INFINITY;
    worst = std::max(worst, -v);
    sum += v;
  }
  return std::max(worst, std::abs(sum - 1.0));
}

inline std::vector<Param<float>*> ParamsWithPrefix(Aggregator<float>& net, const std::string& prefix) {
  std::vector<Param<float>*> out;
  for (auto* p : net.Params()) {
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
  }
  return out;
}

// Decision-level single attention with its score head forced constant
// versus average pooling sharing the same trunk and instance classifier.
// Returns the largest output difference over `n_bags` random bags.
inline double ConstantScoreVersusAvgPool(std::size_t n_bags, std::uint64_t seed) {
  AggregatorModel att(SmallConfig(AggregatorKind::kDSingle), seed);
  AggregatorModel avg(SmallConfig(AggregatorKind::kAvgPool), seed + 1);
  for (auto* p : ParamsWithPrefix(att.net(), "att.score")) p->value.Fill(0.0f);
  auto copy = [](const std::vector<Param<float>*>& from, const std::vector<Param<float>*>& to) {
    for (std::size_t i = 0; i < from.size(); ++i) to.at(i)->value = from[i]->value;
  };
  copy(ParamsWithPrefix(att.net(), "trunk."), ParamsWithPrefix(avg.net(), "trunk."));
  copy(ParamsWithPrefix(att.net(), "att.classifier"), ParamsWithPrefix(avg.net(), "pool.classifier"));
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t b = 0; b < n_bags; ++b) {
    const auto bag = RandomBag(rng, "b", 1 + rng.below(29), 29, 16, 0);
    const auto x = att.Predict(bag), y = avg.Predict(bag);
    worst = std::max({worst, MaxAbsDiff(x.prob, y.prob), MaxAbsDiff(x.raw, y.raw)});
  }
  return worst;
}

// Bags of T identical instances versus the single-instance bag.
inline double IdenticalInstanceGap(AggregatorKind kind, std::size_t trials, std::uint64_t seed) {
  AggregatorModel model(SmallConfig(kind), seed);
  Rng rng(seed + 5);
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto one = RandomBag(rng, "one", 1, 29, 16, 0);
    const std::vector<float> row(one.row(0).begin(), one.row(0).end());
    const std::size_t t = 2 + rng.below(28);
    const auto many = AssembleBag("many", std::vector<std::vector<float>>(t, row), 0, 29);
    worst = std::max(worst, MaxAbsDiff(model.Predict(one).prob, model.Predict(many).prob));
  }
  return worst;
}

// Shuffling the valid rows of a bag.
inline double PermutationGap(AggregatorKind kind, std::size_t n_bags, std::uint64_t seed) {
  AggregatorModel model(SmallConfig(kind), seed);
  Rng rng(seed + 9);
  double worst = 0.0;
  for (std::size_t i = 0; i < n_bags; ++i) {
    const std::size_t t = 1 + rng.below(29);
    std::vector<std::vector<float>> rows(t, std::vector<float>(16));
    for (auto& r : rows) {
      for (auto& v : r) v = static_cast<float>(rng.uniform(-1, 1));
    }
    const auto a = AssembleBag("a", rows, 0, 29);
    rng.shuffle(std::span<std::vector<float>>(rows));
    const auto b = AssembleBag("b", rows, 0, 29);
    worst = std::max(worst, MaxAbsDiff(model.Predict(a).prob, model.Predict(b).prob));
  }
  return worst;
}

struct WeightAudit {
  double max_sum_error = 0.0;   // |sum_t w_t - 1| per class / dimension
  double max_prob_error = 0.0;  // deviation of outputs from a ProbDist
  double min_weight = 0.0;
  std::size_t matrices = 0;
};

inline WeightAudit AuditAttentionWeights(AggregatorKind kind, std::size_t n_bags, std::uint64_t seed) {
  AggregatorModel model(SmallConfig(kind), seed);
  Rng rng(seed + 13);
  WeightAudit a;
  for (std::size_t i = 0; i < n_bags; ++i) {
    const auto bag = RandomBag(rng, "b", 1 + rng.below(29), 29, 16, 0);
    a.max_prob_error = std::max(a.max_prob_error, ProbDistError(model.Predict(bag).prob));
    for (const auto& w : model.AttentionWeights(bag)) {
      ++a.matrices;
      if (static_cast<std::size_t>(w.rows()) != bag.true_length) a.max_sum_error = INFINITY;
      a.min_weight = std::min(a.min_weight, w.minCoeff());
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        a.max_sum_error = std::max(a.max_sum_error, std::abs(w.col(c).sum() - 1.0));
      }
    }
  }
  return a;
}

}  // namespace segmil::testing
