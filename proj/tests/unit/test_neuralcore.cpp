#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/layers.hpp"
#include "segmil/optim.hpp"
#include "segmil/segment_model.hpp"

namespace segmil {
namespace {

using testing::CheckParamGradients;
using testing::RelErr;

Tensor<double> RandomTensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Full network gradient check (parameters and input) through softmax CE.
void CheckNetwork(Sequential<double>& net, const Tensor<double>& input, const std::vector<int>& labels) {
  auto params = net.Params();
  ZeroGrads(params);
  Tensor<double> grad;
  SoftmaxCrossEntropy<double>(net.Forward(input), labels, &grad);
  Tensor<double> grad_in;
  net.Backward(grad, &grad_in);
  auto loss = [&] { return SoftmaxCrossEntropy<double>(net.Forward(input), labels, nullptr); };
  const auto r = CheckParamGradients(params, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 0u);
  Tensor<double> x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + 1e-5;
    const double up = SoftmaxCrossEntropy<double>(net.Forward(x), labels, nullptr);
    x[i] = orig - 1e-5;
    const double down = SoftmaxCrossEntropy<double>(net.Forward(x), labels, nullptr);
    x[i] = orig;
    EXPECT_LT(RelErr(grad_in[i], (up - down) / 2e-5), 1e-4) << "input " << i;
  }
}

TEST(GradientCheck, DenseReluStack) {
  Rng rng(1);
  Sequential<double> net;
  auto d1 = std::make_unique<Dense<double>>(6, 5, "d1");
  d1->Init(rng);
  auto d2 = std::make_unique<Dense<double>>(5, 3, "d2");
  d2->Init(rng);
  net.Add(std::move(d1));
  net.Add(std::make_unique<ReLU<double>>());
  net.Add(std::move(d2));
  CheckNetwork(net, RandomTensor({4, 6}, rng), {0, 1, 2, 1});
}

TEST(GradientCheck, ConvPoolFlatten) {
  for (auto mode : {PoolMode::kMax, PoolMode::kAvg}) {
    Rng rng(2);
    Sequential<double> net;
    auto conv = std::make_unique<Conv2D<double>>(2, 3, 3, 3, "conv");
    conv->Init(rng);
    net.Add(std::move(conv));
    net.Add(std::make_unique<ReLU<double>>());
    net.Add(std::make_unique<Pool2D<double>>(mode, 2, 2));
    net.Add(std::make_unique<Flatten<double>>());
    auto d = std::make_unique<Dense<double>>(3 * 3 * 2, 3, "d");
    d->Init(rng);
    net.Add(std::move(d));
    CheckNetwork(net, RandomTensor({2, 2, 6, 5}, rng), {2, 0});
  }
}

TEST(GradientCheck, SegmentNetworkOnTinyShapes) {
  SegmentModelConfig cfg;
  cfg.body = "conv3x3:2,relu,maxpool2x2,avgpool1x2";
  cfg.seg_frames = 8;
  cfg.n_mels = 8;
  cfg.fc_width = 6;
  cfg.embed_dim = 4;
  cfg.num_classes = 3;
  Rng rng(3);
  auto net = BuildSegmentNetwork<double>(cfg, rng);
  CheckNetwork(net, RandomTensor({3, 1, 8, 8}, rng), {0, 2, 1});
}

TEST(Softmax, RowsAreProbabilityDistributions) {
  Rng rng(4);
  auto logits = RandomTensor({50, 4}, rng);
  for (auto& v : logits.values()) v *= 30.0;
  Tensor<double> p;
  SoftmaxRows(logits, p);
  for (std::size_t r = 0; r < 50; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_GE(p[r * 4 + k], 0.0);
      s += p[r * 4 + k];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CrossEntropy, UniformAndPerfect) {
  const Tensor<double> zero({3, 4});
  EXPECT_NEAR(SoftmaxCrossEntropy<double>(zero, std::vector<int>{0, 1, 3}, nullptr), std::log(4.0), 1e-12);
  Tensor<double> perfect({1, 4}, std::vector<double>{100.0, -100.0, -100.0, -100.0});
  const double l = SoftmaxCrossEntropy<double>(perfect, std::vector<int>{0}, nullptr);
  EXPECT_GE(l, 0.0);
  EXPECT_LE(l, 1e-6);
}

TEST(SegmentModel, ZeroFinalLayerGivesUniform) {
  SegmentModelConfig cfg;
  cfg.body = "avgpool8x8";
  SegmentModel model(cfg, 1);
  auto params = model.network().Params();
  for (auto* p : params) {
    if (p->name.rfind("out.", 0) == 0 || p == params[params.size() - 1] || p == params[params.size() - 2]) {
      p->value.Fill(0.0f);
    }
  }
  Rng rng(5);
  Tensor<float> x({2, 32, 64});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-3, 3));
  const auto out = model.Infer(x);
  Tensor<float> p;
  SoftmaxRows(out.logits, p);
  for (float v : p.values()) EXPECT_NEAR(v, 0.25f, 1e-6f);
  EXPECT_EQ(out.embeddings.dim(1), 64u);
}

TEST(SegmentModel, DeterministicInitAndInference) {
  SegmentModelConfig cfg;
  cfg.body = "avgpool4x4,conv3x3:2,relu";
  SegmentModel a(cfg, 9), b(cfg, 9), c(cfg, 10);
  Rng rng(6);
  Tensor<float> x({3, 32, 64});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-3, 3));
  EXPECT_EQ(a.Infer(x).logits, b.Infer(x).logits);
  EXPECT_NE(a.Infer(x).logits, c.Infer(x).logits);
  const auto round = SegmentModel::FromCheckpoint(a.ToCheckpoint());
  EXPECT_EQ(round.Infer(x).embeddings, a.Infer(x).embeddings);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p = {1.0, -2.0, 3.0}, g = {0.5, -0.1, 40.0}, m(3, 0.0), v(3, 0.0);
  AdamUpdate<double>(p, g, m, v, 1, 0.001);
  EXPECT_NEAR(p[0], 1.0 - 0.001, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 0.001, 1e-9);
  EXPECT_NEAR(p[2], 3.0 - 0.001, 1e-9);
}

TEST(Adam, ZeroGradientIsIdentity) {
  std::vector<double> p = {1.0, -2.0}, g = {0.0, 0.0}, m(2, 0.0), v(2, 0.0);
  for (long s = 1; s <= 5; ++s) AdamUpdate<double>(p, g, m, v, s, 0.01);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
}

TEST(Adam, TwoStepsMatchHandRecurrence) {
  const double g = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = 0.7, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
  }
  std::vector<double> p = {0.7}, gr = {g}, mm = {0.0}, vv = {0.0};
  AdamUpdate<double>(p, gr, mm, vv, 1, lr);
  AdamUpdate<double>(p, gr, mm, vv, 2, lr);
  EXPECT_NEAR(p[0], theta, 1e-12);
}

TEST(LrSchedule, StaircaseDecay) {
  TrainConfig cfg;
  EXPECT_NEAR(LrSchedule(0, cfg), 0.001, 1e-15);
  EXPECT_NEAR(LrSchedule(2, cfg), 0.0008, 1e-15);
  EXPECT_NEAR(LrSchedule(5, cfg), 0.00064, 1e-15);
  for (int e = 1; e < 50; ++e) EXPECT_LE(LrSchedule(e, cfg), LrSchedule(e - 1, cfg));
}

TEST(EarlyStopping, PatienceThreeStopsFourEpochsAfterBest) {
  EarlyStopping es(3);
  int epochs = 0;
  double loss = 1.0;
  while (true) {
    ++epochs;
    if (es.Update(loss)) break;
    loss += 0.1;
  }
  EXPECT_EQ(epochs, 4);
  EXPECT_EQ(es.best_epoch(), 0);
}

// Two classes separated by the sign of the mean level of the segment.
std::vector<Segment> ToySegments(int n_utt, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Segment> segs;
  for (int u = 0; u < n_utt; ++u) {
    const int label = u % 2;
    for (int j = 0; j < 4; ++j) {
      Segment s;
      s.utterance_id = "u" + std::to_string(u);
      s.start_frame = static_cast<std::size_t>(6 * j);
      s.label = label;
      s.features.resize(8 * 8);
      for (auto& v : s.features) v = static_cast<float>((label ? 1.0 : -1.0) + rng.uniform(-0.8, 0.8));
      segs.push_back(std::move(s));
    }
  }
  return segs;
}

TEST(TrainSegmentModel, SeparableToyReachesFullAccuracyAndIsDeterministic) {
  SegmentModelConfig mcfg;
  mcfg.body = "relu";
  mcfg.seg_frames = 8;
  mcfg.n_mels = 8;
  mcfg.fc_width = 16;
  mcfg.embed_dim = 8;
  mcfg.num_classes = 2;
  TrainConfig tcfg;
  tcfg.max_epochs = 20;
  tcfg.batch_size = 16;
  tcfg.learning_rate = 0.01;
  const auto segs = ToySegments(60, 1);
  std::vector<const Segment*> ptrs;
  for (const auto& s : segs) ptrs.push_back(&s);
  const auto a = TrainSegmentModel(ptrs, mcfg, tcfg);
  const auto b = TrainSegmentModel(ptrs, mcfg, tcfg);
  EXPECT_EQ(a.model.ToCheckpoint(), b.model.ToCheckpoint());
  EXPECT_LE(a.log.epochs.size(), 20u);

  const auto emb = EmbedSegments(a.model, ptrs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& p = emb[i].prob;
    EXPECT_NEAR(p[0] + p[1], 1.0f, 1e-6f);
    EXPECT_EQ(emb[i].embedding.size(), 8u);
    correct += (p[1] > p[0]) == (segs[i].label == 1);
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(segs.size()), 0.99);

  // Validation is split by utterance, never by segment.
  for (const auto& v : a.validation_utterances) {
    EXPECT_EQ(std::count(a.train_utterances.begin(), a.train_utterances.end(), v), 0);
  }
}

TEST(TrainSegmentModel, MissingClassIsDegenerate) {
  SegmentModelConfig mcfg;
  mcfg.body = "relu";
  mcfg.seg_frames = 8;
  mcfg.n_mels = 8;
  mcfg.num_classes = 3;
  auto segs = ToySegments(10, 2);
  std::vector<const Segment*> ptrs;
  for (const auto& s : segs) ptrs.push_back(&s);
  try {
    TrainSegmentModel(ptrs, mcfg, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateData);
  }
}

}  // namespace
}  // namespace segmil
