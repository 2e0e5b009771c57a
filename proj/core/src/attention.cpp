#include "segmil/attention.hpp"
#include "segmil/segment_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <unordered_set>

#include "json.hpp"

namespace segmil {

using nlohmann::json;

std::string_view ToString(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kDSingle: return "dsingle";
    case AggregatorKind::kDMulti: return "dmulti";
    case AggregatorKind::kFeature: return "feature";
    case AggregatorKind::kMaxPool: return "maxpool";
    case AggregatorKind::kAvgPool: return "avgpool";
  }
  return "unknown";
}

AggregatorKind ParseAggregatorKind(std::string_view name) {
  for (auto k : {AggregatorKind::kDSingle, AggregatorKind::kDMulti, AggregatorKind::kFeature,
                 AggregatorKind::kMaxPool, AggregatorKind::kAvgPool}) {
    if (ToString(k) == name) return k;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown aggregator kind '" + std::string(name) + "'");
}

bool RenormalizesOutput(AggregatorKind kind) {
  return kind == AggregatorKind::kDSingle || kind == AggregatorKind::kMaxPool || kind == AggregatorKind::kAvgPool;
}

std::string AggregatorConfig::ToJson() const {
  return json{{"kind", std::string(segmil::ToString(kind))},
              {"input_dim", input_dim},
              {"hidden", hidden},
              {"feature_dim", feature_dim},
              {"num_classes", num_classes},
              {"masked", masked}}
      .dump();
}

AggregatorConfig AggregatorConfig::FromJson(const std::string& text) {
  AggregatorConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.kind = ParseAggregatorKind(j.at("kind").get<std::string>());
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.feature_dim = j.at("feature_dim").get<std::size_t>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.masked = j.at("masked").get<bool>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("aggregator config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Pooling primitives

namespace {

void CheckPoolShapes(const RowMatrixXd& a, const RowMatrixXd& b, const std::vector<bool>& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || static_cast<std::size_t>(a.rows()) != mask.size()) {
    throw Error(ErrorCode::kShapeMismatch, "pooling inputs disagree in shape");
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool v) { return v; })) {
    throw Error(ErrorCode::kEmptyBag, "every row is masked");
  }
}

PoolResult NormalizedWeightedSum(const RowMatrixXd& values, const RowMatrixXd& scores, const std::vector<bool>& mask) {
  CheckPoolShapes(values, scores, mask);
  PoolResult r;
  r.output.assign(static_cast<std::size_t>(values.cols()), 0.0);
  r.weights = RowMatrixXd::Zero(values.rows(), values.cols());
  for (Eigen::Index k = 0; k < values.cols(); ++k) {
    double z = 0.0;
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      if (mask[static_cast<std::size_t>(t)]) z += scores(t, k);
    }
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      if (!mask[static_cast<std::size_t>(t)]) continue;
      r.weights(t, k) = scores(t, k) / z;
      r.output[static_cast<std::size_t>(k)] += r.weights(t, k) * values(t, k);
    }
  }
  return r;
}

}  // namespace

PoolResult DecisionAttentionPool(const RowMatrixXd& f, const RowMatrixXd& s, const std::vector<bool>& mask) {
  return NormalizedWeightedSum(f, s, mask);
}

PoolResult FeatureAttentionPool(const RowMatrixXd& q, const RowMatrixXd& u, const std::vector<bool>& mask) {
  return NormalizedWeightedSum(q, u, mask);
}

std::vector<double> MaxPoolRows(const RowMatrixXd& f, const std::vector<bool>& mask) {
  CheckPoolShapes(f, f, mask);
  std::vector<double> out(static_cast<std::size_t>(f.cols()), -std::numeric_limits<double>::infinity());
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    for (Eigen::Index k = 0; k < f.cols(); ++k) out[static_cast<std::size_t>(k)] = std::max(out[static_cast<std::size_t>(k)], f(t, k));
  }
  return out;
}

std::vector<double> MeanPoolRows(const RowMatrixXd& f, const std::vector<bool>& mask) {
  CheckPoolShapes(f, f, mask);
  std::vector<double> out(static_cast<std::size_t>(f.cols()), 0.0);
  double n = 0.0;
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    if (!mask[static_cast<std::size_t>(t)]) continue;
    n += 1.0;
    for (Eigen::Index k = 0; k < f.cols(); ++k) out[static_cast<std::size_t>(k)] += f(t, k);
  }
  for (double& v : out) v /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Batching

template <typename T>
BagBatch<T> PackBags(std::span<const Bag* const> bags) {
  if (bags.empty()) throw Error(ErrorCode::kEmptyBag, "no bags to pack");
  BagBatch<T> b;
  b.batch = bags.size();
  b.max_len = bags.front()->max_len;
  b.dim = bags.front()->dim;
  b.x = Tensor<T>({b.batch * b.max_len, b.dim});
  b.mask.assign(b.batch * b.max_len, 0);
  b.labels.resize(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const Bag& bag = *bags[i];
    if (bag.max_len != b.max_len || bag.dim != b.dim) {
      throw Error(ErrorCode::kShapeMismatch, "bag " + bag.utterance_id + " has a different geometry");
    }
    if (bag.true_length == 0) throw Error(ErrorCode::kEmptyBag, "bag " + bag.utterance_id + " is empty");
    std::copy(bag.embeddings.begin(), bag.embeddings.end(), b.x.data() + i * b.max_len * b.dim);
    for (std::size_t t = 0; t < b.max_len; ++t) b.mask[i * b.max_len + t] = bag.mask[t] ? 1 : 0;
    b.labels[i] = bag.label;
  }
  return b;
}

template BagBatch<float> PackBags<float>(std::span<const Bag* const>);
template BagBatch<double> PackBags<double>(std::span<const Bag* const>);

// ---------------------------------------------------------------------------
// Aggregator

namespace {

template <typename T>
void Relu(const Tensor<T>& in, Tensor<T>& out) {
  out.Resize(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void ReluBackward(const Tensor<T>& pre, Tensor<T>& grad) {
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (!(pre[i] > T(0))) grad[i] = T(0);
  }
}

// dz = p * (dp - <dp, p>) row-wise.
template <typename T>
void SoftmaxBackward(const Tensor<T>& p, const Tensor<T>& dp, Tensor<T>& dz) {
  dz.Resize(p.shape());
  const std::size_t rows = p.dim(0), k = p.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = 0;
    for (std::size_t j = 0; j < k; ++j) dot += dp[r * k + j] * p[r * k + j];
    for (std::size_t j = 0; j < k; ++j) dz[r * k + j] = p[r * k + j] * (dp[r * k + j] - dot);
  }
}

template <typename T>
void AddInPlace(Tensor<T>& acc, const Tensor<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

template <typename T>
std::unique_ptr<Dense<T>> MakeDense(std::size_t in, std::size_t out, const std::string& name, Rng& rng) {
  auto d = std::make_unique<Dense<T>>(in, out, name);
  d->Init(rng);
  return d;
}

constexpr double kProbFloor = 1e-12;

}  // namespace

template <typename T>
Aggregator<T>::Aggregator(const AggregatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.num_classes < 2 || cfg.input_dim == 0 || cfg.hidden == 0 || cfg.feature_dim == 0) {
    throw Error(ErrorCode::kInvalidConfig, "aggregator dimensions must be positive and K >= 2");
  }
  Rng rng(DeriveSeed(seed, "aggregator-init"));
  const std::size_t m = cfg.input_dim, h = cfg.hidden, k = static_cast<std::size_t>(cfg.num_classes);
  dense1_ = MakeDense<T>(m, h, "trunk.dense1", rng);
  dense2_ = MakeDense<T>(h, h, "trunk.dense2", rng);
  switch (cfg.kind) {
    case AggregatorKind::kDSingle:
      f_head_[0] = MakeDense<T>(h, k, "att.classifier", rng);
      s_head_[0] = MakeDense<T>(h, k, "att.score", rng);
      break;
    case AggregatorKind::kDMulti:
      f_head_[1] = MakeDense<T>(h, k, "att1.classifier", rng);
      s_head_[1] = MakeDense<T>(h, k, "att1.score", rng);
      f_head_[0] = MakeDense<T>(h, k, "att2.classifier", rng);
      s_head_[0] = MakeDense<T>(h, k, "att2.score", rng);
      fuse_ = MakeDense<T>(2 * k, k, "fuse", rng);
      break;
    case AggregatorKind::kFeature:
      q_head_ = MakeDense<T>(h, cfg.feature_dim, "feat.map", rng);
      u_head_ = MakeDense<T>(h, cfg.feature_dim, "feat.gate", rng);
      g_head_ = MakeDense<T>(cfg.feature_dim, k, "feat.classifier", rng);
      break;
    case AggregatorKind::kMaxPool:
    case AggregatorKind::kAvgPool:
      f_head_[0] = MakeDense<T>(h, k, "pool.classifier", rng);
      break;
  }
}

template <typename T>
std::vector<Param<T>*> Aggregator<T>::Params() {
  std::vector<Param<T>*> out;
  auto add = [&](const std::unique_ptr<Dense<T>>& d) {
    if (d) {
      for (auto* p : d->Params()) out.push_back(p);
    }
  };
  add(dense1_);
  add(dense2_);
  add(f_head_[1]);
  add(s_head_[1]);
  add(f_head_[0]);
  add(s_head_[0]);
  add(fuse_);
  add(q_head_);
  add(u_head_);
  add(g_head_);
  return out;
}

template <typename T>
void Aggregator<T>::DecisionForward(int slot, const Dense<T>& fh, const Dense<T>& sh, const Tensor<T>& in,
                                    const BagBatch<T>& batch, AggregatorTrace<T>& tr) const {
  fh.Forward(in, tr.f_logit[slot]);
  SoftmaxRows(tr.f_logit[slot], tr.f[slot]);
  sh.Forward(in, tr.s_logit[slot]);
  SoftmaxRows(tr.s_logit[slot], tr.s[slot]);
  const std::size_t k = static_cast<std::size_t>(cfg_.num_classes), len = batch.max_len;
  Tensor<T>& pooled = tr.pooled[slot];
  pooled.Resize({batch.batch, k});
  const Tensor<T>& f = tr.f[slot];
  const Tensor<T>& s = tr.s[slot];
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      T z = 0, num = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t row = b * len + t;
        if (!Valid(batch, row)) continue;
        z += s[row * k + j];
        num += s[row * k + j] * f[row * k + j];
      }
      pooled[b * k + j] = num / z;
    }
  }
}

template <typename T>
void Aggregator<T>::DecisionBackward(int slot, Dense<T>& fh, Dense<T>& sh, const Tensor<T>& in,
                                     const Tensor<T>& d_pooled, const BagBatch<T>& batch,
                                     const AggregatorTrace<T>& tr, Tensor<T>& d_in) {
  const std::size_t k = static_cast<std::size_t>(cfg_.num_classes), len = batch.max_len;
  const Tensor<T>& f = tr.f[slot];
  const Tensor<T>& s = tr.s[slot];
  const Tensor<T>& pooled = tr.pooled[slot];
  Tensor<T> df(f.shape()), ds(s.shape());
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      T z = 0;
      for (std::size_t t = 0; t < len; ++t) {
        if (Valid(batch, b * len + t)) z += s[(b * len + t) * k + j];
      }
      const T g = d_pooled[b * k + j];
      const T out = pooled[b * k + j];
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t row = b * len + t;
        if (!Valid(batch, row)) continue;
        df[row * k + j] = g * s[row * k + j] / z;
        ds[row * k + j] = g * (f[row * k + j] - out) / z;
      }
    }
  }
  Tensor<T> dz, tmp;
  SoftmaxBackward(f, df, dz);
  fh.Backward(in, tr.f_logit[slot], dz, &tmp);
  AddInPlace(d_in, tmp);
  SoftmaxBackward(s, ds, dz);
  sh.Backward(in, tr.s_logit[slot], dz, &tmp);
  AddInPlace(d_in, tmp);
}

template <typename T>
void Aggregator<T>::Forward(const BagBatch<T>& batch, AggregatorTrace<T>& tr) const {
  if (batch.dim != cfg_.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "bag dimension " + std::to_string(batch.dim) + " != model input " +
                                               std::to_string(cfg_.input_dim));
  }
  const std::size_t k = static_cast<std::size_t>(cfg_.num_classes), len = batch.max_len;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < len && !any; ++t) any = Valid(batch, b * len + t);
    if (!any) throw Error(ErrorCode::kEmptyBag, "bag with every row masked");
  }
  dense1_->Forward(batch.x, tr.a1);
  Relu(tr.a1, tr.h1);
  dense2_->Forward(tr.h1, tr.a2);
  Relu(tr.a2, tr.h2);

  tr.raw.Resize({batch.batch, k});
  switch (cfg_.kind) {
    case AggregatorKind::kDSingle:
      DecisionForward(0, *f_head_[0], *s_head_[0], tr.h2, batch, tr);
      tr.raw = tr.pooled[0];
      break;
    case AggregatorKind::kDMulti: {
      DecisionForward(1, *f_head_[1], *s_head_[1], tr.h1, batch, tr);
      DecisionForward(0, *f_head_[0], *s_head_[0], tr.h2, batch, tr);
      tr.fused.Resize({batch.batch, 2 * k});
      for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          tr.fused[b * 2 * k + j] = tr.pooled[1][b * k + j];
          tr.fused[b * 2 * k + k + j] = tr.pooled[0][b * k + j];
        }
      }
      fuse_->Forward(tr.fused, tr.logits);
      SoftmaxRows(tr.logits, tr.prob);
      tr.raw = tr.prob;
      return;
    }
    case AggregatorKind::kFeature: {
      q_head_->Forward(tr.h2, tr.q);
      u_head_->Forward(tr.h2, tr.u_logit);
      tr.u.Resize(tr.u_logit.shape());
      for (std::size_t i = 0; i < tr.u.size(); ++i) tr.u[i] = T(1) / (T(1) + std::exp(-tr.u_logit[i]));
      const std::size_t d = cfg_.feature_dim;
      tr.bag_repr.Resize({batch.batch, d});
      for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < d; ++j) {
          T z = 0, num = 0;
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t row = b * len + t;
            if (!Valid(batch, row)) continue;
            z += tr.u[row * d + j];
            num += tr.u[row * d + j] * tr.q[row * d + j];
          }
          tr.bag_repr[b * d + j] = num / z;
        }
      }
      g_head_->Forward(tr.bag_repr, tr.logits);
      SoftmaxRows(tr.logits, tr.prob);
      tr.raw = tr.prob;
      return;
    }
    case AggregatorKind::kMaxPool:
    case AggregatorKind::kAvgPool: {
      f_head_[0]->Forward(tr.h2, tr.f_logit[0]);
      SoftmaxRows(tr.f_logit[0], tr.f[0]);
      const Tensor<T>& f = tr.f[0];
      const bool is_max = cfg_.kind == AggregatorKind::kMaxPool;
      for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          T acc = is_max ? -std::numeric_limits<T>::infinity() : T(0);
          T n = 0;
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t row = b * len + t;
            if (!Valid(batch, row)) continue;
            acc = is_max ? std::max(acc, f[row * k + j]) : acc + f[row * k + j];
            n += T(1);
          }
          tr.raw[b * k + j] = is_max ? acc : acc / n;
        }
      }
      break;
    }
  }
  // Decision-level outputs need not sum to one; renormalize into a ProbDist.
  tr.prob.Resize({batch.batch, k});
  for (std::size_t b = 0; b < batch.batch; ++b) {
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += tr.raw[b * k + j];
    for (std::size_t j = 0; j < k; ++j) tr.prob[b * k + j] = tr.raw[b * k + j] / sum;
  }
}

template <typename T>
T Aggregator<T>::Loss(const BagBatch<T>& batch, const AggregatorTrace<T>& tr) const {
  const std::size_t k = static_cast<std::size_t>(cfg_.num_classes);
  // Max-pool trains with softmax cross-entropy over the raw class maxima: the
  // log of the renormalized maxima has a degenerate optimum in which every
  // non-witness instance predicts one fixed class with certainty.
  if (cfg_.kind == AggregatorKind::kMaxPool) return SoftmaxCrossEntropy(tr.raw, batch.labels, nullptr);
  T total = 0;
  if (RenormalizesOutput(cfg_.kind)) {
    for (std::size_t b = 0; b < batch.batch; ++b) {
      total -= std::log(std::max<T>(tr.prob[b * k + static_cast<std::size_t>(batch.labels[b])], T(kProbFloor)));
    }
    return total / static_cast<T>(batch.batch);
  }
  return SoftmaxCrossEntropy(tr.logits, batch.labels, nullptr);
}

template <typename T>
T Aggregator<T>::Backward(const BagBatch<T>& batch, const AggregatorTrace<T>& tr) {
  const std::size_t k = static_cast<std::size_t>(cfg_.num_classes), len = batch.max_len;
  const T inv_b = T(1) / static_cast<T>(batch.batch);
  const T loss = Loss(batch, tr);

  Tensor<T> dh2(tr.h2.shape());
  Tensor<T> dh1(tr.h1.shape());

  // dL/d(raw): softmax cross-entropy for max-pool, L = -log(raw_y / S) for the other renormalized heads.
  Tensor<T> draw;
  if (cfg_.kind == AggregatorKind::kMaxPool) {
    SoftmaxCrossEntropy(tr.raw, batch.labels, &draw);
  } else if (RenormalizesOutput(cfg_.kind)) {
    draw.Resize({batch.batch, k});
    for (std::size_t b = 0; b < batch.batch; ++b) {
      T sum = 0;
      for (std::size_t j = 0; j < k; ++j) sum += tr.raw[b * k + j];
      const std::size_t y = static_cast<std::size_t>(batch.labels[b]);
      const T ry = std::max<T>(tr.raw[b * k + y], T(kProbFloor) * sum);
      for (std::size_t j = 0; j < k; ++j) draw[b * k + j] = inv_b * (T(1) / sum - (j == y ? T(1) / ry : T(0)));
    }
  }

  switch (cfg_.kind) {
    case AggregatorKind::kDSingle:
      DecisionBackward(0, *f_head_[0], *s_head_[0], tr.h2, draw, batch, tr, dh2);
      break;
    case AggregatorKind::kDMulti: {
      Tensor<T> dlogits;
      SoftmaxCrossEntropy(tr.logits, batch.labels, &dlogits);
      Tensor<T> dfused;
      fuse_->Backward(tr.fused, tr.logits, dlogits, &dfused);
      Tensor<T> dp1({batch.batch, k}), dp2({batch.batch, k});
      for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          dp1[b * k + j] = dfused[b * 2 * k + j];
          dp2[b * k + j] = dfused[b * 2 * k + k + j];
        }
      }
      DecisionBackward(1, *f_head_[1], *s_head_[1], tr.h1, dp1, batch, tr, dh1);
      DecisionBackward(0, *f_head_[0], *s_head_[0], tr.h2, dp2, batch, tr, dh2);
      break;
    }
    case AggregatorKind::kFeature: {
      Tensor<T> dlogits, drepr;
      SoftmaxCrossEntropy(tr.logits, batch.labels, &dlogits);
      g_head_->Backward(tr.bag_repr, tr.logits, dlogits, &drepr);
      const std::size_t d = cfg_.feature_dim;
      Tensor<T> dq(tr.q.shape()), du(tr.u.shape());
      for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t j = 0; j < d; ++j) {
          T z = 0;
          for (std::size_t t = 0; t < len; ++t) {
            if (Valid(batch, b * len + t)) z += tr.u[(b * len + t) * d + j];
          }
          const T g = drepr[b * d + j];
          const T out = tr.bag_repr[b * d + j];
          for (std::size_t t = 0; t < len; ++t) {
            const std::size_t row = b * len + t;
            if (!Valid(batch, row)) continue;
            const T u = tr.u[row * d + j];
            dq[row * d + j] = g * u / z;
            // Chain through the sigmoid gate.
            du[row * d + j] = g * (tr.q[row * d + j] - out) / z * u * (T(1) - u);
          }
        }
      }
      Tensor<T> tmp;
      q_head_->Backward(tr.h2, tr.q, dq, &tmp);
      AddInPlace(dh2, tmp);
      u_head_->Backward(tr.h2, tr.u_logit, du, &tmp);
      AddInPlace(dh2, tmp);
      break;
    }
    case AggregatorKind::kMaxPool:
    case AggregatorKind::kAvgPool: {
      const Tensor<T>& f = tr.f[0];
      Tensor<T> df(f.shape());
      const bool is_max = cfg_.kind == AggregatorKind::kMaxPool;
      for (std::size_t b = 0; b < batch.batch; ++b) {
        T n = 0;
        for (std::size_t t = 0; t < len; ++t) n += Valid(batch, b * len + t) ? T(1) : T(0);
        for (std::size_t j = 0; j < k; ++j) {
          const T g = draw[b * k + j];
          if (is_max) {
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t row = b * len + t;
              if (Valid(batch, row) && f[row * k + j] == tr.raw[b * k + j]) {
                df[row * k + j] += g;  // first maximum takes the gradient
                break;
              }
            }
          } else {
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t row = b * len + t;
              if (Valid(batch, row)) df[row * k + j] = g / n;
            }
          }
        }
      }
      Tensor<T> dz, tmp;
      SoftmaxBackward(f, df, dz);
      f_head_[0]->Backward(tr.h2, tr.f_logit[0], dz, &tmp);
      AddInPlace(dh2, tmp);
      break;
    }
  }

  ReluBackward(tr.a2, dh2);
  Tensor<T> tmp;
  dense2_->Backward(tr.h1, tr.a2, dh2, &tmp);
  AddInPlace(dh1, tmp);
  ReluBackward(tr.a1, dh1);
  dense1_->Backward(batch.x, tr.a1, dh1, nullptr);
  return loss;
}

template class Aggregator<float>;
template class Aggregator<double>;

// ---------------------------------------------------------------------------
// AggregatorModel

AggregatorModel::AggregatorModel(const AggregatorConfig& cfg, std::uint64_t seed) : seed_(seed), net_(cfg, seed) {}

std::vector<AggregatorOutput> AggregatorModel::Predict(std::span<const Bag* const> bags) const {
  constexpr std::size_t kChunk = 64;
  std::vector<AggregatorOutput> out;
  out.reserve(bags.size());
  AggregatorTrace<float> tr;
  const std::size_t k = static_cast<std::size_t>(config().num_classes);
  for (std::size_t start = 0; start < bags.size(); start += kChunk) {
    const auto chunk = bags.subspan(start, std::min(kChunk, bags.size() - start));
    const auto batch = PackBags<float>(chunk);
    net_.Forward(batch, tr);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      AggregatorOutput o;
      o.prob.assign(tr.prob.data() + b * k, tr.prob.data() + (b + 1) * k);
      o.raw.assign(tr.raw.data() + b * k, tr.raw.data() + (b + 1) * k);
      out.push_back(std::move(o));
    }
  }
  return out;
}

AggregatorOutput AggregatorModel::Predict(const Bag& bag) const {
  const Bag* p = &bag;
  return Predict(std::span<const Bag* const>(&p, 1)).front();
}

std::vector<RowMatrixXd> AggregatorModel::AttentionWeights(const Bag& bag) const {
  const Bag* p = &bag;
  const auto batch = PackBags<float>(std::span<const Bag* const>(&p, 1));
  AggregatorTrace<float> tr;
  net_.Forward(batch, tr);
  const auto& cfg = config();
  std::vector<bool> mask(bag.max_len);
  for (std::size_t t = 0; t < bag.max_len; ++t) mask[t] = !cfg.masked || bag.mask[t];
  const std::size_t rows = cfg.masked ? bag.true_length : bag.max_len;
  auto to_matrix = [&](const Tensor<float>& t) {
    const std::size_t cols = t.size() / bag.max_len;
    RowMatrixXd m(bag.max_len, cols);
    for (std::size_t i = 0; i < t.size(); ++i) m(static_cast<Eigen::Index>(i / cols), static_cast<Eigen::Index>(i % cols)) = t[i];
    return m;
  };
  std::vector<RowMatrixXd> out;
  auto weights_of = [&](const Tensor<float>& values, const Tensor<float>& scores) {
    auto res = NormalizedWeightedSum(to_matrix(values), to_matrix(scores), mask);
    out.push_back(res.weights.topRows(static_cast<Eigen::Index>(rows)));
  };
  switch (cfg.kind) {
    case AggregatorKind::kDSingle: weights_of(tr.f[0], tr.s[0]); break;
    case AggregatorKind::kDMulti:
      weights_of(tr.f[1], tr.s[1]);
      weights_of(tr.f[0], tr.s[0]);
      break;
    case AggregatorKind::kFeature: weights_of(tr.q, tr.u); break;
    case AggregatorKind::kMaxPool:
    case AggregatorKind::kAvgPool:
      break;
  }
  return out;
}

Checkpoint AggregatorModel::ToCheckpoint(const std::string& train_config_json) const {
  Checkpoint ckpt;
  ckpt.kind = std::string(ToString(config().kind));
  ckpt.config_json = json{{"model", json::parse(config().ToJson())}, {"train", json::parse(train_config_json)}}.dump();
  ckpt.seed = seed_;
  ExportParams(const_cast<Aggregator<float>&>(net_).Params(), ckpt);
  return ckpt;
}

AggregatorModel AggregatorModel::FromCheckpoint(const Checkpoint& ckpt) {
  json echo;
  try {
    echo = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptStore, std::string("checkpoint config: ") + e.what());
  }
  const auto cfg = AggregatorConfig::FromJson(echo.at("model").dump());
  if (ToString(cfg.kind) != ckpt.kind) throw Error(ErrorCode::kCorruptStore, "checkpoint kind tag mismatch");
  AggregatorModel model(cfg, ckpt.seed);
  ImportParams(ckpt, model.net_.Params());
  return model;
}

// ---------------------------------------------------------------------------
// Training

AggregatorTrainingResult TrainAggregator(const AggregatorConfig& cfg, std::span<const Bag* const> bags,
                                         const TrainConfig& tcfg) {
  tcfg.Validate();
  std::set<int> classes;
  std::vector<std::pair<std::string, int>> utterances;
  for (const Bag* bag : bags) {
    if (bag->label < 0 || bag->label >= cfg.num_classes) {
      throw Error(ErrorCode::kShapeMismatch, "bag label out of range in " + bag->utterance_id);
    }
    classes.insert(bag->label);
    utterances.emplace_back(bag->utterance_id, bag->label);
  }
  if (static_cast<int>(classes.size()) != cfg.num_classes) {
    throw Error(ErrorCode::kDegenerateData, "training bags cover " + std::to_string(classes.size()) + " of " +
                                                std::to_string(cfg.num_classes) + " classes");
  }
  auto held = SplitValidationUtterances(utterances, tcfg.validation_fraction, tcfg.seed);
  const std::unordered_set<std::string> held_set(held.begin(), held.end());
  std::vector<const Bag*> train, val;
  for (const Bag* bag : bags) (held_set.count(bag->utterance_id) ? val : train).push_back(bag);

  AggregatorTrainingResult result{AggregatorModel(cfg, tcfg.seed), {}, std::move(held)};
  auto& net = result.model.net();
  const auto params = net.Params();

  std::vector<const Bag*> chunk;
  AggregatorTrace<float> tr;
  TrainCallbacks callbacks;
  callbacks.train_batch = [&](std::span<const std::size_t> idx) {
    chunk.clear();
    for (std::size_t i : idx) chunk.push_back(train[i]);
    const auto batch = PackBags<float>(chunk);
    net.Forward(batch, tr);
    return static_cast<double>(net.Backward(batch, tr));
  };
  BagBatch<float> val_batch;
  if (!val.empty()) {
    val_batch = PackBags<float>(val);
    callbacks.validate = [&] {
      AggregatorTrace<float> vt;
      net.Forward(val_batch, vt);
      const std::size_t k = static_cast<std::size_t>(cfg.num_classes);
      std::size_t correct = 0;
      for (std::size_t b = 0; b < val_batch.batch; ++b) {
        const float* row = vt.prob.data() + b * k;
        if (std::max_element(row, row + k) - row == val_batch.labels[b]) ++correct;
      }
      return LossAndAccuracy{static_cast<double>(net.Loss(val_batch, vt)),
                             static_cast<double>(correct) / static_cast<double>(val_batch.batch)};
    };
  }
  result.log = RunTrainLoop(tcfg, train.size(), params, callbacks);
  return result;
}

void WriteAttentionCsv(std::ostream& os, const AggregatorModel& model, std::span<const Bag* const> bags) {
  os << "bag,module,t";
  const auto& cfg = model.config();
  const std::size_t cols = cfg.kind == AggregatorKind::kFeature ? cfg.feature_dim
                                                                : static_cast<std::size_t>(cfg.num_classes);
  for (std::size_t j = 0; j < cols; ++j) os << ",w" << j;
  os << '\n';
  for (const Bag* bag : bags) {
    const auto mats = model.AttentionWeights(*bag);
    for (std::size_t mi = 0; mi < mats.size(); ++mi) {
      for (Eigen::Index t = 0; t < mats[mi].rows(); ++t) {
        os << bag->utterance_id << ',' << mi << ',' << t;
        for (Eigen::Index j = 0; j < mats[mi].cols(); ++j) os << ',' << mats[mi](t, j);
        os << '\n';
      }
    }
  }
}

}  // namespace segmil
