#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segmil/bagging.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/dsp.hpp"
#include "segmil/layers.hpp"
#include "segmil/optim.hpp"

namespace segmil {

enum class AggregatorKind { kDSingle, kDMulti, kFeature, kMaxPool, kAvgPool };

std::string_view ToString(AggregatorKind kind);
AggregatorKind ParseAggregatorKind(std::string_view name);
// Decision-level kinds whose pooled output is renormalized into a ProbDist.
bool RenormalizesOutput(AggregatorKind kind);

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::kFeature;
  std::size_t input_dim = 64;  // M
  std::size_t hidden = 120;    // H
  std::size_t feature_dim = 256;  // D, feature-level attention only
  int num_classes = 4;         // K
  bool masked = true;          // false: padded rows take part in every sum/max

  std::string ToJson() const;
  static AggregatorConfig FromJson(const std::string& json);
};

// ---------------------------------------------------------------------------
// Pooling primitives over explicit per-instance values. Rows with mask[t] ==
// false are excluded.

struct PoolResult {
  std::vector<double> output;  // K (decision) or D (feature)
  RowMatrixXd weights;         // T x K or T x D, zero on masked rows
};

// out_k = sum_t w_tk f_tk, w_tk = s_tk / sum_t' s_t'k.
PoolResult DecisionAttentionPool(const RowMatrixXd& f, const RowMatrixXd& s, const std::vector<bool>& mask);
// out_d = sum_t v_td q_td, v_td = u_td / sum_t' u_t'd.
PoolResult FeatureAttentionPool(const RowMatrixXd& q, const RowMatrixXd& u, const std::vector<bool>& mask);
std::vector<double> MaxPoolRows(const RowMatrixXd& f, const std::vector<bool>& mask);
std::vector<double> MeanPoolRows(const RowMatrixXd& f, const std::vector<bool>& mask);

// ---------------------------------------------------------------------------

template <typename T>
struct BagBatch {
  std::size_t batch = 0;
  std::size_t max_len = 0;
  std::size_t dim = 0;
  Tensor<T> x;                       // (batch * max_len) x dim
  std::vector<unsigned char> mask;   // batch * max_len
  std::vector<int> labels;
};

template <typename T>
BagBatch<T> PackBags(std::span<const Bag* const> bags);

// Forward caches for one batch.
template <typename T>
struct AggregatorTrace {
  Tensor<T> a1, h1, a2, h2;
  // Decision modules: index 0 reads h2, index 1 reads h1 (multi-attention only).
  Tensor<T> f_logit[2], f[2], s_logit[2], s[2], pooled[2];
  Tensor<T> q, u_logit, u, bag_repr;
  Tensor<T> fused, logits;
  Tensor<T> raw;   // B x K bag-level output before renormalization
  Tensor<T> prob;  // B x K ProbDist
};

// Utterance-level classifier over a bag of segment embeddings: a two-layer
// ReLU trunk (M -> H -> H) followed by one of five pooling heads.
template <typename T>
class Aggregator {
 public:
  Aggregator(const AggregatorConfig& cfg, std::uint64_t seed);
  Aggregator(Aggregator&&) noexcept = default;
  Aggregator& operator=(Aggregator&&) noexcept = default;

  void Forward(const BagBatch<T>& batch, AggregatorTrace<T>& trace) const;
  // Cross-entropy of the bag label. Decision kinds use -log of the renormalized
  // output, except max-pool, which applies softmax to the raw class maxima.
  T Loss(const BagBatch<T>& batch, const AggregatorTrace<T>& trace) const;
  // Accumulates gradients of Loss into Params(); returns the loss.
  T Backward(const BagBatch<T>& batch, const AggregatorTrace<T>& trace);

  std::vector<Param<T>*> Params();
  const AggregatorConfig& config() const { return cfg_; }
  bool Valid(const BagBatch<T>& batch, std::size_t row) const {
    return !cfg_.masked || batch.mask[row] != 0;
  }

 private:
  void DecisionForward(int slot, const Dense<T>& fh, const Dense<T>& sh, const Tensor<T>& in,
                       const BagBatch<T>& batch, AggregatorTrace<T>& tr) const;
  void DecisionBackward(int slot, Dense<T>& fh, Dense<T>& sh, const Tensor<T>& in, const Tensor<T>& d_pooled,
                        const BagBatch<T>& batch, const AggregatorTrace<T>& tr, Tensor<T>& d_in);

  AggregatorConfig cfg_;
  std::unique_ptr<Dense<T>> dense1_, dense2_;
  std::unique_ptr<Dense<T>> f_head_[2], s_head_[2];
  std::unique_ptr<Dense<T>> fuse_;
  std::unique_ptr<Dense<T>> q_head_, u_head_, g_head_;
};

struct AggregatorOutput {
  std::vector<double> prob;  // valid ProbDist
  std::vector<double> raw;   // pooled F(B) before renormalization
};

class AggregatorModel {
 public:
  AggregatorModel(const AggregatorConfig& cfg, std::uint64_t seed);

  std::vector<AggregatorOutput> Predict(std::span<const Bag* const> bags) const;
  AggregatorOutput Predict(const Bag& bag) const;

  // Attention weights for one bag over its first true_length rows:
  // one T x K matrix for decision-level single attention, two for multi
  // attention (after dense1, after dense2), one T x D matrix for feature-level.
  std::vector<RowMatrixXd> AttentionWeights(const Bag& bag) const;

  Aggregator<float>& net() { return net_; }
  const Aggregator<float>& net() const { return net_; }
  const AggregatorConfig& config() const { return net_.config(); }
  std::uint64_t seed() const { return seed_; }

  Checkpoint ToCheckpoint(const std::string& train_config_json = "{}") const;
  static AggregatorModel FromCheckpoint(const Checkpoint& ckpt);

 private:
  std::uint64_t seed_;
  Aggregator<float> net_;
};

struct AggregatorTrainingResult {
  AggregatorModel model;
  TrainLog log;
  std::vector<std::string> validation_utterances;
};

// Cross-entropy training with the shared Adam / decay / early-stopping loop;
// validation bags are split off by utterance. kDegenerateData if a class is absent.
AggregatorTrainingResult TrainAggregator(const AggregatorConfig& cfg, std::span<const Bag* const> bags,
                                         const TrainConfig& tcfg);

// Writes per-bag attention weights as CSV rows: bag,module,t,w0,w1,...
void WriteAttentionCsv(std::ostream& os, const AggregatorModel& model, std::span<const Bag* const> bags);

}  // namespace segmil
