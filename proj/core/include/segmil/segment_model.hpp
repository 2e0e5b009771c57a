#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "segmil/bagging.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/layers.hpp"
#include "segmil/optim.hpp"

namespace segmil {

// The body is a comma-separated layer list over [B, 1, seg_frames, n_mels]:
// "convKxK:C", "maxpoolAxB", "avgpoolAxB", "relu". The tail is fixed:
// flatten -> dense fc_width -> relu -> dense embed_dim -> relu -> dense K.
struct SegmentModelConfig {
  std::string body = "conv3x3:16,relu,maxpool2x2,conv3x3:32,relu,maxpool2x2";
  std::size_t seg_frames = 32;
  std::size_t n_mels = 64;
  std::size_t fc_width = 256;
  std::size_t embed_dim = 64;
  int num_classes = 4;
};

std::string ToJson(const SegmentModelConfig& cfg);
SegmentModelConfig SegmentModelConfigFromJson(const std::string& json);

template <typename T>
Sequential<T> BuildSegmentNetwork(const SegmentModelConfig& cfg, Rng& rng);

class SegmentModel {
 public:
  SegmentModel(const SegmentModelConfig& cfg, std::uint64_t seed);

  struct Outputs {
    Tensor<float> logits;      // B x K
    Tensor<float> embeddings;  // B x embed_dim (penultimate activations)
  };

  // Accepts [B, seg_frames, n_mels] or [B, 1, seg_frames, n_mels].
  Outputs Infer(const Tensor<float>& batch) const;

  Sequential<float>& network() { return *net_; }
  const SegmentModelConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t embedding_layer() const { return net_->size() - 2; }

  Checkpoint ToCheckpoint(const std::string& train_config_json = "{}") const;
  static SegmentModel FromCheckpoint(const Checkpoint& ckpt);

 private:
  SegmentModelConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Sequential<float>> net_;
};

// Packs segments into a [B, 1, seg_frames, n_mels] tensor.
Tensor<float> PackSegments(std::span<const Segment* const> segments, const SegmentModelConfig& cfg);

struct SegmentTrainingResult {
  SegmentModel model;
  TrainLog log;
  std::vector<std::string> train_utterances;       // fitted on
  std::vector<std::string> validation_utterances;  // early-stopping monitor
};

// Splits off a validation set by utterance (never by segment), trains with
// Adam + staircase decay + early stopping and returns the best-validation
// parameters. Throws kDegenerateData if any of the K classes is absent.
SegmentTrainingResult TrainSegmentModel(std::span<const Segment* const> segments, const SegmentModelConfig& mcfg,
                                        const TrainConfig& tcfg);

struct SegmentEmbedding {
  std::string utterance_id;
  std::size_t start_frame = 0;
  std::vector<float> embedding;
  std::vector<float> prob;  // softmax over K
};

std::vector<SegmentEmbedding> EmbedSegments(const SegmentModel& model, std::span<const Segment* const> segments);

// Stratified validation split by utterance id; returns the held-out ids.
std::vector<std::string> SplitValidationUtterances(const std::vector<std::pair<std::string, int>>& utterances,
                                                   double fraction, std::uint64_t seed);

}  // namespace segmil
