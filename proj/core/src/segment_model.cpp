#include "segmil/segment_model.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace segmil {

using nlohmann::json;

std::string ToJson(const SegmentModelConfig& cfg) {
  json j = {{"body", cfg.body},
            {"seg_frames", cfg.seg_frames},
            {"n_mels", cfg.n_mels},
            {"fc_width", cfg.fc_width},
            {"embed_dim", cfg.embed_dim},
            {"num_classes", cfg.num_classes}};
  return j.dump();
}

SegmentModelConfig SegmentModelConfigFromJson(const std::string& text) {
  SegmentModelConfig cfg;
  try {
    const json j = json::parse(text);
    cfg.body = j.at("body").get<std::string>();
    cfg.seg_frames = j.at("seg_frames").get<std::size_t>();
    cfg.n_mels = j.at("n_mels").get<std::size_t>();
    cfg.fc_width = j.at("fc_width").get<std::size_t>();
    cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.num_classes = j.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("segment model config: ") + e.what());
  }
  return cfg;
}

template <typename T>
Sequential<T> BuildSegmentNetwork(const SegmentModelConfig& cfg, Rng& rng) {
  if (cfg.num_classes < 2) throw Error(ErrorCode::kInvalidConfig, "need at least two classes");
  Sequential<T> net;
  std::vector<std::size_t> shape = {1, 1, cfg.seg_frames, cfg.n_mels};
  static const std::regex conv_re(R"(conv(\d+)x(\d+):(\d+))");
  static const std::regex pool_re(R"((max|avg)pool(\d+)x(\d+))");
  std::stringstream ss(cfg.body);
  std::string token;
  int conv_index = 0;
  while (std::getline(ss, token, ',')) {
    token.erase(std::remove_if(token.begin(), token.end(), ::isspace), token.end());
    if (token.empty()) continue;
    std::smatch m;
    std::unique_ptr<Layer<T>> layer;
    if (std::regex_match(token, m, conv_re)) {
      auto conv = std::make_unique<Conv2D<T>>(shape[1], std::stoul(m[3]), std::stoul(m[1]), std::stoul(m[2]),
                                              "conv" + std::to_string(conv_index++));
      conv->Init(rng);
      layer = std::move(conv);
    } else if (std::regex_match(token, m, pool_re)) {
      layer = std::make_unique<Pool2D<T>>(m[1] == "max" ? PoolMode::kMax : PoolMode::kAvg, std::stoul(m[2]),
                                          std::stoul(m[3]));
    } else if (token == "relu") {
      layer = std::make_unique<ReLU<T>>();
    } else {
      throw Error(ErrorCode::kInvalidConfig, "unknown layer token '" + token + "'");
    }
    shape = layer->OutputShape(shape);
    net.Add(std::move(layer));
  }
  const std::size_t flat = ShapeSize(shape);
  net.Add(std::make_unique<Flatten<T>>());
  auto add_dense = [&](std::size_t in, std::size_t out, const char* name) {
    auto d = std::make_unique<Dense<T>>(in, out, name);
    d->Init(rng);
    net.Add(std::move(d));
  };
  add_dense(flat, cfg.fc_width, "fc");
  net.Add(std::make_unique<ReLU<T>>());
  add_dense(cfg.fc_width, cfg.embed_dim, "embed");
  net.Add(std::make_unique<ReLU<T>>());
  add_dense(cfg.embed_dim, static_cast<std::size_t>(cfg.num_classes), "out");
  return net;
}

template Sequential<float> BuildSegmentNetwork<float>(const SegmentModelConfig&, Rng&);
template Sequential<double> BuildSegmentNetwork<double>(const SegmentModelConfig&, Rng&);

SegmentModel::SegmentModel(const SegmentModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  Rng rng(DeriveSeed(seed, "segment-init"));
  net_ = std::make_unique<Sequential<float>>(BuildSegmentNetwork<float>(cfg, rng));
}

SegmentModel::Outputs SegmentModel::Infer(const Tensor<float>& batch) const {
  Tensor<float> input = batch;
  if (input.rank() == 3) input.Reshape({input.dim(0), 1, input.dim(1), input.dim(2)});
  if (input.rank() != 4 || input.dim(1) != 1 || input.dim(2) != cfg_.seg_frames || input.dim(3) != cfg_.n_mels) {
    throw Error(ErrorCode::kShapeMismatch, "segment batch " + ShapeString(batch.shape()) + " does not match model");
  }
  std::vector<Tensor<float>> acts;
  net_->Infer(input, acts);
  Outputs out;
  out.logits = std::move(acts.back());
  out.embeddings = std::move(acts[embedding_layer() + 1]);
  return out;
}

Checkpoint SegmentModel::ToCheckpoint(const std::string& train_config_json) const {
  Checkpoint ckpt;
  ckpt.kind = "segment";
  json echo = {{"model", json::parse(ToJson(cfg_))}, {"train", json::parse(train_config_json)}};
  ckpt.config_json = echo.dump();
  ckpt.seed = seed_;
  ExportParams(net_->Params(), ckpt);
  return ckpt;
}

SegmentModel SegmentModel::FromCheckpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "segment") throw Error(ErrorCode::kCorruptStore, "checkpoint kind is " + ckpt.kind);
  json echo;
  try {
    echo = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCorruptStore, std::string("checkpoint config: ") + e.what());
  }
  SegmentModel model(SegmentModelConfigFromJson(echo.at("model").dump()), ckpt.seed);
  ImportParams(ckpt, model.net_->Params());
  return model;
}

Tensor<float> PackSegments(std::span<const Segment* const> segments, const SegmentModelConfig& cfg) {
  const std::size_t per = cfg.seg_frames * cfg.n_mels;
  Tensor<float> batch({segments.size(), 1, cfg.seg_frames, cfg.n_mels});
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i]->features.size() != per) {
      throw Error(ErrorCode::kShapeMismatch, "segment of " + segments[i]->utterance_id + " has wrong size");
    }
    std::copy(segments[i]->features.begin(), segments[i]->features.end(), batch.data() + i * per);
  }
  return batch;
}

std::vector<std::string> SplitValidationUtterances(const std::vector<std::pair<std::string, int>>& utterances,
                                                   double fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [id, label] : utterances) by_class[label].push_back(id);
  Rng rng(DeriveSeed(seed, "validation-split"));
  std::vector<std::string> held_out;
  for (auto& [label, ids] : by_class) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(std::span<std::string>(ids));
    auto n = static_cast<std::size_t>(fraction * static_cast<double>(ids.size()) + 0.5);
    if (n >= ids.size()) n = ids.size() - 1;  // keep every class in training
    held_out.insert(held_out.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(held_out.begin(), held_out.end());
  return held_out;
}

namespace {

LossAndAccuracy EvaluateSegments(const SegmentModel& model, std::span<const Segment* const> segments) {
  constexpr std::size_t kChunk = 512;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < segments.size(); start += kChunk) {
    const auto chunk = segments.subspan(start, std::min(kChunk, segments.size() - start));
    const auto out = model.Infer(PackSegments(chunk, model.config()));
    std::vector<int> labels(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) labels[i] = chunk[i]->label;
    loss += static_cast<double>(SoftmaxCrossEntropy(out.logits, labels, nullptr)) * static_cast<double>(chunk.size());
    const std::size_t k = out.logits.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = out.logits.data() + i * k;
      if (std::max_element(row, row + k) - row == labels[i]) ++correct;
    }
  }
  const auto n = static_cast<double>(segments.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

SegmentTrainingResult TrainSegmentModel(std::span<const Segment* const> segments, const SegmentModelConfig& mcfg,
                                        const TrainConfig& tcfg) {
  tcfg.Validate();
  std::vector<std::pair<std::string, int>> utterances;
  std::unordered_set<std::string> seen;
  std::set<int> classes;
  for (const Segment* seg : segments) {
    if (seg->label < 0 || seg->label >= mcfg.num_classes) {
      throw Error(ErrorCode::kShapeMismatch, "segment label out of range in " + seg->utterance_id);
    }
    classes.insert(seg->label);
    if (seen.insert(seg->utterance_id).second) utterances.emplace_back(seg->utterance_id, seg->label);
  }
  if (static_cast<int>(classes.size()) != mcfg.num_classes) {
    throw Error(ErrorCode::kDegenerateData, "training data covers " + std::to_string(classes.size()) + " of " +
                                                std::to_string(mcfg.num_classes) + " classes");
  }

  const auto held_out = SplitValidationUtterances(utterances, tcfg.validation_fraction, tcfg.seed);
  const std::unordered_set<std::string> held(held_out.begin(), held_out.end());
  std::vector<const Segment*> train, val;
  for (const Segment* seg : segments) (held.count(seg->utterance_id) ? val : train).push_back(seg);

  SegmentTrainingResult result{SegmentModel(mcfg, tcfg.seed), {}, {}, held_out};
  for (const auto& [id, label] : utterances) {
    if (!held.count(id)) result.train_utterances.push_back(id);
  }
  std::sort(result.train_utterances.begin(), result.train_utterances.end());

  auto& net = result.model.network();
  const auto params = net.Params();
  std::vector<const Segment*> batch;
  std::vector<int> labels;
  Tensor<float> grad;
  TrainCallbacks callbacks;
  callbacks.train_batch = [&](std::span<const std::size_t> idx) {
    batch.clear();
    labels.clear();
    for (std::size_t i : idx) {
      batch.push_back(train[i]);
      labels.push_back(train[i]->label);
    }
    const auto& logits = net.Forward(PackSegments(batch, mcfg));
    const float loss = SoftmaxCrossEntropy(logits, labels, &grad);
    net.Backward(grad);
    return static_cast<double>(loss);
  };
  if (!val.empty()) {
    callbacks.validate = [&] { return EvaluateSegments(result.model, val); };
  }
  result.log = RunTrainLoop(tcfg, train.size(), params, callbacks);
  return result;
}

std::vector<SegmentEmbedding> EmbedSegments(const SegmentModel& model, std::span<const Segment* const> segments) {
  constexpr std::size_t kChunk = 256;
  std::vector<SegmentEmbedding> out;
  out.reserve(segments.size());
  Tensor<float> probs;
  for (std::size_t start = 0; start < segments.size(); start += kChunk) {
    const auto chunk = segments.subspan(start, std::min(kChunk, segments.size() - start));
    const auto res = model.Infer(PackSegments(chunk, model.config()));
    SoftmaxRows(res.logits, probs);
    const std::size_t m = res.embeddings.dim(1), k = probs.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      SegmentEmbedding e;
      e.utterance_id = chunk[i]->utterance_id;
      e.start_frame = chunk[i]->start_frame;
      e.embedding.assign(res.embeddings.data() + i * m, res.embeddings.data() + (i + 1) * m);
      e.prob.assign(probs.data() + i * k, probs.data() + (i + 1) * k);
      out.push_back(std::move(e));
    }
  }
  return out;
}

}  // namespace segmil
