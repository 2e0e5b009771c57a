#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segmil/attention.hpp"
#include "segmil/bagging.hpp"
#include "segmil/dsp.hpp"
#include "segmil/eval.hpp"
#include "segmil/forest.hpp"
#include "segmil/segment_model.hpp"
#include "segmil/store.hpp"
#include "segmil/synth.hpp"

namespace segmil {

// Everything a run depends on. Serialized as JSON; a partial document
// overrides the defaults key by key and unknown keys are rejected.
struct PipelineConfig {
  double max_seconds = 2.07;
  std::size_t t_max = 29;  // must equal MaxBagLength(max_seconds)
  SegmentGeometry geometry;
  DspConfig dsp;
  SegmentModelConfig segment_model;
  AggregatorConfig aggregator;
  TrainConfig segment_train;
  TrainConfig aggregator_train;
  ForestConfig forest;
  FoldScheme scheme = FoldScheme::kCv10;
  std::uint64_t seed = 1;
  bool masked = true;
  int inner_splits = 5;
  int threads = 1;

  // kInvalidConfig on any inconsistency (T_max vs max_seconds, geometry vs
  // model input, ...). Call before doing work.
  void Validate() const;
  std::string ToJson() const;
  static PipelineConfig FromJson(const std::string& text);
  static PipelineConfig Load(const std::filesystem::path& path);

  // Sub-configs with the run seed, class count and masking flag applied.
  SegmentModelConfig SegmentModel(int num_classes) const;
  AggregatorConfig Aggregator(AggregatorKind kind, int num_classes) const;
  TrainConfig SegmentTrain() const;
  TrainConfig AggregatorTrain() const;
  ForestConfig Forest() const;
  NestedCvConfig NestedCv(int num_classes) const;
};

// Sets the max_seconds/t_max pair consistently.
void SetMaxSeconds(PipelineConfig& cfg, double seconds);

// Log-Mel of one clip, truncated to max_seconds and padded (with the log
// floor) up to one segment when shorter.
MelSpectrogram FeaturizeClip(const AudioClip& clip, const PipelineConfig& cfg, const MelFilterBank& bank);
std::map<std::string, MelSpectrogram> FeaturizeClips(const std::vector<AudioClip>& clips, const PipelineConfig& cfg);
// Reads the manifest's WAV files (paths relative to `root`).
std::vector<AudioClip> LoadClips(const Manifest& manifest, const std::filesystem::path& root);

SegmentTable BuildSegmentTable(const std::map<std::string, MelSpectrogram>& mels, const Manifest& manifest,
                               const PipelineConfig& cfg);

std::map<std::string, int> LabelMap(const Manifest& manifest);

// Store record names.
std::string MelRecordId(const std::string& utterance_id);
std::string EmbeddingRecordId(int fold, const std::string& utterance_id);
std::string ProbRecordId(int fold, const std::string& utterance_id);
void PutMel(FeatureStore& store, const MelSpectrogram& mel);
MelSpectrogram GetMel(const FeatureStore& store, const std::string& utterance_id, double hop_s, double win_s);
void PutFoldEmbeddings(FeatureStore& store, const FoldEmbeddings& fe);
// Rebuilds embeddings (and segment probabilities) of one fold from a store.
std::map<std::string, std::vector<SegmentEmbedding>> GetFoldEmbeddings(const FeatureStore& store, int fold,
                                                                       const std::vector<std::string>& utterances,
                                                                       const SegmentGeometry& geom);

// Per-fold bags: training bags come from inner models, test bags from the outer model.
struct FoldBags {
  int fold = 0;
  std::vector<Bag> train;
  std::vector<Bag> test;
};
std::vector<FoldBags> MakeFoldBags(const NestedCvResult& nested, const std::map<std::string, int>& labels,
                                   std::size_t t_max);

// Utterance-level methods: the five aggregators plus "maxrf" / "avgrf".
bool IsForestKind(const std::string& kind);
std::vector<std::string> AllMethodKinds();

// Trains `kind` on fold.train and predicts fold.test.
std::vector<Prediction> RunFold(const std::string& kind, const FoldBags& fold, const PipelineConfig& cfg,
                                int num_classes);
EvalReport RunMethod(const std::string& kind, const std::vector<FoldBags>& folds, const FoldPlan& plan,
                     const std::vector<std::string>& class_names, const PipelineConfig& cfg);

struct ExperimentResult {
  FoldPlan plan;
  NestedCvResult nested;
  std::vector<std::string> leaks;
  std::map<std::string, EvalReport> reports;
};

// Featurize -> nested CV embeddings -> per-fold training of every kind -> reports.
ExperimentResult RunExperiment(const std::vector<AudioClip>& clips, const Manifest& manifest,
                               const PipelineConfig& cfg, const std::vector<std::string>& kinds);

// Nested-CV plan and model provenance as written by train-segments.
struct NestedPlanFile {
  FoldPlan plan;
  std::vector<ModelProvenance> models;
};
std::string NestedPlanToJson(const NestedPlanFile& file);
NestedPlanFile NestedPlanFromJson(const std::string& text);
// What each model fitted must be disjoint from what it embeds and from its
// outer fold's test utterances.
std::vector<std::string> LeakageAudit(const NestedPlanFile& file);

// One row per segment of an utterance.
struct TraceRow {
  std::size_t segment = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<double> prob;
  int witness = -1;  // 1 / 0 with truth, -1 without
};
std::vector<TraceRow> SegmentTrace(const std::vector<SegmentEmbedding>& segments, const PipelineConfig& cfg,
                                   const TruthRecord* truth, std::size_t num_frames);
void WriteTraceCsv(std::ostream& os, const std::vector<TraceRow>& rows, const std::vector<std::string>& class_names);

}  // namespace segmil
