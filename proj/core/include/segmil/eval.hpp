#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segmil/bagging.hpp"
#include "segmil/segment_model.hpp"
#include "segmil/store.hpp"

namespace segmil {

// cv10: leave-one-fold-out over the manifest fold field (any fold count);
// session5: leave-one-session-out; custom: an explicit assignment.
enum class FoldScheme { kCv10, kSession5, kCustom };

std::string_view ToString(FoldScheme scheme);
FoldScheme ParseFoldScheme(std::string_view name);

struct FoldPlan {
  FoldScheme scheme = FoldScheme::kCv10;
  int num_folds = 0;
  std::map<std::string, int> assignment;  // utterance_id -> fold

  std::vector<std::string> Members(int fold) const;     // sorted
  std::vector<std::string> Complement(int fold) const;  // sorted
};

// kMissingField when the scheme needs a field the manifest lacks, or a custom
// assignment misses an utterance.
FoldPlan MakeFoldPlan(const Manifest& manifest, FoldScheme scheme,
                      const std::map<std::string, int>* custom = nullptr);

// "utterance_id <TAB> fold" lines.
std::map<std::string, int> ReadFoldAssignment(std::istream& is);

enum class FoldStrategy { kRandom, kSpeakerStratified };
// Fills the fold field and records the strategy in manifest.fold_assignment.
// Speaker-stratified deals each (speaker, label) stratum round-robin so every
// fold gets a near-equal share of every speaker and class.
void AssignFolds(Manifest& manifest, int n_folds, FoldStrategy strategy, std::uint64_t seed);

// ---------------------------------------------------------------------------

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0)
      : k_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {}
  ConfusionMatrix(int num_classes, std::vector<long long> counts);

  void Add(int truth, int predicted, long long n = 1);
  long long at(int truth, int predicted) const {
    return counts_[static_cast<std::size_t>(truth * k_ + predicted)];
  }
  long long RowTotal(int truth) const;
  long long total() const;
  int num_classes() const { return k_; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int k_;
  std::vector<long long> counts_;  // rows = true class, columns = predicted
};

// kEmptyClass when a class has no true instance.
std::vector<double> PerClassRecall(const ConfusionMatrix& cm);
double UnweightedAccuracy(const ConfusionMatrix& cm);
// Lowest index wins ties.
int ArgMax(std::span<const double> values);

struct Prediction {
  std::string utterance_id;
  int fold = -1;
  int label = -1;
  int predicted = -1;
  std::vector<double> prob;
};

struct FoldSummary {
  int fold = 0;
  long long count = 0;
  double ua = 0.0;  // over the classes present in this fold
};

struct EvalReport {
  std::string kind;
  std::vector<std::string> class_names;
  ConfusionMatrix confusion;
  double ua = 0.0;  // on the pooled confusion matrix
  std::vector<double> recall;
  std::vector<FoldSummary> folds;
  std::vector<Prediction> predictions;  // sorted by utterance_id
};

// Pools per-fold predictions. kFoldMismatch if an utterance is predicted
// twice, missing, or tagged with a fold other than its plan fold.
EvalReport Evaluate(const FoldPlan& plan, std::vector<Prediction> predictions,
                    const std::vector<std::string>& class_names, const std::string& kind);

// CSV: confusion counts, recalls, UA, per-fold UA.
void WriteReportCsv(std::ostream& os, const EvalReport& report);
// key=value lines.
void WriteReportText(std::ostream& os, const EvalReport& report);
void WritePredictionsCsv(std::ostream& os, const EvalReport& report);

// ---------------------------------------------------------------------------
// Nested CV for leakage-free embeddings. For every outer fold i the
// remaining utterances are split into inner parts; each part is embedded by a
// segment model trained on the other parts, and fold i by a model trained on
// all of them.

struct UtteranceSegments {
  std::string utterance_id;
  int label = -1;
  std::vector<Segment> segments;
};
using SegmentTable = std::map<std::string, UtteranceSegments>;

struct NestedModelSpec {
  std::string name;  // "fold3/outer", "fold3/inner1"
  int outer_fold = 0;
  int inner_split = -1;  // -1 for the outer model
  std::vector<std::string> pool;     // utterances available for fitting (train + validation)
  std::vector<std::string> targets;  // utterances this model embeds
};

// Inner splits are label-stratified and seeded per outer fold.
std::vector<NestedModelSpec> PlanNestedCv(const FoldPlan& plan, const std::map<std::string, int>& labels,
                                          int inner_splits, std::uint64_t seed);

struct NestedCvConfig {
  SegmentModelConfig model;
  TrainConfig train;
  int inner_splits = 5;
  int threads = 1;  // outer folds trained concurrently
};

struct ModelProvenance {
  NestedModelSpec spec;
  std::vector<std::string> fitted;  // train + validation utterances actually used
  TrainLog log;
};

struct FoldEmbeddings {
  int fold = 0;
  std::vector<std::string> train_utterances;  // embedded by inner models
  std::vector<std::string> test_utterances;   // embedded by the outer model
  std::map<std::string, std::vector<SegmentEmbedding>> embeddings;
  std::map<std::string, std::string> source;  // utterance -> model name
};

struct NestedCvResult {
  std::vector<FoldEmbeddings> folds;
  std::vector<ModelProvenance> models;
};

// Trains one planned model on its pool.
SegmentTrainingResult TrainPlannedModel(const NestedModelSpec& spec, const SegmentTable& table,
                                        const NestedCvConfig& cfg);
ModelProvenance MakeProvenance(const NestedModelSpec& spec, const SegmentTrainingResult& trained);
std::map<std::string, std::vector<SegmentEmbedding>> EmbedTargets(const SegmentModel& model,
                                                                  const std::vector<std::string>& targets,
                                                                  const SegmentTable& table);

// Trains one planned model and embeds its targets.
std::pair<SegmentTrainingResult, std::map<std::string, std::vector<SegmentEmbedding>>> TrainNestedModel(
    const NestedModelSpec& spec, const SegmentTable& table, const NestedCvConfig& cfg);

using ModelCallback = std::function<void(const NestedModelSpec&, const SegmentTrainingResult&)>;

NestedCvResult NestedEmbeddingCv(const FoldPlan& plan, const SegmentTable& table, const NestedCvConfig& cfg,
                                 const ModelCallback& on_model = {});

// Utterances embedded by a model that fitted them, or fitted by any model of
// the fold that tests them; empty on a clean run.
std::vector<std::string> LeakageAudit(const NestedCvResult& result);

// Stacks per-utterance embeddings into bags of length max_len.
std::vector<Bag> BuildBags(const std::map<std::string, std::vector<SegmentEmbedding>>& embeddings,
                           const std::vector<std::string>& utterances, const std::map<std::string, int>& labels,
                           std::size_t max_len);

}  // namespace segmil
