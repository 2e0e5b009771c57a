#include "segmil/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "segmil/rng.hpp"

namespace segmil {

std::string_view ToString(FoldScheme scheme) {
  switch (scheme) {
    case FoldScheme::kCv10: return "cv10";
    case FoldScheme::kSession5: return "session5";
    case FoldScheme::kCustom: return "custom";
  }
  return "unknown";
}

FoldScheme ParseFoldScheme(std::string_view name) {
  for (auto s : {FoldScheme::kCv10, FoldScheme::kSession5, FoldScheme::kCustom}) {
    if (ToString(s) == name) return s;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown fold scheme '" + std::string(name) + "'");
}

std::vector<std::string> FoldPlan::Members(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldPlan::Complement(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : assignment) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

namespace {

// Maps arbitrary fold keys onto 0..n-1 in sorted key order.
template <typename Key>
FoldPlan DensePlan(FoldScheme scheme, const std::map<std::string, Key>& raw) {
  std::set<Key> keys;
  for (const auto& [id, k] : raw) keys.insert(k);
  std::map<Key, int> dense;
  for (const auto& k : keys) dense.emplace(k, static_cast<int>(dense.size()));
  FoldPlan plan;
  plan.scheme = scheme;
  plan.num_folds = static_cast<int>(dense.size());
  for (const auto& [id, k] : raw) plan.assignment.emplace(id, dense.at(k));
  return plan;
}

}  // namespace

FoldPlan MakeFoldPlan(const Manifest& manifest, FoldScheme scheme, const std::map<std::string, int>* custom) {
  FoldPlan plan;
  switch (scheme) {
    case FoldScheme::kCv10: {
      std::map<std::string, int> raw;
      for (const auto& r : manifest.records) {
        if (r.fold < 0) throw Error(ErrorCode::kMissingField, "utterance " + r.utterance_id + " has no fold");
        raw.emplace(r.utterance_id, r.fold);
      }
      plan = DensePlan(scheme, raw);
      break;
    }
    case FoldScheme::kSession5: {
      std::map<std::string, std::string> raw;
      for (const auto& r : manifest.records) {
        if (r.session.empty()) throw Error(ErrorCode::kMissingField, "utterance " + r.utterance_id + " has no session");
        raw.emplace(r.utterance_id, r.session);
      }
      plan = DensePlan(scheme, raw);
      break;
    }
    case FoldScheme::kCustom: {
      if (!custom) throw Error(ErrorCode::kMissingField, "custom scheme needs a fold assignment");
      std::map<std::string, int> raw;
      for (const auto& r : manifest.records) {
        const auto it = custom->find(r.utterance_id);
        if (it == custom->end()) {
          throw Error(ErrorCode::kMissingField, "custom plan does not assign utterance " + r.utterance_id);
        }
        if (it->second < 0) throw Error(ErrorCode::kInvalidRange, "negative fold for " + r.utterance_id);
        raw.emplace(r.utterance_id, it->second);
      }
      if (raw.size() != custom->size()) {
        throw Error(ErrorCode::kFoldMismatch, "custom plan names utterances absent from the manifest");
      }
      plan = DensePlan(scheme, raw);
      break;
    }
  }
  if (plan.num_folds < 2) throw Error(ErrorCode::kInvalidConfig, "a fold plan needs at least 2 folds");
  return plan;
}

std::map<std::string, int> ReadFoldAssignment(std::istream& is) {
  std::map<std::string, int> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    int fold = -1;
    const char* begin = line.data() + (tab == std::string::npos ? line.size() : tab + 1);
    const auto [ptr, ec] = std::from_chars(begin, line.data() + line.size(), fold);
    if (tab == std::string::npos || ec != std::errc() || ptr != line.data() + line.size()) {
      throw Error(ErrorCode::kParseError, "fold assignment line " + std::to_string(lineno) + ": expected id<TAB>fold");
    }
    if (!out.emplace(line.substr(0, tab), fold).second) {
      throw Error(ErrorCode::kDuplicateId, "fold assignment line " + std::to_string(lineno) + ": repeated id");
    }
  }
  return out;
}

void AssignFolds(Manifest& manifest, int n_folds, FoldStrategy strategy, std::uint64_t seed) {
  if (n_folds < 2) throw Error(ErrorCode::kInvalidConfig, "need at least 2 folds");
  Rng rng(DeriveSeed(seed, "fold-assignment"));
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    const auto key = strategy == FoldStrategy::kRandom ? std::make_pair(std::string(), 0)
                                                       : std::make_pair(r.speaker, r.label_index);
    strata[key].push_back(i);
  }
  int next = 0;
  for (auto& [key, idx] : strata) {
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i : idx) {
      manifest.records[i].fold = next;
      next = (next + 1) % n_folds;
    }
  }
  manifest.fold_assignment = strategy == FoldStrategy::kRandom ? "random" : "speaker-stratified";
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(int num_classes, std::vector<long long> counts)
    : k_(num_classes), counts_(std::move(counts)) {
  if (counts_.size() != static_cast<std::size_t>(k_ * k_)) throw Error(ErrorCode::kShapeMismatch, "counts must be K x K");
  for (auto c : counts_) {
    if (c < 0) throw Error(ErrorCode::kInvalidRange, "negative confusion count");
  }
}

void ConfusionMatrix::Add(int truth, int predicted, long long n) {
  if (truth < 0 || truth >= k_ || predicted < 0 || predicted >= k_) {
    throw Error(ErrorCode::kInvalidRange, "class index out of range");
  }
  counts_[static_cast<std::size_t>(truth * k_ + predicted)] += n;
}

long long ConfusionMatrix::RowTotal(int truth) const {
  long long s = 0;
  for (int j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

long long ConfusionMatrix::total() const {
  long long s = 0;
  for (auto c : counts_) s += c;
  return s;
}

std::vector<double> PerClassRecall(const ConfusionMatrix& cm) {
  std::vector<double> out;
  for (int k = 0; k < cm.num_classes(); ++k) {
    const long long n = cm.RowTotal(k);
    if (n == 0) throw Error(ErrorCode::kEmptyClass, "class " + std::to_string(k) + " has no true instance");
    out.push_back(static_cast<double>(cm.at(k, k)) / static_cast<double>(n));
  }
  return out;
}

double UnweightedAccuracy(const ConfusionMatrix& cm) {
  const auto recall = PerClassRecall(cm);
  if (recall.empty()) throw Error(ErrorCode::kEmptyClass, "no classes");
  double s = 0.0;
  for (double r : recall) s += r;
  return s / static_cast<double>(recall.size());
}

int ArgMax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kShapeMismatch, "argmax of an empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

EvalReport Evaluate(const FoldPlan& plan, std::vector<Prediction> predictions,
                    const std::vector<std::string>& class_names, const std::string& kind) {
  const int k = static_cast<int>(class_names.size());
  std::sort(predictions.begin(), predictions.end(),
            [](const Prediction& a, const Prediction& b) { return a.utterance_id < b.utterance_id; });
  EvalReport report;
  report.kind = kind;
  report.class_names = class_names;
  report.confusion = ConfusionMatrix(k);
  std::vector<ConfusionMatrix> per_fold(static_cast<std::size_t>(plan.num_folds), ConfusionMatrix(k));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (i > 0 && predictions[i - 1].utterance_id == p.utterance_id) {
      throw Error(ErrorCode::kFoldMismatch, "utterance " + p.utterance_id + " predicted twice");
    }
    const auto it = plan.assignment.find(p.utterance_id);
    if (it == plan.assignment.end() || it->second != p.fold) {
      throw Error(ErrorCode::kFoldMismatch, "prediction for " + p.utterance_id + " does not match its plan fold");
    }
    report.confusion.Add(p.label, p.predicted);
    per_fold[static_cast<std::size_t>(p.fold)].Add(p.label, p.predicted);
  }
  if (predictions.size() != plan.assignment.size()) {
    throw Error(ErrorCode::kFoldMismatch, std::to_string(plan.assignment.size() - predictions.size()) +
                                              " planned utterances have no prediction");
  }
  report.recall = PerClassRecall(report.confusion);
  report.ua = UnweightedAccuracy(report.confusion);
  for (int f = 0; f < plan.num_folds; ++f) {
    const auto& cm = per_fold[static_cast<std::size_t>(f)];
    FoldSummary s{f, cm.total(), 0.0};
    int present = 0;
    for (int c = 0; c < k; ++c) {
      if (cm.RowTotal(c) == 0) continue;
      ++present;
      s.ua += static_cast<double>(cm.at(c, c)) / static_cast<double>(cm.RowTotal(c));
    }
    s.ua = present ? s.ua / present : 0.0;
    report.folds.push_back(s);
  }
  report.predictions = std::move(predictions);
  return report;
}

namespace {
std::string Fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

void WriteReportCsv(std::ostream& os, const EvalReport& r) {
  const int k = r.confusion.num_classes();
  os << "section,true,predicted,value\n";
  for (int t = 0; t < k; ++t) {
    for (int p = 0; p < k; ++p) {
      os << "confusion," << r.class_names[static_cast<std::size_t>(t)] << ','
         << r.class_names[static_cast<std::size_t>(p)] << ',' << r.confusion.at(t, p) << '\n';
    }
  }
  for (int t = 0; t < k; ++t) {
    os << "recall," << r.class_names[static_cast<std::size_t>(t)] << ",," << Fixed(r.recall[static_cast<std::size_t>(t)])
       << '\n';
  }
  os << "ua,,," << Fixed(r.ua) << '\n';
  for (const auto& f : r.folds) os << "fold_ua," << f.fold << ",," << Fixed(f.ua) << '\n';
}

void WriteReportText(std::ostream& os, const EvalReport& r) {
  os << "kind=" << r.kind << '\n';
  os << "classes=" << r.class_names.size() << '\n';
  os << "utterances=" << r.confusion.total() << '\n';
  os << "ua=" << Fixed(r.ua) << '\n';
  for (std::size_t c = 0; c < r.recall.size(); ++c) os << "recall." << r.class_names[c] << '=' << Fixed(r.recall[c]) << '\n';
  for (const auto& f : r.folds) {
    os << "fold." << f.fold << ".count=" << f.count << '\n';
    os << "fold." << f.fold << ".ua=" << Fixed(f.ua) << '\n';
  }
  const int k = r.confusion.num_classes();
  for (int t = 0; t < k; ++t) {
    os << "confusion." << r.class_names[static_cast<std::size_t>(t)] << '=';
    for (int p = 0; p < k; ++p) os << (p ? "," : "") << r.confusion.at(t, p);
    os << '\n';
  }
}

void WritePredictionsCsv(std::ostream& os, const EvalReport& r) {
  os << "utterance_id,fold,label,predicted";
  for (const auto& c : r.class_names) os << ",p_" << c;
  os << '\n';
  for (const auto& p : r.predictions) {
    os << p.utterance_id << ',' << p.fold << ',' << p.label << ',' << p.predicted;
    for (double v : p.prob) os << ',' << Fixed(v);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<NestedModelSpec> PlanNestedCv(const FoldPlan& plan, const std::map<std::string, int>& labels,
                                          int inner_splits, std::uint64_t seed) {
  if (inner_splits < 2) throw Error(ErrorCode::kInvalidConfig, "inner CV needs at least 2 splits");
  std::vector<NestedModelSpec> specs;
  for (int f = 0; f < plan.num_folds; ++f) {
    const auto rest = plan.Complement(f);
    std::map<int, std::vector<std::string>> by_class;
    for (const auto& id : rest) {
      const auto it = labels.find(id);
      if (it == labels.end()) throw Error(ErrorCode::kMissingField, "no label for " + id);
      by_class[it->second].push_back(id);
    }
    Rng rng(DeriveSeed(seed, "inner-split-" + std::to_string(f)));
    std::vector<std::vector<std::string>> parts(static_cast<std::size_t>(inner_splits));
    std::size_t next = 0;
    for (auto& [label, ids] : by_class) {
      rng.shuffle(std::span<std::string>(ids));
      for (auto& id : ids) {
        parts[next].push_back(id);
        next = (next + 1) % parts.size();
      }
    }
    for (int j = 0; j < inner_splits; ++j) {
      NestedModelSpec s;
      s.name = "fold" + std::to_string(f) + "/inner" + std::to_string(j);
      s.outer_fold = f;
      s.inner_split = j;
      for (int o = 0; o < inner_splits; ++o) {
        if (o != j) s.pool.insert(s.pool.end(), parts[static_cast<std::size_t>(o)].begin(), parts[static_cast<std::size_t>(o)].end());
      }
      s.targets = parts[static_cast<std::size_t>(j)];
      std::sort(s.pool.begin(), s.pool.end());
      std::sort(s.targets.begin(), s.targets.end());
      specs.push_back(std::move(s));
    }
    NestedModelSpec outer;
    outer.name = "fold" + std::to_string(f) + "/outer";
    outer.outer_fold = f;
    outer.pool = rest;
    outer.targets = plan.Members(f);
    specs.push_back(std::move(outer));
  }
  return specs;
}

namespace {
std::vector<const Segment*> Gather(const std::vector<std::string>& ids, const SegmentTable& table) {
  std::vector<const Segment*> out;
  for (const auto& id : ids) {
    const auto it = table.find(id);
    if (it == table.end()) throw Error(ErrorCode::kNotFound, "no segments for utterance " + id);
    for (const auto& s : it->second.segments) out.push_back(&s);
  }
  return out;
}
}  // namespace

SegmentTrainingResult TrainPlannedModel(const NestedModelSpec& spec, const SegmentTable& table,
                                        const NestedCvConfig& cfg) {
  return TrainSegmentModel(Gather(spec.pool, table), cfg.model, cfg.train);
}

ModelProvenance MakeProvenance(const NestedModelSpec& spec, const SegmentTrainingResult& trained) {
  ModelProvenance prov{spec, trained.train_utterances, trained.log};
  prov.fitted.insert(prov.fitted.end(), trained.validation_utterances.begin(), trained.validation_utterances.end());
  std::sort(prov.fitted.begin(), prov.fitted.end());
  return prov;
}

std::map<std::string, std::vector<SegmentEmbedding>> EmbedTargets(const SegmentModel& model,
                                                                  const std::vector<std::string>& targets,
                                                                  const SegmentTable& table) {
  std::map<std::string, std::vector<SegmentEmbedding>> embedded;
  for (auto& e : EmbedSegments(model, Gather(targets, table))) embedded[e.utterance_id].push_back(std::move(e));
  return embedded;
}

std::pair<SegmentTrainingResult, std::map<std::string, std::vector<SegmentEmbedding>>> TrainNestedModel(
    const NestedModelSpec& spec, const SegmentTable& table, const NestedCvConfig& cfg) {
  auto result = TrainPlannedModel(spec, table, cfg);
  auto embedded = EmbedTargets(result.model, spec.targets, table);
  return {std::move(result), std::move(embedded)};
}

NestedCvResult NestedEmbeddingCv(const FoldPlan& plan, const SegmentTable& table, const NestedCvConfig& cfg,
                                 const ModelCallback& on_model) {
  std::map<std::string, int> labels;
  for (const auto& [id, u] : table) labels.emplace(id, u.label);
  const auto specs = PlanNestedCv(plan, labels, cfg.inner_splits, cfg.train.seed);

  NestedCvResult result;
  result.folds.resize(static_cast<std::size_t>(plan.num_folds));
  result.models.resize(specs.size());
  for (int f = 0; f < plan.num_folds; ++f) {
    auto& fe = result.folds[static_cast<std::size_t>(f)];
    fe.fold = f;
    fe.train_utterances = plan.Complement(f);
    fe.test_utterances = plan.Members(f);
  }

  std::mutex mu;
  auto run_fold = [&](int f) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (specs[i].outer_fold != f) continue;
      auto [trained, embedded] = TrainNestedModel(specs[i], table, cfg);
      auto prov = MakeProvenance(specs[i], trained);
      std::lock_guard lock(mu);
      if (on_model) on_model(specs[i], trained);
      auto& fe = result.folds[static_cast<std::size_t>(f)];
      for (auto& [id, e] : embedded) {
        fe.source[id] = specs[i].name;
        fe.embeddings[id] = std::move(e);
      }
      result.models[i] = std::move(prov);
    }
  };
  if (cfg.threads <= 1) {
    for (int f = 0; f < plan.num_folds; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.threads));
    {
      std::vector<std::jthread> pool;
      for (int t = 0; t < cfg.threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (int f = next++; f < plan.num_folds; f = next++) run_fold(f);
          } catch (...) {
            errors[static_cast<std::size_t>(t)] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return result;
}

std::vector<std::string> LeakageAudit(const NestedCvResult& result) {
  std::map<std::string, const ModelProvenance*> by_name;
  for (const auto& m : result.models) by_name[m.spec.name] = &m;
  std::vector<std::string> leaks;
  for (const auto& fe : result.folds) {
    for (const auto& [id, model] : fe.source) {
      const auto it = by_name.find(model);
      if (it == by_name.end()) {
        leaks.push_back("fold" + std::to_string(fe.fold) + ":" + id + " (unknown model " + model + ")");
        continue;
      }
      const auto& fitted = it->second->fitted;
      if (std::binary_search(fitted.begin(), fitted.end(), id)) {
        leaks.push_back("fold" + std::to_string(fe.fold) + ":" + id + " embedded by " + model);
      }
    }
    // No model of this fold may have fitted the fold's test utterances.
    for (const auto& m : result.models) {
      if (m.spec.outer_fold != fe.fold) continue;
      for (const auto& id : fe.test_utterances) {
        if (std::binary_search(m.fitted.begin(), m.fitted.end(), id)) {
          leaks.push_back("fold" + std::to_string(fe.fold) + ":" + id + " fitted by " + m.spec.name);
        }
      }
    }
  }
  return leaks;
}

std::vector<Bag> BuildBags(const std::map<std::string, std::vector<SegmentEmbedding>>& embeddings,
                           const std::vector<std::string>& utterances, const std::map<std::string, int>& labels,
                           std::size_t max_len) {
  std::vector<Bag> bags;
  bags.reserve(utterances.size());
  for (const auto& id : utterances) {
    const auto it = embeddings.find(id);
    if (it == embeddings.end()) throw Error(ErrorCode::kNotFound, "no embeddings for utterance " + id);
    auto rows = it->second;
    std::sort(rows.begin(), rows.end(),
              [](const SegmentEmbedding& a, const SegmentEmbedding& b) { return a.start_frame < b.start_frame; });
    std::vector<std::vector<float>> vecs;
    for (auto& r : rows) vecs.push_back(std::move(r.embedding));
    const auto lab = labels.find(id);
    if (lab == labels.end()) throw Error(ErrorCode::kMissingField, "no label for " + id);
    bags.push_back(AssembleBag(id, vecs, lab->second, max_len));
  }
  return bags;
}

}  // namespace segmil
