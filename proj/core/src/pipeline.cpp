#include "segmil/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"
#include "segmil/wav.hpp"

namespace segmil {

using nlohmann::json;

namespace {

// Reads `key` into `out` when present; every key of `j` must be consumed.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, where_ + " must be an object");
  }
  template <typename T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, where_ + "." + key + ": " + e.what());
    }
  }
  const json* Child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void Finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorCode::kInvalidConfig, "unknown key " + where_ + "." + k);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json TrainJson(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"decay_rate", t.decay_rate},
          {"decay_every_epochs", t.decay_every_epochs}, {"batch_size", t.batch_size},
          {"patience", t.patience}, {"max_epochs", t.max_epochs},
          {"validation_fraction", t.validation_fraction}};
}

void ReadTrain(const json& j, const std::string& where, TrainConfig& t) {
  Reader r(j, where);
  r.Get("learning_rate", t.learning_rate);
  r.Get("decay_rate", t.decay_rate);
  r.Get("decay_every_epochs", t.decay_every_epochs);
  r.Get("batch_size", t.batch_size);
  r.Get("patience", t.patience);
  r.Get("max_epochs", t.max_epochs);
  r.Get("validation_fraction", t.validation_fraction);
  r.Finish();
}

}  // namespace

void PipelineConfig::Validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); };
  if (!(max_seconds > 0.0)) fail("max_seconds must be positive");
  if (geometry.seg_frames == 0 || geometry.shift_frames == 0) fail("segment geometry must be positive");
  const std::size_t implied = MaxBagLength(max_seconds, dsp, geometry);
  if (implied != t_max) {
    fail("t_max " + std::to_string(t_max) + " is inconsistent with max_seconds " + std::to_string(max_seconds) +
         " (implies " + std::to_string(implied) + ")");
  }
  if (geometry.n_mels != static_cast<std::size_t>(dsp.n_mels)) fail("geometry.n_mels must equal dsp.n_mels");
  if (segment_model.seg_frames != geometry.seg_frames || segment_model.n_mels != geometry.n_mels) {
    fail("segment model input must match the segment geometry");
  }
  if (aggregator.input_dim != segment_model.embed_dim) fail("aggregator input_dim must equal embed_dim");
  if (inner_splits < 2) fail("inner_splits must be at least 2");
  if (threads < 1) fail("threads must be positive");
  segment_train.Validate();
  aggregator_train.Validate();
  if (forest.n_trees < 1 || forest.max_depth < 0) fail("forest configuration out of range");
}

std::string PipelineConfig::ToJson() const {
  json j;
  j["seed"] = seed;
  j["scheme"] = std::string(segmil::ToString(scheme));
  j["masked"] = masked;
  j["inner_splits"] = inner_splits;
  j["threads"] = threads;
  j["geometry"] = {{"max_seconds", max_seconds}, {"t_max", t_max}, {"seg_frames", geometry.seg_frames},
                   {"shift_frames", geometry.shift_frames}, {"n_mels", geometry.n_mels}};
  j["dsp"] = {{"sample_rate", dsp.sample_rate}, {"window_ms", dsp.window_ms}, {"hop_ms", dsp.hop_ms},
              {"nfft", dsp.nfft}, {"n_mels", dsp.n_mels}, {"fmin", dsp.fmin}, {"fmax", dsp.fmax},
              {"energy_floor", dsp.energy_floor},
              {"window", dsp.window == WindowType::kHamming ? "hamming" : "rectangular"},
              {"normalize", dsp.normalize}};
  j["segment_model"] = {{"body", segment_model.body}, {"fc_width", segment_model.fc_width},
                        {"embed_dim", segment_model.embed_dim}};
  j["aggregator"] = {{"hidden", aggregator.hidden}, {"feature_dim", aggregator.feature_dim}};
  j["segment_train"] = TrainJson(segment_train);
  j["aggregator_train"] = TrainJson(aggregator_train);
  j["forest"] = {{"n_trees", forest.n_trees}, {"max_depth", forest.max_depth},
                 {"max_features", forest.max_features}, {"min_samples_split", forest.min_samples_split}};
  return j.dump(2);
}

PipelineConfig PipelineConfig::FromJson(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("config: ") + e.what());
  }
  PipelineConfig cfg;
  Reader r(j, "config");
  r.Get("seed", cfg.seed);
  std::string scheme(segmil::ToString(cfg.scheme));
  r.Get("scheme", scheme);
  cfg.scheme = ParseFoldScheme(scheme);
  r.Get("masked", cfg.masked);
  r.Get("inner_splits", cfg.inner_splits);
  r.Get("threads", cfg.threads);
  bool t_max_given = false;
  if (const json* g = r.Child("geometry")) {
    Reader gr(*g, "geometry");
    gr.Get("max_seconds", cfg.max_seconds);
    t_max_given = g->contains("t_max");
    gr.Get("t_max", cfg.t_max);
    gr.Get("seg_frames", cfg.geometry.seg_frames);
    gr.Get("shift_frames", cfg.geometry.shift_frames);
    gr.Get("n_mels", cfg.geometry.n_mels);
    gr.Finish();
  }
  if (const json* d = r.Child("dsp")) {
    Reader dr(*d, "dsp");
    dr.Get("sample_rate", cfg.dsp.sample_rate);
    dr.Get("window_ms", cfg.dsp.window_ms);
    dr.Get("hop_ms", cfg.dsp.hop_ms);
    dr.Get("nfft", cfg.dsp.nfft);
    dr.Get("n_mels", cfg.dsp.n_mels);
    dr.Get("fmin", cfg.dsp.fmin);
    dr.Get("fmax", cfg.dsp.fmax);
    dr.Get("energy_floor", cfg.dsp.energy_floor);
    std::string window = "hamming";
    dr.Get("window", window);
    if (window == "hamming") {
      cfg.dsp.window = WindowType::kHamming;
    } else if (window == "rectangular") {
      cfg.dsp.window = WindowType::kRectangular;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "dsp.window must be hamming or rectangular");
    }
    dr.Get("normalize", cfg.dsp.normalize);
    dr.Finish();
  }
  if (const json* m = r.Child("segment_model")) {
    Reader mr(*m, "segment_model");
    mr.Get("body", cfg.segment_model.body);
    mr.Get("fc_width", cfg.segment_model.fc_width);
    mr.Get("embed_dim", cfg.segment_model.embed_dim);
    mr.Finish();
  }
  if (const json* a = r.Child("aggregator")) {
    Reader ar(*a, "aggregator");
    ar.Get("hidden", cfg.aggregator.hidden);
    ar.Get("feature_dim", cfg.aggregator.feature_dim);
    ar.Finish();
  }
  if (const json* t = r.Child("segment_train")) ReadTrain(*t, "segment_train", cfg.segment_train);
  if (const json* t = r.Child("aggregator_train")) ReadTrain(*t, "aggregator_train", cfg.aggregator_train);
  if (const json* f = r.Child("forest")) {
    Reader fr(*f, "forest");
    fr.Get("n_trees", cfg.forest.n_trees);
    fr.Get("max_depth", cfg.forest.max_depth);
    fr.Get("max_features", cfg.forest.max_features);
    fr.Get("min_samples_split", cfg.forest.min_samples_split);
    fr.Finish();
  }
  r.Finish();
  if (!t_max_given) cfg.t_max = MaxBagLength(cfg.max_seconds, cfg.dsp, cfg.geometry);
  cfg.segment_model.seg_frames = cfg.geometry.seg_frames;
  cfg.segment_model.n_mels = cfg.geometry.n_mels;
  cfg.aggregator.input_dim = cfg.segment_model.embed_dim;
  cfg.Validate();
  return cfg;
}

PipelineConfig PipelineConfig::Load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return FromJson(ss.str());
}

SegmentModelConfig PipelineConfig::SegmentModel(int num_classes) const {
  SegmentModelConfig m = segment_model;
  m.seg_frames = geometry.seg_frames;
  m.n_mels = geometry.n_mels;
  m.num_classes = num_classes;
  return m;
}

AggregatorConfig PipelineConfig::Aggregator(AggregatorKind kind, int num_classes) const {
  AggregatorConfig a = aggregator;
  a.kind = kind;
  a.input_dim = segment_model.embed_dim;
  a.num_classes = num_classes;
  a.masked = masked;
  return a;
}

TrainConfig PipelineConfig::SegmentTrain() const {
  TrainConfig t = segment_train;
  t.seed = seed;
  return t;
}

TrainConfig PipelineConfig::AggregatorTrain() const {
  TrainConfig t = aggregator_train;
  t.seed = seed;
  return t;
}

ForestConfig PipelineConfig::Forest() const {
  ForestConfig f = forest;
  f.seed = seed;
  f.threads = threads;
  return f;
}

NestedCvConfig PipelineConfig::NestedCv(int num_classes) const {
  NestedCvConfig n;
  n.model = SegmentModel(num_classes);
  n.train = SegmentTrain();
  n.inner_splits = inner_splits;
  n.threads = threads;
  return n;
}

void SetMaxSeconds(PipelineConfig& cfg, double seconds) {
  cfg.max_seconds = seconds;
  cfg.t_max = MaxBagLength(seconds, cfg.dsp, cfg.geometry);
}

// ---------------------------------------------------------------------------

MelSpectrogram FeaturizeClip(const AudioClip& clip, const PipelineConfig& cfg, const MelFilterBank& bank) {
  auto mel = ComputeLogMel(clip, cfg.dsp, bank);
  if (mel.num_frames() > FramesForDuration(cfg.max_seconds, cfg.dsp)) mel = ClampUtterance(mel, cfg.max_seconds, cfg.dsp);
  if (mel.num_frames() < cfg.geometry.seg_frames) {
    mel = PadToMinFrames(mel, cfg.geometry.seg_frames, std::log(cfg.dsp.energy_floor));
  }
  return mel;
}

std::map<std::string, MelSpectrogram> FeaturizeClips(const std::vector<AudioClip>& clips, const PipelineConfig& cfg) {
  const auto bank = BuildMelFilterBank(cfg.dsp.sample_rate, cfg.dsp.nfft, cfg.dsp.n_mels, cfg.dsp.fmin,
                                       cfg.dsp.EffectiveFmax());
  std::map<std::string, MelSpectrogram> out;
  for (const auto& clip : clips) out.emplace(clip.id, FeaturizeClip(clip, cfg, bank));
  return out;
}

std::vector<AudioClip> LoadClips(const Manifest& manifest, const std::filesystem::path& root) {
  std::vector<AudioClip> clips;
  for (const auto& r : manifest.records) {
    const std::filesystem::path p = std::filesystem::path(r.path).is_absolute() ? std::filesystem::path(r.path) : root / r.path;
    auto wav = ReadWav(p);
    AudioClip c;
    c.id = r.utterance_id;
    c.samples = std::move(wav.samples);
    c.sample_rate = wav.sample_rate;
    c.label = r.label_index;
    c.speaker = r.speaker;
    c.session = r.session;
    c.fold = r.fold;
    clips.push_back(std::move(c));
  }
  return clips;
}

SegmentTable BuildSegmentTable(const std::map<std::string, MelSpectrogram>& mels, const Manifest& manifest,
                               const PipelineConfig& cfg) {
  SegmentTable table;
  for (const auto& r : manifest.records) {
    const auto it = mels.find(r.utterance_id);
    if (it == mels.end()) throw Error(ErrorCode::kNotFound, "no features for utterance " + r.utterance_id);
    UtteranceSegments u{r.utterance_id, r.label_index, SegmentUtterance(it->second, r.label_index, cfg.geometry)};
    table.emplace(r.utterance_id, std::move(u));
  }
  return table;
}

std::map<std::string, int> LabelMap(const Manifest& manifest) {
  std::map<std::string, int> out;
  for (const auto& r : manifest.records) out.emplace(r.utterance_id, r.label_index);
  return out;
}

std::string MelRecordId(const std::string& utterance_id) { return "mel/" + utterance_id; }
std::string EmbeddingRecordId(int fold, const std::string& utterance_id) {
  return "fold" + std::to_string(fold) + "/emb/" + utterance_id;
}
std::string ProbRecordId(int fold, const std::string& utterance_id) {
  return "fold" + std::to_string(fold) + "/prob/" + utterance_id;
}

void PutMel(FeatureStore& store, const MelSpectrogram& mel) {
  Tensor<float> t({mel.num_frames(), static_cast<std::size_t>(mel.frames.cols())});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(mel.frames.data()[i]);
  store.Put(MelRecordId(mel.utterance_id), t);
}

MelSpectrogram GetMel(const FeatureStore& store, const std::string& utterance_id, double hop_s, double win_s) {
  const auto t = store.Get(MelRecordId(utterance_id));
  if (t.rank() != 2) throw Error(ErrorCode::kCorruptStore, "mel record must be 2-d");
  MelSpectrogram mel;
  mel.utterance_id = utterance_id;
  mel.frame_hop = hop_s;
  mel.window_len = win_s;
  mel.frames.resize(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t i = 0; i < t.size(); ++i) mel.frames.data()[i] = t[i];
  return mel;
}

void PutFoldEmbeddings(FeatureStore& store, const FoldEmbeddings& fe) {
  for (const auto& [id, rows] : fe.embeddings) {
    auto sorted = rows;
    std::sort(sorted.begin(), sorted.end(),
              [](const SegmentEmbedding& a, const SegmentEmbedding& b) { return a.start_frame < b.start_frame; });
    const std::size_t m = sorted.front().embedding.size(), k = sorted.front().prob.size();
    Tensor<float> emb({sorted.size(), m}), prob({sorted.size(), k});
    for (std::size_t t = 0; t < sorted.size(); ++t) {
      std::copy(sorted[t].embedding.begin(), sorted[t].embedding.end(), emb.data() + t * m);
      std::copy(sorted[t].prob.begin(), sorted[t].prob.end(), prob.data() + t * k);
    }
    store.Put(EmbeddingRecordId(fe.fold, id), emb);
    store.Put(ProbRecordId(fe.fold, id), prob);
  }
}

std::map<std::string, std::vector<SegmentEmbedding>> GetFoldEmbeddings(const FeatureStore& store, int fold,
                                                                       const std::vector<std::string>& utterances,
                                                                       const SegmentGeometry& geom) {
  std::map<std::string, std::vector<SegmentEmbedding>> out;
  for (const auto& id : utterances) {
    const auto emb = store.Get(EmbeddingRecordId(fold, id));
    const auto prob = store.Get(ProbRecordId(fold, id));
    if (emb.rank() != 2 || prob.rank() != 2 || emb.dim(0) != prob.dim(0)) {
      throw Error(ErrorCode::kCorruptStore, "embedding records of " + id + " disagree");
    }
    auto& rows = out[id];
    const std::size_t m = emb.dim(1), k = prob.dim(1);
    for (std::size_t t = 0; t < emb.dim(0); ++t) {
      SegmentEmbedding e;
      e.utterance_id = id;
      e.start_frame = t * geom.shift_frames;
      e.embedding.assign(emb.data() + t * m, emb.data() + (t + 1) * m);
      e.prob.assign(prob.data() + t * k, prob.data() + (t + 1) * k);
      rows.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<FoldBags> MakeFoldBags(const NestedCvResult& nested, const std::map<std::string, int>& labels,
                                   std::size_t t_max) {
  std::vector<FoldBags> out;
  for (const auto& fe : nested.folds) {
    FoldBags fb;
    fb.fold = fe.fold;
    fb.train = BuildBags(fe.embeddings, fe.train_utterances, labels, t_max);
    fb.test = BuildBags(fe.embeddings, fe.test_utterances, labels, t_max);
    out.push_back(std::move(fb));
  }
  return out;
}

bool IsForestKind(const std::string& kind) { return kind == "maxrf" || kind == "avgrf"; }

std::vector<std::string> AllMethodKinds() {
  return {"dsingle", "dmulti", "feature", "maxpool", "avgpool", "maxrf", "avgrf"};
}

namespace {
std::vector<const Bag*> Pointers(const std::vector<Bag>& bags) {
  std::vector<const Bag*> out;
  for (const auto& b : bags) out.push_back(&b);
  return out;
}
}  // namespace

std::vector<Prediction> RunFold(const std::string& kind, const FoldBags& fold, const PipelineConfig& cfg,
                                int num_classes) {
  std::vector<Prediction> preds;
  auto record = [&](const Bag& bag, std::vector<double> prob) {
    Prediction p;
    p.utterance_id = bag.utterance_id;
    p.fold = fold.fold;
    p.label = bag.label;
    p.predicted = ArgMax(prob);
    p.prob = std::move(prob);
    preds.push_back(std::move(p));
  };
  if (IsForestKind(kind)) {
    const auto mode = kind == "maxrf" ? EmbeddingPool::kMax : EmbeddingPool::kAvg;
    std::vector<PooledEmbedding> train;
    for (const auto& b : fold.train) train.push_back(PoolEmbeddings(b, mode));
    const auto forest = TrainForest(train, num_classes, cfg.Forest());
    for (const auto& b : fold.test) record(b, forest.Predict(PoolEmbeddings(b, mode).vector));
    return preds;
  }
  const auto acfg = cfg.Aggregator(ParseAggregatorKind(kind), num_classes);
  const auto trained = TrainAggregator(acfg, Pointers(fold.train), cfg.AggregatorTrain());
  const auto outputs = trained.model.Predict(Pointers(fold.test));
  for (std::size_t i = 0; i < fold.test.size(); ++i) record(fold.test[i], outputs[i].prob);
  return preds;
}

EvalReport RunMethod(const std::string& kind, const std::vector<FoldBags>& folds, const FoldPlan& plan,
                     const std::vector<std::string>& class_names, const PipelineConfig& cfg) {
  if (static_cast<int>(folds.size()) != plan.num_folds) {
    throw Error(ErrorCode::kFoldMismatch, std::to_string(folds.size()) + " fold datasets for a " +
                                              std::to_string(plan.num_folds) + "-fold plan");
  }
  std::vector<Prediction> all;
  for (const auto& f : folds) {
    auto p = RunFold(kind, f, cfg, static_cast<int>(class_names.size()));
    all.insert(all.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return Evaluate(plan, std::move(all), class_names, kind);
}

ExperimentResult RunExperiment(const std::vector<AudioClip>& clips, const Manifest& manifest,
                               const PipelineConfig& cfg, const std::vector<std::string>& kinds) {
  cfg.Validate();
  ExperimentResult res;
  res.plan = MakeFoldPlan(manifest, cfg.scheme);
  const auto mels = FeaturizeClips(clips, cfg);
  const auto table = BuildSegmentTable(mels, manifest, cfg);
  res.nested = NestedEmbeddingCv(res.plan, table, cfg.NestedCv(manifest.num_classes()));
  res.leaks = LeakageAudit(res.nested);
  const auto folds = MakeFoldBags(res.nested, LabelMap(manifest), cfg.t_max);
  for (const auto& kind : kinds) res.reports.emplace(kind, RunMethod(kind, folds, res.plan, manifest.classes, cfg));
  return res;
}

// ---------------------------------------------------------------------------

std::string NestedPlanToJson(const NestedPlanFile& file) {
  json j;
  j["scheme"] = std::string(segmil::ToString(file.plan.scheme));
  j["num_folds"] = file.plan.num_folds;
  j["assignment"] = file.plan.assignment;
  j["models"] = json::array();
  for (const auto& m : file.models) {
    j["models"].push_back({{"name", m.spec.name},
                           {"outer_fold", m.spec.outer_fold},
                           {"inner_split", m.spec.inner_split},
                           {"pool", m.spec.pool},
                           {"targets", m.spec.targets},
                           {"fitted", m.fitted},
                           {"best_epoch", m.log.best_epoch},
                           {"epochs", m.log.epochs.size()}});
  }
  return j.dump(1);
}

NestedPlanFile NestedPlanFromJson(const std::string& text) {
  NestedPlanFile file;
  try {
    const json j = json::parse(text);
    file.plan.scheme = ParseFoldScheme(j.at("scheme").get<std::string>());
    file.plan.num_folds = j.at("num_folds").get<int>();
    file.plan.assignment = j.at("assignment").get<std::map<std::string, int>>();
    for (const auto& m : j.at("models")) {
      ModelProvenance p;
      p.spec.name = m.at("name").get<std::string>();
      p.spec.outer_fold = m.at("outer_fold").get<int>();
      p.spec.inner_split = m.at("inner_split").get<int>();
      p.spec.pool = m.at("pool").get<std::vector<std::string>>();
      p.spec.targets = m.at("targets").get<std::vector<std::string>>();
      p.fitted = m.at("fitted").get<std::vector<std::string>>();
      p.log.best_epoch = m.at("best_epoch").get<int>();
      file.models.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("nested plan: ") + e.what());
  }
  return file;
}

std::vector<std::string> LeakageAudit(const NestedPlanFile& file) {
  std::vector<std::string> leaks;
  for (const auto& m : file.models) {
    auto fitted = m.fitted, targets = m.spec.targets;
    std::sort(fitted.begin(), fitted.end());
    std::sort(targets.begin(), targets.end());
    std::vector<std::string> both;
    std::set_intersection(fitted.begin(), fitted.end(), targets.begin(), targets.end(), std::back_inserter(both));
    for (const auto& id : both) leaks.push_back(m.spec.name + ":" + id);
    for (const auto& id : file.plan.Members(m.spec.outer_fold)) {
      if (std::binary_search(fitted.begin(), fitted.end(), id)) leaks.push_back(m.spec.name + ":" + id + " (test fold)");
    }
  }
  return leaks;
}

std::vector<TraceRow> SegmentTrace(const std::vector<SegmentEmbedding>& segments, const PipelineConfig& cfg,
                                   const TruthRecord* truth, std::size_t num_frames) {
  std::vector<bool> flags;
  if (truth) flags = OracleSegmentLabels(*truth, num_frames, cfg.dsp, cfg.geometry);
  const double hop = static_cast<double>(cfg.dsp.HopSamples()) / cfg.dsp.sample_rate;
  const double win = static_cast<double>(cfg.dsp.WindowSamples()) / cfg.dsp.sample_rate;
  std::vector<TraceRow> rows;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    TraceRow r;
    r.segment = s.start_frame / cfg.geometry.shift_frames;
    r.start_s = static_cast<double>(s.start_frame) * hop;
    r.end_s = static_cast<double>(s.start_frame + cfg.geometry.seg_frames - 1) * hop + win;
    r.prob.assign(s.prob.begin(), s.prob.end());
    if (truth) {
      if (r.segment >= flags.size()) throw Error(ErrorCode::kShapeMismatch, "segment beyond the truth geometry");
      r.witness = flags[r.segment] ? 1 : 0;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void WriteTraceCsv(std::ostream& os, const std::vector<TraceRow>& rows, const std::vector<std::string>& class_names) {
  os << "segment,start_s,end_s";
  for (const auto& c : class_names) os << ",p_" << c;
  os << ",witness\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.3f", r.segment, r.start_s, r.end_s);
    os << buf;
    for (double p : r.prob) {
      std::snprintf(buf, sizeof buf, ",%.6f", p);
      os << buf;
    }
    os << ',' << (r.witness < 0 ? std::string("") : std::to_string(r.witness)) << '\n';
  }
}

}  // namespace segmil
