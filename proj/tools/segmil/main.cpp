#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "provenance.hpp"
#include "segmil/attention.hpp"
#include "segmil/checkpoint.hpp"
#include "segmil/error.hpp"
#include "segmil/eval.hpp"
#include "segmil/forest.hpp"
#include "segmil/pipeline.hpp"
#include "segmil/store.hpp"
#include "segmil/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace segmil::cli {
namespace {

// Name of the step currently running; reported when a command fails.
std::string g_stage = "startup";

void Stage(std::string name) { g_stage = std::move(name); }

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string scheme;
  bool mask = false;
  bool unmasked = false;
  bool force = false;
};

void AddCommon(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON pipeline config (partial documents override defaults)");
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--scheme", o.scheme, "Fold scheme")->check(CLI::IsMember({"cv10", "session5", "custom"}));
  auto* m = cmd->add_flag("--mask", o.mask, "Ignore padded bag rows");
  auto* u = cmd->add_flag("--unmasked", o.unmasked, "Let padded zero rows take part in pooling");
  m->excludes(u);
  cmd->add_flag("--force", o.force, "Overwrite existing outputs");
}

std::string ReadText(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !(os << text)) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
}

// Refuses to clobber an existing output unless --force was given.
void GuardOutput(const fs::path& path, bool force) {
  Stage("output");
  if (fs::exists(path) && !force) {
    throw Error(ErrorCode::kIoError, path.string() + " exists; pass --force to overwrite");
  }
}

void GuardOutputDir(const fs::path& dir, bool force) {
  Stage("output");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw Error(ErrorCode::kIoError, dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

// Resolves the config: explicit --config, else `fallback` when it exists,
// else defaults; then command-line overrides; then validation.
PipelineConfig ResolveConfig(const CommonOptions& o, ProvenanceLog& log, const fs::path& fallback = {}) {
  Stage("config");
  PipelineConfig cfg;
  if (!o.config.empty()) {
    cfg = PipelineConfig::Load(o.config);
    log.Input("config", o.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = PipelineConfig::Load(fallback);
    log.Input("config", fallback);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.scheme.empty()) cfg.scheme = ParseFoldScheme(o.scheme);
  if (o.mask) cfg.masked = true;
  if (o.unmasked) cfg.masked = false;
  cfg.Validate();
  log.Note("config", json::parse(cfg.ToJson()).dump());
  return cfg;
}

// Everything train-segments leaves behind for the later stages.
struct ModelsDir {
  fs::path dir;
  PipelineConfig config;
  Manifest manifest;
  NestedPlanFile plan;

  fs::path ConfigPath() const { return dir / "config.json"; }
  fs::path ManifestPath() const { return dir / "manifest.tsv"; }
  fs::path PlanPath() const { return dir / "plan.json"; }
  fs::path Checkpoint(const std::string& model_name) const { return dir / (model_name + ".mils"); }
};

ModelsDir LoadModelsDir(const fs::path& dir, const CommonOptions& o, ProvenanceLog& log) {
  ModelsDir m;
  m.dir = dir;
  m.config = ResolveConfig(o, log, m.ConfigPath());
  Stage("load-models");
  m.manifest = ReadManifest(m.ManifestPath());
  log.Input("manifest", m.ManifestPath());
  m.plan = NestedPlanFromJson(ReadText(m.PlanPath()));
  log.Input("plan", m.PlanPath());
  return m;
}

std::vector<const Bag*> Pointers(const std::vector<Bag>& bags) {
  std::vector<const Bag*> out;
  for (const auto& b : bags) out.push_back(&b);
  return out;
}

std::vector<Bag> LoadBags(const FeatureStore& store, const ModelsDir& m, int fold,
                          const std::vector<std::string>& ids) {
  const auto emb = GetFoldEmbeddings(store, fold, ids, m.config.geometry);
  return BuildBags(emb, ids, LabelMap(m.manifest), m.config.t_max);
}

std::string FoldName(int f) { return "fold" + std::to_string(f); }

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  SynthSpec spec;
};

int CmdSynth(SynthOptions& so, const CommonOptions& o) {
  ProvenanceLog log("synth");
  if (o.seed) so.spec.seed = *o.seed;
  Stage("synth/validate");
  so.spec.Validate();
  const fs::path out = so.out;
  GuardOutputDir(out, o.force);
  log.Note("spec", json{{"n_classes", so.spec.n_classes},
                        {"n_utterances", so.spec.n_utterances},
                        {"utterance_seconds", so.spec.utterance_seconds},
                        {"witness_density", so.spec.witness_density},
                        {"snr_db", so.spec.snr_db},
                        {"seed", so.spec.seed},
                        {"n_folds", so.spec.n_folds}}
                       .dump());
  Stage("synth/generate");
  const auto corpus = GenerateCorpus(so.spec);
  Stage("synth/write");
  WriteCorpus(corpus, out);
  log.Note("utterances", std::to_string(corpus.clips.size()));
  log.Write(out / "synth.log");
  return 0;
}

struct FeaturizeOptions {
  std::string manifest;
  std::string store;
};

int CmdFeaturize(const FeaturizeOptions& fo, const CommonOptions& o) {
  ProvenanceLog log("featurize");
  const auto cfg = ResolveConfig(o, log);
  Stage("featurize/manifest");
  const fs::path manifest_path = fo.manifest;
  const auto manifest = ReadManifest(manifest_path);
  log.Input("manifest", manifest_path);
  GuardOutput(fo.store, o.force);
  Stage("featurize/read-wav");
  const auto clips = LoadClips(manifest, manifest_path.parent_path());
  Stage("featurize/log-mel");
  const auto mels = FeaturizeClips(clips, cfg);
  Stage("featurize/store");
  {
    FeatureStore store(fo.store, FeatureStore::Mode::kCreate);
    for (const auto& [id, mel] : mels) PutMel(store, mel);
    store.Commit();
  }
  log.Note("records", std::to_string(mels.size()));
  log.Write(fs::path(fo.store).concat(".log"));
  return 0;
}

struct TrainSegmentsOptions {
  std::string manifest;
  std::string store;
  std::string out;
  std::string folds;
};

int CmdTrainSegments(const TrainSegmentsOptions& to, const CommonOptions& o) {
  ProvenanceLog log("train-segments");
  auto cfg = ResolveConfig(o, log);
  Stage("train-segments/plan");
  const fs::path manifest_path = to.manifest;
  const auto manifest = ReadManifest(manifest_path);
  log.Input("manifest", manifest_path);
  std::optional<std::map<std::string, int>> custom;
  if (cfg.scheme == FoldScheme::kCustom) {
    if (to.folds.empty()) throw Error(ErrorCode::kMissingField, "--scheme custom needs --folds");
    std::ifstream is(to.folds);
    if (!is) throw Error(ErrorCode::kIoError, "cannot read " + to.folds);
    custom = ReadFoldAssignment(is);
    log.Input("folds", to.folds);
  }
  const auto plan = MakeFoldPlan(manifest, cfg.scheme, custom ? &*custom : nullptr);
  const int num_classes = manifest.num_classes();
  const auto labels = LabelMap(manifest);
  const auto specs = PlanNestedCv(plan, labels, cfg.inner_splits, cfg.seed);

  const fs::path out = to.out;
  GuardOutputDir(out, o.force);

  Stage("train-segments/load-mels");
  log.Input("store", to.store);
  std::map<std::string, MelSpectrogram> mels;
  {
    FeatureStore store(to.store, FeatureStore::Mode::kRead);
    const double hop = static_cast<double>(cfg.dsp.HopSamples()) / cfg.dsp.sample_rate;
    const double win = static_cast<double>(cfg.dsp.WindowSamples()) / cfg.dsp.sample_rate;
    for (const auto& r : manifest.records) mels.emplace(r.utterance_id, GetMel(store, r.utterance_id, hop, win));
  }
  const auto table = BuildSegmentTable(mels, manifest, cfg);
  const auto ncfg = cfg.NestedCv(num_classes);

  NestedPlanFile file;
  file.plan = plan;
  for (const auto& spec : specs) {
    Stage("train-segments/" + spec.name);
    const auto trained = TrainPlannedModel(spec, table, ncfg);
    const fs::path ckpt = out / (spec.name + ".mils");
    fs::create_directories(ckpt.parent_path());
    SaveCheckpoint(ckpt, trained.model.ToCheckpoint(cfg.ToJson()));
    file.models.push_back(MakeProvenance(spec, trained));
    log.Note("model." + spec.name, "best_epoch=" + std::to_string(trained.log.best_epoch) +
                                       " epochs=" + std::to_string(trained.log.epochs.size()));
  }

  Stage("train-segments/leakage-audit");
  const auto leaks = LeakageAudit(file);
  for (const auto& l : leaks) log.Note("leak", l);
  if (!leaks.empty()) throw Error(ErrorCode::kFoldMismatch, std::to_string(leaks.size()) + " leaked utterances");
  log.Note("leakage_audit", "clean");

  Stage("train-segments/write");
  WriteText(out / "config.json", cfg.ToJson());
  WriteText(out / "plan.json", NestedPlanToJson(file));
  WriteManifest(out / "manifest.tsv", manifest);
  log.Write(out / "train-segments.log");
  return 0;
}

struct EmbedOptions {
  std::string models;
  std::string store;
  std::string out;
};

int CmdEmbed(const EmbedOptions& eo, const CommonOptions& o) {
  ProvenanceLog log("embed");
  const auto m = LoadModelsDir(eo.models, o, log);
  GuardOutput(eo.out, o.force);
  Stage("embed/load-mels");
  log.Input("store", eo.store);
  std::map<std::string, MelSpectrogram> mels;
  {
    FeatureStore store(eo.store, FeatureStore::Mode::kRead);
    const double hop = static_cast<double>(m.config.dsp.HopSamples()) / m.config.dsp.sample_rate;
    const double win = static_cast<double>(m.config.dsp.WindowSamples()) / m.config.dsp.sample_rate;
    for (const auto& r : m.manifest.records) {
      mels.emplace(r.utterance_id, GetMel(store, r.utterance_id, hop, win));
    }
  }
  const auto table = BuildSegmentTable(mels, m.manifest, m.config);

  std::vector<std::string> leaks = LeakageAudit(m.plan);
  if (!leaks.empty()) throw Error(ErrorCode::kFoldMismatch, "plan fails the leakage audit: " + leaks.front());

  FeatureStore out(eo.out, FeatureStore::Mode::kCreate);
  for (int f = 0; f < m.plan.plan.num_folds; ++f) {
    FoldEmbeddings fe;
    fe.fold = f;
    for (const auto& prov : m.plan.models) {
      if (prov.spec.outer_fold != f) continue;
      Stage("embed/" + prov.spec.name);
      const auto ckpt_path = m.Checkpoint(prov.spec.name);
      log.Input(prov.spec.name, ckpt_path);
      const auto model = SegmentModel::FromCheckpoint(LoadCheckpoint(ckpt_path));
      auto emb = EmbedTargets(model, prov.spec.targets, table);
      auto& dest = prov.spec.inner_split < 0 ? fe.test_utterances : fe.train_utterances;
      dest.insert(dest.end(), prov.spec.targets.begin(), prov.spec.targets.end());
      for (auto& [id, rows] : emb) fe.embeddings[id] = std::move(rows);
    }
    Stage("embed/store-" + FoldName(f));
    PutFoldEmbeddings(out, fe);
  }
  out.Commit();
  log.Write(fs::path(eo.out).concat(".log"));
  return 0;
}

struct TrainAttentionOptions {
  std::string kind;
  std::string models;
  std::string store;
  std::string out;
};

int CmdTrainAttention(const TrainAttentionOptions& ta, const CommonOptions& o) {
  ProvenanceLog log("train-attention");
  const auto m = LoadModelsDir(ta.models, o, log);
  const int num_classes = m.manifest.num_classes();
  const fs::path out = ta.out;
  GuardOutputDir(out, o.force);
  log.Input("store", ta.store);
  log.Note("kind", ta.kind);
  FeatureStore store(ta.store, FeatureStore::Mode::kRead);
  for (int f = 0; f < m.plan.plan.num_folds; ++f) {
    Stage("train-attention/" + FoldName(f) + "/bags");
    const auto train = LoadBags(store, m, f, m.plan.plan.Complement(f));
    const auto test = LoadBags(store, m, f, m.plan.plan.Members(f));
    Stage("train-attention/" + FoldName(f) + "/fit");
    if (IsForestKind(ta.kind)) {
      const auto mode = ta.kind == "maxrf" ? EmbeddingPool::kMax : EmbeddingPool::kAvg;
      std::vector<PooledEmbedding> pooled;
      for (const auto& b : train) pooled.push_back(PoolEmbeddings(b, mode));
      SaveForest(out / (FoldName(f) + ".milr"), TrainForest(pooled, num_classes, m.config.Forest()));
    } else {
      const auto acfg = m.config.Aggregator(ParseAggregatorKind(ta.kind), num_classes);
      const auto trained = TrainAggregator(acfg, Pointers(train), m.config.AggregatorTrain());
      SaveCheckpoint(out / (FoldName(f) + ".mils"), trained.model.ToCheckpoint(m.config.ToJson()));
      std::ofstream os(out / ("attention_" + FoldName(f) + ".csv"));
      WriteAttentionCsv(os, trained.model, Pointers(test));
      if (!os) throw Error(ErrorCode::kIoError, "cannot write attention weights");
      log.Note(FoldName(f) + ".best_epoch", std::to_string(trained.log.best_epoch));
    }
  }
  WriteText(out / "method.json", json{{"kind", ta.kind}}.dump() + "\n");
  log.Write(out / "train-attention.log");
  return 0;
}

struct EvaluateOptions {
  std::string models;
  std::string store;
  std::string attention;
  std::string out;
};

int CmdEvaluate(const EvaluateOptions& eo, const CommonOptions& o) {
  ProvenanceLog log("evaluate");
  const auto m = LoadModelsDir(eo.models, o, log);
  const fs::path att = eo.attention;
  const auto kind = json::parse(ReadText(att / "method.json")).at("kind").get<std::string>();
  log.Note("kind", kind);
  const fs::path out = eo.out;
  GuardOutputDir(out, o.force);
  log.Input("store", eo.store);
  FeatureStore store(eo.store, FeatureStore::Mode::kRead);
  std::vector<Prediction> preds;
  for (int f = 0; f < m.plan.plan.num_folds; ++f) {
    Stage("evaluate/" + FoldName(f));
    const auto test = LoadBags(store, m, f, m.plan.plan.Members(f));
    std::vector<std::vector<double>> probs;
    if (IsForestKind(kind)) {
      const auto path = att / (FoldName(f) + ".milr");
      log.Input(FoldName(f), path);
      const auto forest = LoadForest(path);
      const auto mode = kind == "maxrf" ? EmbeddingPool::kMax : EmbeddingPool::kAvg;
      for (const auto& b : test) probs.push_back(forest.Predict(PoolEmbeddings(b, mode).vector));
    } else {
      const auto path = att / (FoldName(f) + ".mils");
      log.Input(FoldName(f), path);
      const auto model = AggregatorModel::FromCheckpoint(LoadCheckpoint(path));
      for (auto& out_row : model.Predict(Pointers(test))) probs.push_back(std::move(out_row.prob));
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      Prediction p;
      p.utterance_id = test[i].utterance_id;
      p.fold = f;
      p.label = test[i].label;
      p.predicted = ArgMax(probs[i]);
      p.prob = std::move(probs[i]);
      preds.push_back(std::move(p));
    }
  }
  Stage("evaluate/report");
  const auto report = Evaluate(m.plan.plan, std::move(preds), m.manifest.classes, kind);
  std::ostringstream csv, text, pred;
  WriteReportCsv(csv, report);
  WriteReportText(text, report);
  WritePredictionsCsv(pred, report);
  WriteText(out / "report.csv", csv.str());
  WriteText(out / "report.txt", text.str());
  WriteText(out / "predictions.csv", pred.str());
  log.Note("ua", std::to_string(report.ua));
  log.Write(out / "evaluate.log");
  std::cout << text.str();
  return 0;
}

struct ReportOptions {
  std::string utterance;
  std::string models;
  std::string store;
  std::string truth;
  std::string out;
};

int CmdReport(const ReportOptions& ro, const CommonOptions& o) {
  ProvenanceLog log("report");
  const auto m = LoadModelsDir(ro.models, o, log);
  Stage("report/lookup");
  const auto it = m.plan.plan.assignment.find(ro.utterance);
  if (it == m.plan.plan.assignment.end()) throw Error(ErrorCode::kNotFound, "utterance " + ro.utterance);
  const int fold = it->second;
  GuardOutput(ro.out, o.force);
  log.Input("store", ro.store);
  FeatureStore store(ro.store, FeatureStore::Mode::kRead);
  // Probabilities from the outer model of the utterance's own fold: never fitted on it.
  const auto emb = GetFoldEmbeddings(store, fold, {ro.utterance}, m.config.geometry);
  const auto& rows = emb.at(ro.utterance);
  const std::size_t num_frames = (rows.size() - 1) * m.config.geometry.shift_frames + m.config.geometry.seg_frames;
  std::optional<SynthTruth> truth;
  const TruthRecord* record = nullptr;
  if (!ro.truth.empty()) {
    Stage("report/truth");
    truth = ReadTruth(fs::path(ro.truth));
    log.Input("truth", ro.truth);
    record = &truth->Find(ro.utterance);
  }
  Stage("report/trace");
  const auto trace = SegmentTrace(rows, m.config, record, num_frames);
  std::ostringstream os;
  WriteTraceCsv(os, trace, m.manifest.classes);
  WriteText(ro.out, os.str());
  log.Note("fold", std::to_string(fold));
  log.Write(fs::path(ro.out).concat(".log"));
  return 0;
}

}  // namespace
}  // namespace segmil::cli

int main(int argc, char** argv) {
  using namespace segmil::cli;
  CLI::App app{"segmil: segment-level multiple-instance learning for utterance classification"};
  app.require_subcommand(1);
  CommonOptions common;

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known witness spans");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--n-utterances", so.spec.n_utterances, "Utterance count");
  synth->add_option("--classes", so.spec.n_classes, "Class count");
  synth->add_option("--density", so.spec.witness_density, "Witness density in (0, 1]");
  synth->add_option("--snr", so.spec.snr_db, "Chord SNR in dB");
  synth->add_option("--seconds", so.spec.utterance_seconds, "Utterance length");
  synth->add_option("--folds", so.spec.n_folds, "Fold count written to the manifest");
  AddCommon(synth, common);

  FeaturizeOptions fo;
  auto* featurize = app.add_subcommand("featurize", "WAV files to a log-Mel feature store");
  featurize->add_option("--manifest", fo.manifest, "Manifest TSV")->required();
  featurize->add_option("--store", fo.store, "Feature store to create")->required();
  AddCommon(featurize, common);

  TrainSegmentsOptions to;
  auto* train_segments = app.add_subcommand("train-segments", "Nested-CV segment model training");
  train_segments->add_option("--manifest", to.manifest, "Manifest TSV")->required();
  train_segments->add_option("--store", to.store, "Log-Mel feature store")->required();
  train_segments->add_option("--out", to.out, "Models directory")->required();
  train_segments->add_option("--folds", to.folds, "utterance<TAB>fold file for --scheme custom");
  AddCommon(train_segments, common);

  EmbedOptions eo;
  auto* embed = app.add_subcommand("embed", "Embed every utterance with its leakage-free segment model");
  embed->add_option("--models", eo.models, "Models directory")->required();
  embed->add_option("--store", eo.store, "Log-Mel feature store")->required();
  embed->add_option("--out", eo.out, "Bag store to create")->required();
  AddCommon(embed, common);

  TrainAttentionOptions ta;
  auto* train_attention = app.add_subcommand("train-attention", "Per-fold utterance-level training");
  train_attention->add_option("--kind", ta.kind, "Method")
      ->required()
      ->check(CLI::IsMember({"dsingle", "dmulti", "feature", "maxpool", "avgpool", "maxrf", "avgrf"}));
  train_attention->add_option("--models", ta.models, "Models directory")->required();
  train_attention->add_option("--store", ta.store, "Bag store")->required();
  train_attention->add_option("--out", ta.out, "Output directory")->required();
  AddCommon(train_attention, common);

  EvaluateOptions ev;
  auto* evaluate = app.add_subcommand("evaluate", "Pooled cross-validation report");
  evaluate->add_option("--models", ev.models, "Models directory")->required();
  evaluate->add_option("--store", ev.store, "Bag store")->required();
  evaluate->add_option("--attention", ev.attention, "train-attention output directory")->required();
  evaluate->add_option("--out", ev.out, "Report directory")->required();
  AddCommon(evaluate, common);

  ReportOptions ro;
  auto* report = app.add_subcommand("report", "Per-segment probability trace of one utterance");
  report->add_option("--utterance", ro.utterance, "Utterance id")->required();
  report->add_option("--models", ro.models, "Models directory")->required();
  report->add_option("--store", ro.store, "Bag store")->required();
  report->add_option("--truth", ro.truth, "Synthetic truth TSV (adds a witness column)");
  report->add_option("--out", ro.out, "Trace CSV")->required();
  AddCommon(report, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return CmdSynth(so, common);
    if (*featurize) return CmdFeaturize(fo, common);
    if (*train_segments) return CmdTrainSegments(to, common);
    if (*embed) return CmdEmbed(eo, common);
    if (*train_attention) return CmdTrainAttention(ta, common);
    if (*evaluate) return CmdEvaluate(ev, common);
    if (*report) return CmdReport(ro, common);
  } catch (const std::exception& e) {
    std::cerr << "segmil: stage " << g_stage << " failed: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
