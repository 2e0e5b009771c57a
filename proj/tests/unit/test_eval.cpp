#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "segmil/error.hpp"
#include "segmil/eval.hpp"
#include "segmil/rng.hpp"

namespace segmil {
namespace {

Manifest MakeManifest(int n, int k, int folds) {
  Manifest m;
  for (int c = 0; c < k; ++c) m.classes.push_back("c" + std::to_string(c));
  for (int i = 0; i < n; ++i) {
    ManifestRecord r;
    r.utterance_id = "u" + std::to_string(10000 + i);
    r.path = r.utterance_id + ".wav";
    r.label_index = i % k;
    r.label = m.classes[static_cast<std::size_t>(r.label_index)];
    r.fold = (i / k) % folds;
    r.session = "s" + std::to_string(r.fold);
    r.speaker = "spk" + std::to_string(i % 7);
    r.duration_seconds = 2.0;
    m.records.push_back(r);
  }
  return m;
}

std::map<std::string, int> Labels(const Manifest& m) {
  std::map<std::string, int> out;
  for (const auto& r : m.records) out[r.utterance_id] = r.label_index;
  return out;
}

TEST(FoldPlan, TenFoldsOf720) {
  const auto plan = MakeFoldPlan(MakeManifest(7200, 6, 10), FoldScheme::kCv10);
  EXPECT_EQ(plan.num_folds, 10);
  std::set<std::string> seen;
  for (int f = 0; f < 10; ++f) {
    const auto members = plan.Members(f);
    EXPECT_EQ(members.size(), 720u);
    EXPECT_EQ(plan.Complement(f).size(), 7200u - 720u);
    seen.insert(members.begin(), members.end());
  }
  EXPECT_EQ(seen.size(), 7200u);  // a partition
}

TEST(FoldPlan, SessionSchemeGroupsBySession) {
  auto m = MakeManifest(100, 4, 5);
  for (auto& r : m.records) r.fold = -1;
  const auto plan = MakeFoldPlan(m, FoldScheme::kSession5);
  for (const auto& r : m.records) EXPECT_EQ(plan.assignment.at(r.utterance_id), r.session[1] - '0');
}

TEST(FoldPlan, MissingFieldsAndCustomErrors) {
  auto m = MakeManifest(20, 2, 2);
  std::map<std::string, int> custom;
  for (const auto& r : m.records) custom[r.utterance_id] = r.fold;
  EXPECT_EQ(MakeFoldPlan(m, FoldScheme::kCustom, &custom).num_folds, 2);
  custom.erase(custom.begin());
  try {
    MakeFoldPlan(m, FoldScheme::kCustom, &custom);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingField);
  }
  m.records[3].session.clear();
  EXPECT_THROW(MakeFoldPlan(m, FoldScheme::kSession5), Error);
  m.records[3].fold = -1;
  EXPECT_THROW(MakeFoldPlan(m, FoldScheme::kCv10), Error);
}

TEST(FoldPlan, ReadAssignment) {
  std::istringstream is("a\t0\nb\t1\n");
  const auto a = ReadFoldAssignment(is);
  EXPECT_EQ(a.at("b"), 1);
}

TEST(AssignFolds, SpeakerStratifiedBalancesEveryStratum) {
  auto m = MakeManifest(400, 4, 1);
  AssignFolds(m, 5, FoldStrategy::kSpeakerStratified, 3);
  EXPECT_EQ(m.fold_assignment, "speaker-stratified");
  std::map<std::pair<std::string, int>, std::vector<int>> counts;
  for (const auto& r : m.records) {
    auto& c = counts[{r.speaker, r.label_index}];
    c.resize(5);
    ++c[static_cast<std::size_t>(r.fold)];
  }
  for (const auto& [key, c] : counts) {
    EXPECT_LE(*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()), 1);
  }
  auto r = MakeManifest(400, 4, 1);
  AssignFolds(r, 5, FoldStrategy::kRandom, 3);
  EXPECT_EQ(r.fold_assignment, "random");
}

TEST(UnweightedAccuracy, Examples) {
  ConfusionMatrix id(3);
  for (int k = 0; k < 3; ++k) id.Add(k, k, 5);
  EXPECT_DOUBLE_EQ(UnweightedAccuracy(id), 1.0);
  const ConfusionMatrix two(2, {8, 2, 5, 5});
  EXPECT_NEAR(UnweightedAccuracy(two), 0.65, 1e-12);
  ConfusionMatrix constant(4);
  for (int k = 0; k < 4; ++k) constant.Add(k, 2, 10);
  EXPECT_NEAR(UnweightedAccuracy(constant), 0.25, 1e-12);
  ConfusionMatrix empty(2);
  empty.Add(0, 0);
  try {
    PerClassRecall(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyClass);
  }
}

TEST(UnweightedAccuracy, UniformRandomPredictionsNearChance) {
  const int k = 4, per = 2500;
  Rng rng(1);
  ConfusionMatrix cm(k);
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per; ++i) cm.Add(c, static_cast<int>(rng.below(k)));
  }
  const double sigma = std::sqrt(0.25 * 0.75 / per) / std::sqrt(static_cast<double>(k));
  EXPECT_NEAR(UnweightedAccuracy(cm), 0.25, 3 * sigma);
}

TEST(UnweightedAccuracy, InvariantToDuplicatingOneClass) {
  ConfusionMatrix a(3, {5, 1, 0, 2, 6, 2, 0, 3, 7});
  ConfusionMatrix b(3, {15, 3, 0, 2, 6, 2, 0, 3, 7});
  EXPECT_NEAR(UnweightedAccuracy(a), UnweightedAccuracy(b), 1e-12);
}

TEST(ArgMax, LowestIndexWinsTies) {
  EXPECT_EQ(ArgMax(std::vector<double>{0.3, 0.3, 0.1}), 0);
  EXPECT_EQ(ArgMax(std::vector<double>{0.1, 0.4, 0.4}), 1);
}

std::vector<Prediction> Perfect(const Manifest& m, const FoldPlan& plan) {
  std::vector<Prediction> out;
  for (const auto& r : m.records) {
    Prediction p;
    p.utterance_id = r.utterance_id;
    p.fold = plan.assignment.at(r.utterance_id);
    p.label = r.label_index;
    p.predicted = r.label_index;
    p.prob.assign(static_cast<std::size_t>(m.num_classes()), 0.0);
    p.prob[static_cast<std::size_t>(r.label_index)] = 1.0;
    out.push_back(p);
  }
  return out;
}

TEST(Evaluate, PerfectClassifierAndCsvRoundTrip) {
  const auto m = MakeManifest(60, 3, 3);
  const auto plan = MakeFoldPlan(m, FoldScheme::kCv10);
  const auto report = Evaluate(plan, Perfect(m, plan), m.classes, "oracle");
  EXPECT_DOUBLE_EQ(report.ua, 1.0);
  EXPECT_EQ(report.folds.size(), 3u);
  for (int t = 0; t < 3; ++t) {
    for (int p = 0; p < 3; ++p) EXPECT_EQ(report.confusion.at(t, p), t == p ? 20 : 0);
  }
  std::ostringstream os;
  WriteReportCsv(os, report);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  ConfusionMatrix parsed(3);
  while (std::getline(is, line)) {
    if (line.rfind("confusion,", 0) != 0) continue;
    std::stringstream ls(line);
    std::string section, t, p, v;
    std::getline(ls, section, ',');
    std::getline(ls, t, ',');
    std::getline(ls, p, ',');
    std::getline(ls, v, ',');
    parsed.Add(t[1] - '0', p[1] - '0', std::stoll(v));
  }
  EXPECT_EQ(parsed, report.confusion);
}

TEST(Evaluate, RejectsDuplicateMissingAndMisfiledPredictions) {
  const auto m = MakeManifest(30, 3, 3);
  const auto plan = MakeFoldPlan(m, FoldScheme::kCv10);
  auto dup = Perfect(m, plan);
  dup.push_back(dup.front());
  auto missing = Perfect(m, plan);
  missing.pop_back();
  auto misfiled = Perfect(m, plan);
  misfiled[0].fold = (misfiled[0].fold + 1) % 3;
  for (auto* preds : {&dup, &missing, &misfiled}) {
    try {
      Evaluate(plan, *preds, m.classes, "x");
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFoldMismatch);
    }
  }
}

TEST(NestedCv, PlanIsLeakFreeAndCountsModels) {
  const auto m = MakeManifest(300, 3, 10);
  const auto plan = MakeFoldPlan(m, FoldScheme::kCv10);
  const auto specs = PlanNestedCv(plan, Labels(m), 5, 7);
  EXPECT_EQ(specs.size(), 10u * 6u);
  int outer = 0;
  for (const auto& s : specs) {
    if (s.inner_split < 0) ++outer;
    std::vector<std::string> both;
    std::set_intersection(s.pool.begin(), s.pool.end(), s.targets.begin(), s.targets.end(),
                          std::back_inserter(both));
    EXPECT_TRUE(both.empty()) << s.name;
    for (const auto& id : s.pool) EXPECT_NE(plan.assignment.at(id), s.outer_fold) << s.name;
  }
  EXPECT_EQ(outer, 10);
  // Inner targets of one fold partition its training utterances.
  std::multiset<std::string> targets;
  for (const auto& s : specs) {
    if (s.outer_fold == 0 && s.inner_split >= 0) targets.insert(s.targets.begin(), s.targets.end());
  }
  const auto complement = plan.Complement(0);
  EXPECT_EQ(std::vector<std::string>(targets.begin(), targets.end()), complement);
  EXPECT_EQ(PlanNestedCv(plan, Labels(m), 5, 7)[3].targets, specs[3].targets);
}

TEST(NestedCv, AuditFlagsInjectedLeaks) {
  NestedCvResult r;
  ModelProvenance p;
  p.spec.name = "fold0/outer";
  p.spec.outer_fold = 0;
  p.fitted = {"a", "b"};
  r.models.push_back(p);
  FoldEmbeddings fe;
  fe.fold = 0;
  fe.test_utterances = {"c"};
  fe.source = {{"c", "fold0/outer"}};
  r.folds.push_back(fe);
  EXPECT_TRUE(LeakageAudit(r).empty());
  r.folds[0].source["b"] = "fold0/outer";
  EXPECT_EQ(LeakageAudit(r).size(), 1u);
  r.folds[0].source.erase("b");
  r.models[0].fitted.push_back("c");
  EXPECT_FALSE(LeakageAudit(r).empty());
}

}  // namespace
}  // namespace segmil
