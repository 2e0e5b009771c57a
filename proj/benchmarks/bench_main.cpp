#include <benchmark/benchmark.h>

#include <vector>

#include "segmil/attention.hpp"
#include "segmil/dsp.hpp"
#include "segmil/forest.hpp"
#include "segmil/rng.hpp"
#include "segmil/segment_model.hpp"

namespace segmil {
namespace {

std::vector<double> Noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.uniform(-0.5, 0.5);
  return x;
}

Bag RandomBag(Rng& rng, std::size_t len, std::size_t max_len, std::size_t dim) {
  Bag b;
  b.utterance_id = "b";
  b.max_len = max_len;
  b.dim = dim;
  b.true_length = len;
  b.label = 0;
  b.embeddings.assign(max_len * dim, 0.0f);
  b.mask.assign(max_len, false);
  for (std::size_t t = 0; t < len; ++t) {
    b.mask[t] = true;
    for (std::size_t d = 0; d < dim; ++d) b.embeddings[t * dim + d] = static_cast<float>(rng.normal());
  }
  return b;
}

void BM_StftPower(benchmark::State& state) {
  const auto x = Noise(static_cast<std::size_t>(16000 * 2.07), 1);
  for (auto _ : state) benchmark::DoNotOptimize(StftPower(x, 16000, 25.0, 10.0, 512));
}
BENCHMARK(BM_StftPower)->Unit(benchmark::kMicrosecond);

void BM_LogMelClip(benchmark::State& state) {
  AudioClip clip;
  clip.id = "c";
  clip.sample_rate = 16000;
  clip.samples = Noise(static_cast<std::size_t>(16000 * 2.07), 2);
  DspConfig cfg;
  const auto bank = BuildMelFilterBank(16000, cfg.nfft, cfg.n_mels, cfg.fmin, cfg.EffectiveFmax());
  for (auto _ : state) benchmark::DoNotOptimize(ComputeLogMel(clip, cfg, bank));
}
BENCHMARK(BM_LogMelClip)->Unit(benchmark::kMicrosecond);

void BM_SegmentCnnInfer(benchmark::State& state) {
  SegmentModelConfig cfg;
  SegmentModel model(cfg, 1);
  const auto b = static_cast<std::size_t>(state.range(0));
  Tensor<float> batch({b, 1, cfg.seg_frames, cfg.n_mels});
  Rng rng(3);
  for (auto& v : batch.values()) v = static_cast<float>(rng.normal());
  for (auto _ : state) benchmark::DoNotOptimize(model.Infer(batch));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(b));
}
BENCHMARK(BM_SegmentCnnInfer)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_AggregatorPredict(benchmark::State& state) {
  AggregatorConfig cfg;
  cfg.kind = static_cast<AggregatorKind>(state.range(0));
  AggregatorModel model(cfg, 1);
  Rng rng(4);
  std::vector<Bag> bags;
  for (int i = 0; i < 64; ++i) bags.push_back(RandomBag(rng, 10 + rng.below(20), 29, cfg.input_dim));
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  for (auto _ : state) benchmark::DoNotOptimize(model.Predict(ptrs));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_AggregatorPredict)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

std::vector<PooledEmbedding> ForestData(std::size_t n, std::size_t dim, int k) {
  Rng rng(5);
  std::vector<PooledEmbedding> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i].label = static_cast<int>(i % static_cast<std::size_t>(k));
    data[i].vector.resize(dim);
    for (auto& v : data[i].vector) v = rng.normal() + 0.5 * data[i].label;
  }
  return data;
}

void BM_ForestTrain(benchmark::State& state) {
  const auto data = ForestData(480, 64, 4);
  ForestConfig cfg;
  cfg.n_trees = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(TrainForest(data, 4, cfg));
}
BENCHMARK(BM_ForestTrain)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_ForestPredict(benchmark::State& state) {
  const auto data = ForestData(480, 64, 4);
  const auto forest = TrainForest(data, 4, ForestConfig{});
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(forest.Predict(data[i++ % data.size()].vector));
}
BENCHMARK(BM_ForestPredict)->Unit(benchmark::kMicrosecond);

}  // namespace
}  // namespace segmil

BENCHMARK_MAIN();
