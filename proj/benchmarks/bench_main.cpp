#include <benchmark/benchmark.h>

#include "meaf/dataset.hpp"
#include "meaf/fusion.hpp"
#include "meaf/ops.hpp"
#include "meaf/random.hpp"
#include "meaf/trainer.hpp"

using namespace meaf;

static void BM_Conv2d3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  Rng rng(1);
  const auto x = random_normal<float>({1, c, side, side}, rng);
  const auto w = random_normal<float>({c, c, 3, 3}, rng, 0.1);
  const auto b = Tensor<float>({c});
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * 9LL * c * c * side * side);
}
BENCHMARK(BM_Conv2d3x3)->Args({16, 96})->Args({64, 24})->Args({160, 6})->Unit(benchmark::kMicrosecond);

static void BM_MeafForward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng(2);
  const auto p = FusionParams<float>::init(FusionConfig{}, rng);
  const auto rgb = random_uniform<float>({2, 3, side, side}, rng, 0, 1);
  const auto ir = random_uniform<float>({2, 1, side, side}, rng, 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(meaf_forward(rgb, ir, p));
}
BENCHMARK(BM_MeafForward)->Arg(64)->Arg(96)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const auto samples = generate_synthetic(SynthSpec{}, 2);
  std::vector<ImagePair> data;
  for (const auto& s : samples) data.push_back(s.pair);
  const Batch batch = make_batch(data, {0, 1});
  ModelConfig config;
  config.sr.enabled = state.range(0) != 0;
  auto model = DetectorModel<float>::init(config, 3);
  OptimizerState<float> optimizer;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, optimizer, batch, LossWeights{}));
}
BENCHMARK(BM_TrainStep)->ArgName("sr")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
