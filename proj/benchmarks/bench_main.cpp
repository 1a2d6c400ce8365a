#include <benchmark/benchmark.h>

#include <random>

#include "stict/metrics.hpp"
#include "stict/ops.hpp"
#include "stict/sanet.hpp"
#include "stict/trainer.hpp"

using namespace stict;

namespace {

Tensor<float> noise(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  const auto x = noise({4, c, size, size}, 1);
  const auto k = noise({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d<float>(x, k, nullptr, 1, 1));
  state.SetItemsProcessed(state.iterations() * 4LL * c * c * 9 * size * size);
}
BENCHMARK(BM_Conv3x3)->Args({16, 64})->Args({32, 32})->Args({64, 16});

void BM_Warp(benchmark::State& state) {
  const auto map = noise({4, 1, 64, 64}, 3);
  auto flow = noise({4, 2, 64, 64}, 4);
  for (auto& v : flow.data()) v = 4 * v - 2;
  for (auto _ : state) benchmark::DoNotOptimize(warp(map, flow));
}
BENCHMARK(BM_Warp);

void BM_SaNetForward(benchmark::State& state) {
  SaNet<float> net(ModelConfig{}, 1);
  const auto x = noise({static_cast<int>(state.range(0)), 3, 64, 64}, 5);
  for (auto _ : state) {
    Tape<float> tape(false);
    PassContext<float> ctx{tape, Domain::Labeled, NormMode::BatchStats};
    benchmark::DoNotOptimize(net.forward(ctx, x).refiner.value());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SaNetForward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_SupervisedStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.use_sc = cfg.use_tic = cfg.use_sic = false;
  TrainerState trainer(cfg);
  const LabeledBatch batch{noise({4, 3, 64, 64}, 6), Tensor<float>(Shape{4, 1, 64, 64}, 0.f)};
  for (auto _ : state) benchmark::DoNotOptimize(train_step(trainer, batch, nullptr, cfg).total);
}
BENCHMARK(BM_SupervisedStep)->Unit(benchmark::kMillisecond);

void BM_FrameMetrics(benchmark::State& state) {
  const auto pred = noise({1, 1, 64, 64}, 7);
  auto gt = noise({1, 1, 64, 64}, 8);
  for (auto& v : gt.data()) v = v > 0.7f ? 1.f : 0.f;
  for (auto _ : state) benchmark::DoNotOptimize(compute(pred, gt));
}
BENCHMARK(BM_FrameMetrics);

}  // namespace

BENCHMARK_MAIN();
