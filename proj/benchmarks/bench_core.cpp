#include <benchmark/benchmark.h>

#include "face/meta.hpp"

using namespace face;

namespace {

Corpus bench_corpus(const ModelConfig& cfg, int per_class, uint64_t seed) {
  auto sets = data::synth_generate(2, per_class, cfg.classes, cfg.channels, cfg.bands, 1.0f, seed);
  auto map = cfg.channels == 62 ? data::ElectrodeMap::standard62()
                                : data::ElectrodeMap::dense(cfg.channels);
  return Corpus::build(std::move(sets), std::move(map), cfg.grid);
}

void bench_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  std::mt19937_64 rng(0);
  auto a = ad::constant(Tensor::randn({n, n}, rng));
  auto b = ad::constant(Tensor::randn({n, n}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(a, b)->value.at(0));
}
BENCHMARK(bench_matmul)->Arg(64)->Arg(256);

void bench_forward(benchmark::State& state) {
  ModelConfig cfg;  // full default dimensions
  auto corpus = bench_corpus(cfg, 8, 1);
  FaceModel model(cfg, 0);
  Batch batch = corpus.make_batch(0, {0, 1, 2, 3, 4, 5, 6, 7});
  auto pm = model.leaf_map();
  for (auto _ : state)
    benchmark::DoNotOptimize(model.forward(batch, pm, nn::BnMode::Infer)->value.at(0));
}
BENCHMARK(bench_forward)->Unit(benchmark::kMillisecond);

void bench_inner_update(benchmark::State& state) {
  ModelConfig cfg;
  cfg.channels = 16;
  cfg.bands = 3;
  cfg.grid = 16;
  cfg.conv_filters = 8;
  cfg.head_dim = 8;
  cfg.adapter_bottleneck = 16;
  auto corpus = bench_corpus(cfg, 8, 2);
  FaceModel model(cfg, 0);
  Batch support = corpus.make_batch(0, {0, 8, 16, 1, 9, 17});
  const bool second_order = state.range(0) != 0;
  for (auto _ : state) {
    auto pm = meta::inner_update(model, model.leaf_map(), support, 0.01f, 2, second_order, 0.1f);
    benchmark::DoNotOptimize(pm);
  }
}
BENCHMARK(bench_inner_update)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
