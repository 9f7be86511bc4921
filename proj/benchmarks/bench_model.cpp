#include <benchmark/benchmark.h>

#include <random>

#include "spikeformer/model.hpp"
#include "spikeformer/ops.hpp"

using namespace spikeformer;

namespace {

ModelConfig toy(std::size_t blocks) {
  ModelConfig c;
  c.image_height = c.image_width = 16;
  c.sps_pool = "11";
  c.embed_dim = 64;
  c.num_heads = 4;
  c.num_blocks = blocks;
  c.num_classes = 4;
  return c;
}

Tensor<float> images(std::size_t batch) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(batch * 16 * 16);
  for (auto& x : v) x = u(rng);
  return Tensor<float>({batch, 1, 16, 16}, std::move(v));
}

void BM_Forward(benchmark::State& s) {
  Spikformer<float> m(toy(static_cast<std::size_t>(s.range(0))));
  m.init(1);
  const auto x = images(32);
  NoGradGuard g;
  for (auto _ : s) benchmark::DoNotOptimize(m.forward(x, false).values().data());
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * 32));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& s) {
  Spikformer<float> m(toy(2));
  m.init(1);
  const auto x = images(32);
  std::vector<int> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  for (auto _ : s) {
    for (auto& p : m.parameters()) p.tensor.zero_grad();
    ops::cross_entropy(m.forward(x, true), labels).backward();
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * 32));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
