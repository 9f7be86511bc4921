#include <benchmark/benchmark.h>

#include <random>

#include "spikeformer/attention.hpp"
#include "spikeformer/binary_matmul.hpp"
#include "spikeformer/neuron.hpp"
#include "spikeformer/ops.hpp"

using namespace spikeformer;

namespace {

Tensor<float> spikes(Shape shape, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(rate);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = b(rng) ? 1.0f : 0.0f;
  return Tensor<float>(std::move(shape), std::move(v));
}

Tensor<float> normal(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

// Q K^T on N x d spike matrices: packed AND/popcount vs dense float GEMM.
void BM_PackedQkT(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(0)), d = static_cast<std::size_t>(s.range(1));
  auto q = spikes({n, d}, 0.15, 1), k = spikes({n, d}, 0.15, 2);
  for (auto _ : s) {
    auto out = binary::and_popcount_nt(binary::BitMatrix::pack<float>(q.values(), n, d),
                                       binary::BitMatrix::pack<float>(k.values(), n, d));
    benchmark::DoNotOptimize(out.data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * n * n * d));
}
BENCHMARK(BM_PackedQkT)->Args({64, 32})->Args({196, 64})->Args({196, 384});

void BM_DenseQkT(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(0)), d = static_cast<std::size_t>(s.range(1));
  auto q = spikes({n, d}, 0.15, 1), k = spikes({n, d}, 0.15, 2);
  NoGradGuard g;
  for (auto _ : s) {
    auto out = ops::matmul(q, k, ops::Transpose::No, ops::Transpose::Yes);
    benchmark::DoNotOptimize(out.values().data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * n * n * d));
}
BENCHMARK(BM_DenseQkT)->Args({64, 32})->Args({196, 64})->Args({196, 384});

void BM_QktvOrder(benchmark::State& s) {
  const auto n = static_cast<std::size_t>(s.range(0));
  const auto order = s.range(1) ? AttentionOrder::KvFirst : AttentionOrder::QkFirst;
  auto q = spikes({8, n, 48}, 0.15, 1), k = spikes({8, n, 48}, 0.15, 2),
       v = spikes({8, n, 48}, 0.15, 3);
  NoGradGuard g;
  for (auto _ : s) benchmark::DoNotOptimize(qktv_product(q, k, v, order).values().data());
}
BENCHMARK(BM_QktvOrder)->Args({64, 0})->Args({64, 1})->Args({196, 0})->Args({196, 1});

void BM_Conv2d(benchmark::State& s) {
  const auto c = static_cast<std::size_t>(s.range(0));
  auto x = normal({8, c, 16, 16}, 4), w = normal({2 * c, c, 3, 3}, 5);
  NoGradGuard g;
  for (auto _ : s) benchmark::DoNotOptimize(ops::conv2d(x, w).values().data());
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(32)->Arg(64);

void BM_Lif(benchmark::State& s) {
  const auto t = static_cast<std::size_t>(s.range(0));
  auto x = normal({t, 32 * 64 * 64}, 6);
  LifParams p;
  NoGradGuard g;
  for (auto _ : s) benchmark::DoNotOptimize(lif_forward(x, p).values().data());
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * x.size()));
}
BENCHMARK(BM_Lif)->Arg(1)->Arg(4);

}  // namespace
