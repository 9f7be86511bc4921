#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <random>

#include "oracles.hpp"
#include "spikeformer/data.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/model.hpp"
#include "spikeformer/profiler.hpp"

using namespace spikeformer;

namespace {

ModelConfig small(AttentionVariant variant = AttentionVariant::Ssa) {
  ModelConfig c;
  c.time_steps = 2;
  c.image_height = c.image_width = 8;
  c.sps_pool = "1";
  c.embed_dim = 16;
  c.num_heads = 2;
  c.num_blocks = 1;
  c.mlp_ratio = 2;
  c.num_classes = 4;
  c.attention = variant;
  return c;
}

Dataset shapes(std::size_t count, std::uint64_t seed = 3) {
  SynthConfig s;
  s.size = 8;
  s.count = count;
  s.seed = seed;
  return synth_shapes(s);
}

void widen(Spikformer<float>& m, double std, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : m.parameters()) {
    if (p.tensor.rank() < 2) continue;
    auto t = p.tensor;
    nn::truncated_normal_(t, std, rng);
  }
}

}  // namespace

TEST(CountFlops, LinearAndConvFormulas) {
  LayerDescriptor lin;
  lin.kind = LayerKind::Linear;
  lin.linear = {64, 10, 1};
  EXPECT_EQ(count_flops(lin), 640u);
  LayerDescriptor conv;
  conv.kind = LayerKind::Conv;
  conv.conv = {3, 48, 3, 224, 224};
  EXPECT_EQ(count_flops(conv), 48ull * 3 * 9 * 224 * 224);
  LayerDescriptor att;
  att.kind = LayerKind::Attention;
  att.attention = {196, 64, 8, AttentionOrder::KvFirst, AttentionVariant::Ssa};
  EXPECT_EQ(count_flops(att), 2ull * 196 * 64 * 64 * 8);
  LayerDescriptor bn;
  bn.kind = LayerKind::BatchNorm;
  EXPECT_THROW(count_flops(bn), InstrumentationError);
}

TEST(CountSops, RateTimesStepsTimesFlops) {
  EXPECT_EQ(count_sops(0.25, 4, 1000), 1000u);
  EXPECT_EQ(count_sops(0.0, 4, 1000), 0u);
  EXPECT_THROW(count_sops(1.5, 4, 1000), InstrumentationError);
  EXPECT_THROW(count_sops(-0.1, 4, 1000), InstrumentationError);
  EXPECT_EQ(count_sops(1, 4, 4, 1000), 1000u);
  EXPECT_EQ(count_sops(1, 3, 1, 10), 3u);  // floor(10/3)
  EXPECT_THROW(count_sops(5, 4, 1, 10), InstrumentationError);
}

TEST(Energy, UnitArithmetic) {
  EnergyConstants k;
  EXPECT_EQ(k.mac_fj(), 4600);
  EXPECT_EQ(k.ac_fj(), 900);
  EXPECT_EQ(format_fj_as_uj(77'000'000LL * k.mac_fj()), "354.2");
  EXPECT_EQ(format_fj_as_uj(1'000'000LL * k.ac_fj()), "0.9");
  EXPECT_EQ(format_fj_as_pj(4600), "4.600");
  EXPECT_EQ(format_fj_as_pj(-1), "-0.001");
  EXPECT_EQ(format_fj_as_uj(0), "0.0");
}

TEST(Profiler, ZeroWeightModelIsSilentAfterTheStem) {
  Spikformer<float> m(small());
  auto probe = firing_rate_probe(m, shapes(8), 4);
  for (const auto& r : probe.rates.layers) {
    if (r.layer.rfind("sps.", 0) == 0) continue;
    EXPECT_EQ(r.spikes, 0u) << r.layer;
  }
  for (const auto& row : probe.energy.layers) {
    if (row.layer.rfind("sps.", 0) == 0 || row.billing == Billing::Mac) continue;
    EXPECT_EQ(row.sops, 0u) << row.layer;
  }
}

TEST(Profiler, RatesAreBoundedAndNeuronsBinary) {
  Spikformer<float> m(small());
  m.init(5);
  widen(m, 0.4, 6);
  auto probe = firing_rate_probe(m, shapes(16), 5);
  ASSERT_FALSE(probe.rates.layers.empty());
  for (const auto& r : probe.rates.layers) {
    EXPECT_GE(r.rate(), 0.0);
    EXPECT_LE(r.rate(), 1.0);
    EXPECT_EQ(r.non_binary, 0u) << r.layer;
  }
  ASSERT_NE(probe.rates.find("blocks.0.attn.q_lif"), nullptr);
  for (const auto& row : probe.energy.layers) {
    EXPECT_GE(row.fr, 0.0);
    EXPECT_LE(row.fr, 1.0);
  }
}

TEST(Profiler, EstimateEqualsCountedAccumulates) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Spikformer<float> m(small());
    m.init(seed);
    widen(m, 0.3 + 0.1 * static_cast<double>(seed), seed + 100);
    auto probe = firing_rate_probe(m, shapes(7 + seed, seed), 3);
    std::size_t checked = 0;
    for (const auto& row : probe.energy.layers) {
      if (row.billing != Billing::Ac || row.kind == LayerKind::Conv) continue;
      EXPECT_EQ(row.sops, row.counted_sops) << row.layer;
      ++checked;
    }
    EXPECT_GE(checked, 3u);  // attention, fc1, fc2
  }
}

TEST(Profiler, RowsSumToTotalsAndSnnBeatsAnn) {
  Spikformer<float> m(small());
  m.init(7);
  widen(m, 0.3, 8);
  auto probe = firing_rate_probe(m, shapes(12), 6);
  std::int64_t sum = 0;
  std::uint64_t ops = 0;
  for (const auto& row : probe.energy.layers) {
    sum += row.energy_fj;
    ops += row.billed_ops;
  }
  EXPECT_EQ(sum, energy_snn(probe.energy));
  EXPECT_EQ(ops, probe.energy.total_ops());
  EXPECT_LT(energy_snn(probe.energy), energy_ann(probe.energy));
  const auto csv = profile_csv(probe.energy);
  EXPECT_EQ(csv.rfind("layer,kind,flops,sops,fr,energy_pj\n", 0), 0u);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')),
            probe.energy.layers.size() + 1);
}

TEST(Profiler, StemAndHeadAreBilledPerMac) {
  Spikformer<float> m(small());
  m.init(9);
  auto probe = firing_rate_probe(m, shapes(4), 4);
  for (const auto& row : probe.energy.layers) {
    const bool mac = row.layer == "sps.0.conv" || row.layer == "head";
    EXPECT_EQ(row.billing == Billing::Mac, mac) << row.layer;
    if (mac) {
      EXPECT_EQ(row.billed_ops, row.flops) << row.layer;
    }
  }
}

TEST(Profiler, SsaCostsFewerOpsThanSoftmax) {
  auto run = [](AttentionVariant v) {
    Spikformer<float> m(small(v));
    m.init(11);
    widen(m, 0.3, 12);
    auto probe = firing_rate_probe(m, shapes(8), 8);
    for (const auto& row : probe.energy.layers)
      if (row.kind == LayerKind::Attention) return row.billed_ops;
    return std::uint64_t{0};
  };
  EXPECT_LT(run(AttentionVariant::Ssa), run(AttentionVariant::VsaSpikeV));
}

TEST(Profiler, SopsScaleLinearlyWithSteps) {
  // Same spike pattern repeated over twice the steps doubles the count.
  LayerDescriptor lin;
  lin.name = "fc";
  lin.kind = LayerKind::Linear;
  lin.linear = {4, 3, 2};
  std::mt19937_64 rng(13);
  auto one = oracle::rand_binary<float>({1, 1, 2, 4}, 0.5, rng);
  auto two = Tensor<float>(Shape{2, 1, 2, 4}, [&] {
    std::vector<float> v(one.values().begin(), one.values().end());
    v.insert(v.end(), one.values().begin(), one.values().end());
    return v;
  }());
  Profiler<float> a, b;
  a.on_synapse({lin, one, 1, 1});
  b.on_synapse({lin, two, 2, 1});
  EXPECT_EQ(2 * a.energy().layers[0].sops, b.energy().layers[0].sops);
}

TEST(Profiler, EmptyProbeSetIsAnError) {
  Spikformer<float> m(small());
  Dataset empty;
  empty.height = empty.width = 8;
  empty.num_classes = 4;
  EXPECT_THROW(firing_rate_probe(m, empty), DataError);
}

TEST(Histogram, CountsCoverEveryFiniteValue) {
  std::vector<float> v{0.0f, 1.0f, 2.0f, 2.0f, 4.0f, std::numeric_limits<float>::quiet_NaN()};
  auto h = make_histogram("x", v, 4);
  EXPECT_EQ(h.count, 5u);
  EXPECT_EQ(h.non_finite, 1u);
  EXPECT_EQ(h.min, 0.0);
  EXPECT_EQ(h.max, 4.0);
  std::uint64_t total = 0;
  for (auto c : h.counts) total += c;
  EXPECT_EQ(total, 5u);
  std::vector<float> flat(5, 3.0f);
  auto k = make_histogram("y", flat, 8);
  total = 0;
  for (auto c : k.counts) total += c;
  EXPECT_EQ(total, 5u);
  EXPECT_EQ(histogram_csv(k).rfind("bin_center,count\n", 0), 0u);
}
