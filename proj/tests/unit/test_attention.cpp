#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spikeformer/attention.hpp"
#include "spikeformer/binary_matmul.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/ops.hpp"

using namespace spikeformer;
using Td = Tensor<double>;

namespace {

LifParams neuron(double v_th = 1.0) {
  LifParams p;
  p.v_threshold = v_th;
  return p;
}

std::vector<double> vec(const Td& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> ref_qktv(const Td& q, const Td& k, const Td& v) {
  const std::size_t n = q.dim(q.rank() - 2), d = q.dim(q.rank() - 1);
  const std::size_t batch = q.size() / (n * d);
  std::vector<double> out;
  for (std::size_t b = 0; b < batch; ++b) {
    auto slice = [&](const Td& t) {
      return oracle::to_int<double>(t.values().subspan(b * n * d, n * d));
    };
    auto qk = oracle::int_matmul(slice(q), oracle::int_transpose(slice(k), n, d), n, d, n);
    auto r = oracle::int_matmul(qk, slice(v), n, n, d);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

struct Capture : ForwardObserver<double> {
  std::vector<Td> q, k, v, product;
  std::vector<bool> counted;
  void on_attention(const AttentionEvent<double>& e) override {
    q.push_back(e.q.clone());
    k.push_back(e.k.clone());
    v.push_back(e.v.clone());
    product.push_back(e.product.clone());
    counted.push_back(e.counted);
  }
};

}  // namespace

TEST(SparseDot, HandCountsAndFloatOracle) {
  std::vector<double> q{1, 0, 1}, k{1, 1, 0};
  EXPECT_EQ(binary::sparse_dot<double>(q, k), 1);
  std::vector<double> ones(5, 1.0), kk{1, 0, 1, 1, 0};
  EXPECT_EQ(binary::sparse_dot<double>(ones, kk), 3);
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = oracle::rand_binary<double>({64}, 0.4, rng);
    auto b = oracle::rand_binary<double>({64}, 0.4, rng);
    double f = 0.0;
    for (std::size_t i = 0; i < 64; ++i) f += a.values()[i] * b.values()[i];
    EXPECT_EQ(static_cast<double>(binary::sparse_dot<double>(a.values(), b.values())), f);
    auto pa = binary::BitMatrix::pack<double>(a.values(), 1, 64);
    auto pb = binary::BitMatrix::pack<double>(b.values(), 1, 64);
    EXPECT_EQ(static_cast<double>(binary::popcount_dot(pa.row(0), pb.row(0))), f);
  }
}

TEST(BitMatrix, PackRejectsNonBinaryAndBadSize) {
  std::vector<double> v{0, 1, 0.5, 1};
  EXPECT_THROW(binary::BitMatrix::pack<double>(v, 2, 2), DataError);
  EXPECT_THROW(binary::BitMatrix::pack<double>(v, 3, 2), DimensionError);
  std::vector<double> w{0, 1, 1, 0, 0, 1};
  auto t = binary::BitMatrix::pack<double>(w, 2, 3, true);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_TRUE(t.get(1, 0));
  EXPECT_TRUE(t.get(2, 1));
  EXPECT_FALSE(t.get(0, 0));
}

TEST(BinaryKernels, MatchIntegerOracleAndCountAccumulates) {
  std::mt19937_64 rng(32);
  std::uniform_int_distribution<std::size_t> dim(1, 70);
  std::uniform_int_distribution<int> val(-5, 9);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    auto x = oracle::rand_binary<double>({m, k}, 0.3, rng);
    auto y = oracle::rand_binary<double>({n, k}, 0.6, rng);
    auto px = binary::BitMatrix::pack<double>(x.values(), m, k);
    auto py = binary::BitMatrix::pack<double>(y.values(), n, k);
    std::uint64_t acc = 0;
    auto got = binary::and_popcount_nt(px, py, &acc);
    auto want = oracle::int_matmul(oracle::to_int<double>(x.values()),
                                   oracle::int_transpose(oracle::to_int<double>(y.values()), n, k),
                                   m, k, n);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i], want[i]);
    EXPECT_EQ(acc, px.popcount() * n);

    std::vector<std::int32_t> a(m * n);
    for (auto& e : a) e = val(rng);
    auto b = oracle::rand_binary<double>({n, k}, 0.5, rng);
    auto pb = binary::BitMatrix::pack<double>(b.values(), n, k);
    acc = 0;
    auto ab = binary::int_times_binary(a, m, pb, &acc);
    std::vector<std::int64_t> a64(a.begin(), a.end());
    auto ab_ref = oracle::int_matmul(a64, oracle::to_int<double>(b.values()), m, n, k);
    for (std::size_t i = 0; i < ab.size(); ++i) ASSERT_EQ(ab[i], ab_ref[i]);
    EXPECT_EQ(acc, m * pb.popcount());

    std::vector<std::int32_t> c(k * n);
    for (auto& e : c) e = val(rng);
    acc = 0;
    auto xc = binary::binary_times_int(px, c, n, &acc);
    std::vector<std::int64_t> c64(c.begin(), c.end());
    auto xc_ref = oracle::int_matmul(oracle::to_int<double>(x.values()), c64, m, k, n);
    for (std::size_t i = 0; i < xc.size(); ++i) ASSERT_EQ(xc[i], xc_ref[i]);
    EXPECT_EQ(acc, px.popcount() * n);
  }
}

TEST(QktvProduct, WorkedExample) {
  Td q({2, 2}, {1, 0, 1, 1}), k({2, 2}, {1, 1, 0, 1}), v({2, 2}, {1, 0, 0, 1});
  auto qk = ops::matmul(q, k, ops::Transpose::No, ops::Transpose::Yes);
  EXPECT_EQ(vec(qk), (std::vector<double>{1, 0, 2, 1}));
  for (auto order : {AttentionOrder::QkFirst, AttentionOrder::KvFirst}) {
    bool binary_path = false;
    auto out = qktv_product(q, k, v, order, nullptr, &binary_path);
    EXPECT_TRUE(binary_path);
    EXPECT_EQ(vec(out), (std::vector<double>{1, 0, 2, 1}));
  }
}

TEST(QktvProduct, OrdersAgreeWithBruteForce) {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<std::size_t> nd(1, 32), dd(1, 16);
  std::uniform_real_distribution<double> rate(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = nd(rng), d = dd(rng);
    const Shape s{2, n, d};
    auto q = oracle::rand_binary<double>(s, rate(rng), rng);
    auto k = oracle::rand_binary<double>(s, rate(rng), rng);
    auto v = oracle::rand_binary<double>(s, rate(rng), rng);
    binary::ProductCounts cq, ck;
    auto a = qktv_product(q, k, v, AttentionOrder::QkFirst, &cq);
    auto b = qktv_product(q, k, v, AttentionOrder::KvFirst, &ck);
    ASSERT_EQ(vec(a), vec(b));
    ASSERT_EQ(vec(a), ref_qktv(q, k, v));
    auto popcount = [](const Td& t) {
      std::uint64_t c = 0;
      for (double x : t.values()) c += x == 1.0;
      return c;
    };
    EXPECT_EQ(cq.first_stage, popcount(q) * n);
    EXPECT_EQ(cq.second_stage, popcount(v) * n);
    EXPECT_EQ(ck.first_stage, popcount(k) * d);
    EXPECT_EQ(ck.second_stage, popcount(q) * d);
  }
}

TEST(QktvProduct, FloatPathAndGradient) {
  std::mt19937_64 rng(34);
  auto q = oracle::randn({2, 5, 3}, rng), k = oracle::randn({2, 5, 3}, rng),
       v = oracle::randn({2, 5, 3}, rng);
  bool binary_path = true;
  auto a = qktv_product(q, k, v, AttentionOrder::QkFirst, nullptr, &binary_path);
  EXPECT_FALSE(binary_path);
  auto ref = ops::matmul(ops::matmul(q, k, ops::Transpose::No, ops::Transpose::Yes), v);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], ref.values()[i], 1e-12);
  for (auto order : {AttentionOrder::QkFirst, AttentionOrder::KvFirst}) {
    auto r = oracle::check_gradients(
        [order](const std::vector<Td>& in) { return qktv_product(in[0], in[1], in[2], order); },
        {q.clone(), k.clone(), v.clone()});
    EXPECT_LT(r.max_rel_err, 1e-6) << r.worst;
  }
  // Binary forward, same backward rule.
  auto qb = oracle::rand_binary<double>({4, 3}, 0.5, rng);
  auto kb = oracle::rand_binary<double>({4, 3}, 0.5, rng);
  auto vb = oracle::rand_binary<double>({4, 3}, 0.5, rng);
  std::vector<Td> fl{qb.clone(), kb.clone(), vb.clone()};
  for (auto& t : fl) t.set_requires_grad(true);
  ops::sum(qktv_product(fl[0], fl[1], fl[2], AttentionOrder::KvFirst)).backward();
  std::vector<Td> dn{qb.clone(), kb.clone(), vb.clone()};
  for (auto& t : dn) t.set_requires_grad(true);
  ops::sum(ops::matmul(ops::matmul(dn[0], dn[1], ops::Transpose::No, ops::Transpose::Yes), dn[2]))
      .backward();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 12; ++j) EXPECT_DOUBLE_EQ(fl[i].grad()[j], dn[i].grad()[j]);
}

TEST(QktvProduct, ShapeMismatchThrows) {
  EXPECT_THROW(qktv_product(Td::zeros({4, 3}), Td::zeros({4, 2}), Td::zeros({4, 3}),
                            AttentionOrder::QkFirst),
               DimensionError);
}

TEST(SsaCore, ZeroQueryGivesSilence) {
  std::mt19937_64 rng(35);
  const Shape s{2, 3, 8, 4};
  auto k = oracle::rand_binary<double>(s, 0.5, rng);
  auto v = oracle::rand_binary<double>(s, 0.5, rng);
  Td pre;
  auto out = ssa_core(Td::zeros(s), k, v, Td::scalar(0.125), neuron(0.5), AttentionOrder::Auto,
                      &pre);
  for (double x : out.values()) EXPECT_EQ(x, 0.0);
  for (double x : pre.values()) EXPECT_EQ(x, 0.0);
}

TEST(SsaCore, ScaledProductFeedsBinaryNeuron) {
  std::mt19937_64 rng(36);
  const Shape s{3, 2, 10, 6};
  auto q = oracle::rand_binary<double>(s, 0.3, rng);
  auto k = oracle::rand_binary<double>(s, 0.3, rng);
  auto v = oracle::rand_binary<double>(s, 0.3, rng);
  Td pre;
  auto out = ssa_core(q, k, v, Td::scalar(0.125), neuron(0.5), AttentionOrder::KvFirst, &pre);
  EXPECT_TRUE(is_binary(out.values()));
  auto ref = ref_qktv(q, k, v);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(pre.values()[i], ref[i] * 0.125);
  EXPECT_EQ(vec(out), vec(lif_forward(pre, neuron(0.5))));
}

TEST(Cost, OrderSelectionAndCounts) {
  SsaConfig c;
  c.embed_dim = 512;
  c.num_heads = 8;
  auto cost = flop_sop_cost(c, 196);
  EXPECT_EQ(cost.selected, AttentionOrder::KvFirst);
  EXPECT_EQ(cost.qk_first_macs, 2ull * 196 * 196 * 64 * 8);
  EXPECT_EQ(cost.kv_first_macs, 2ull * 196 * 64 * 64 * 8);
  // Dense VSA product for the 8-512 ImageNet shape: about 77e6 FLOPs.
  EXPECT_LT(std::fabs(static_cast<double>(cost.qk_first_flops) - 77e6) / 77e6, 0.10);
  SsaConfig tie;
  tie.embed_dim = 64;
  tie.num_heads = 4;
  auto t = flop_sop_cost(tie, 16);
  EXPECT_EQ(t.selected, AttentionOrder::QkFirst);
  EXPECT_EQ(t.qk_first_macs, t.kv_first_macs);
  EXPECT_EQ(select_order(196, 64), AttentionOrder::KvFirst);
  EXPECT_EQ(select_order(64, 64), AttentionOrder::QkFirst);
  EXPECT_EQ(resolve_order(AttentionOrder::QkFirst, 196, 64), AttentionOrder::QkFirst);
  auto silent = flop_sop_cost(tie, 16, {0.0, 0.0, 0.0});
  EXPECT_EQ(silent.expected_sops, 0.0);
}

TEST(Heads, SplitMergeRoundTripAndLayout) {
  std::mt19937_64 rng(37);
  auto x = oracle::randn({2, 3, 5, 8}, rng);
  auto h = split_heads(x, 4);
  EXPECT_EQ(h.shape(), (Shape{2, 3, 4, 5, 2}));
  EXPECT_EQ(h.at({1, 2, 3, 4, 1}), x.at({1, 2, 4, 7}));
  EXPECT_EQ(vec(merge_heads(h)), vec(x));
}

TEST(Mssa, HeadCountMustDivideEmbedding) {
  SsaConfig c;
  c.embed_dim = 10;
  c.num_heads = 4;
  EXPECT_THROW(SpikingSelfAttention<double>(c, AttentionVariant::Ssa, neuron(), neuron(0.5)),
               ConfigError);
}

TEST(Mssa, ZeroWeightsGiveSilentQkv) {
  SsaConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  SpikingSelfAttention<double> attn(c, AttentionVariant::Ssa, neuron(), neuron(0.5));
  std::mt19937_64 rng(38);
  auto x = oracle::rand_binary<double>({2, 2, 6, 8}, 0.5, rng);
  auto qkv = attn.spike_qkv(x, true);
  for (const Td* t : {&qkv.q, &qkv.k, &qkv.v})
    for (double e : t->values()) EXPECT_EQ(e, 0.0);
}

TEST(Mssa, SingleHeadReducesToSsaPlusProjection) {
  SsaConfig c;
  c.embed_dim = 8;
  c.num_heads = 1;
  SpikingSelfAttention<double> attn(c, AttentionVariant::Ssa, neuron(), neuron(0.5));
  std::mt19937_64 rng(39);
  attn.init(rng);
  for (auto* lin : {&attn.q_linear, &attn.k_linear, &attn.v_linear, &attn.proj_linear})
    nn::truncated_normal_(lin->weight, 0.6, rng);
  auto x = oracle::rand_binary<double>({3, 2, 6, 8}, 0.5, rng);
  auto qkv = attn.spike_qkv(x, false);
  auto out = attn.mssa(qkv, false);
  auto s = ssa_core(qkv.q, qkv.k, qkv.v, attn.scale, neuron(0.5), AttentionOrder::Auto);
  auto proj = lif_forward(attn.proj_bn.forward(attn.proj_linear.forward(s), 3, false), neuron());
  EXPECT_EQ(vec(out), vec(proj));
  EXPECT_TRUE(is_binary(out.values()));
}

TEST(Mssa, HeadPermutationSymmetry) {
  SsaConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  std::mt19937_64 rng(40);
  SpikingSelfAttention<double> a(c, AttentionVariant::Ssa, neuron(), neuron(0.5));
  a.init(rng);
  for (auto* lin : {&a.q_linear, &a.k_linear, &a.v_linear, &a.proj_linear})
    nn::truncated_normal_(lin->weight, 0.6, rng);
  SpikingSelfAttention<double> b(c, AttentionVariant::Ssa, neuron(), neuron(0.5));
  // Head h of `b` is head 1-h of `a`: swap output columns of Q/K/V (and
  // their BN channels) and the matching input rows of the projection.
  auto swap = [](std::size_t i) { return (i + 4) % 8; };
  for (auto [src, dst] : {std::pair{&a.q_linear, &b.q_linear}, std::pair{&a.k_linear, &b.k_linear},
                          std::pair{&a.v_linear, &b.v_linear}}) {
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t col = 0; col < 8; ++col)
        dst->weight.mutable_values()[r * 8 + swap(col)] = src->weight.values()[r * 8 + col];
  }
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t col = 0; col < 8; ++col)
      b.proj_linear.weight.mutable_values()[swap(r) * 8 + col] =
          a.proj_linear.weight.values()[r * 8 + col];
  for (auto [src, dst] : {std::pair{&a.q_bn, &b.q_bn}, std::pair{&a.k_bn, &b.k_bn},
                          std::pair{&a.v_bn, &b.v_bn}}) {
    for (std::size_t ch = 0; ch < 8; ++ch) {
      src->gamma.mutable_values()[ch] = 0.5 + 0.1 * static_cast<double>(ch);
      src->beta.mutable_values()[ch] = -0.05 * static_cast<double>(ch);
      dst->gamma.mutable_values()[swap(ch)] = src->gamma.values()[ch];
      dst->beta.mutable_values()[swap(ch)] = src->beta.values()[ch];
    }
  }
  auto x = oracle::rand_binary<double>({2, 2, 6, 8}, 0.5, rng);
  auto ya = a.forward(x, false), yb = b.forward(x, false);
  EXPECT_EQ(vec(ya), vec(yb));
}

TEST(Variants, AllKeepShapeAndProduceSpikes) {
  SsaConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  for (auto variant : {AttentionVariant::Ssa, AttentionVariant::VsaSpikeV,
                       AttentionVariant::VsaFloatV, AttentionVariant::Identity,
                       AttentionVariant::Relu, AttentionVariant::LeakyRelu}) {
    std::mt19937_64 rng(41);
    SpikingSelfAttention<double> attn(c, variant, neuron(), neuron(0.5));
    attn.init(rng);
    for (auto* lin : {&attn.q_linear, &attn.k_linear, &attn.v_linear, &attn.proj_linear})
      nn::truncated_normal_(lin->weight, 0.6, rng);
    auto x = oracle::rand_binary<double>({2, 2, 5, 8}, 0.5, rng);
    Capture cap;
    auto y = attn.forward(x, true, &cap);
    EXPECT_EQ(y.shape(), x.shape()) << to_string(variant);
    EXPECT_TRUE(is_binary(y.values())) << to_string(variant);
    ASSERT_EQ(cap.q.size(), 1u);
    EXPECT_EQ(cap.counted[0], variant == AttentionVariant::Ssa);

    const auto& q = cap.q[0];
    const auto& k = cap.k[0];
    auto map = ops::matmul(q, k, ops::Transpose::No, ops::Transpose::Yes);
    if (variant == AttentionVariant::Relu) {
      for (double e : map.values()) EXPECT_GE(e, 0.0);
    }
    if (variant == AttentionVariant::VsaSpikeV || variant == AttentionVariant::VsaFloatV) {
      auto sm = ops::softmax_lastdim(ops::scale(map, 1.0 / 2.0));
      for (std::size_t r = 0; r < sm.size() / 5; ++r) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) row += sm.values()[r * 5 + j];
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
      auto expect = ops::matmul(sm, cap.v[0]);
      for (std::size_t i = 0; i < expect.size(); ++i)
        EXPECT_NEAR(cap.product[0].values()[i], expect.values()[i], 1e-12);
      EXPECT_EQ(variant == AttentionVariant::VsaSpikeV, is_binary(cap.v[0].values()));
    }
    if (variant == AttentionVariant::Identity) {
      auto expect = ops::matmul(map, cap.v[0]);
      for (std::size_t i = 0; i < expect.size(); ++i)
        EXPECT_NEAR(cap.product[0].values()[i], expect.values()[i] * 0.125, 1e-12);
    }
  }
}

TEST(Variants, IdentityMapReproducesPlainProduct) {
  // With Q = K = I the map is the identity and the product returns V.
  std::mt19937_64 rng(42);
  Td eye({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  auto v = oracle::randn({4, 4}, rng);
  EXPECT_EQ(vec(qktv_product(eye, eye, v, AttentionOrder::QkFirst)), vec(v));
}

TEST(Variants, ParseNames) {
  EXPECT_EQ(parse_variant("ssa"), AttentionVariant::Ssa);
  EXPECT_EQ(parse_variant("vsa"), AttentionVariant::VsaSpikeV);
  EXPECT_EQ(parse_variant("vsa_floatv"), AttentionVariant::VsaFloatV);
  EXPECT_EQ(parse_variant("i"), AttentionVariant::Identity);
  EXPECT_EQ(parse_variant("relu"), AttentionVariant::Relu);
  EXPECT_EQ(parse_variant("leakyrelu"), AttentionVariant::LeakyRelu);
  EXPECT_THROW(parse_variant("gelu"), ConfigError);
}

TEST(Mssa, TimeStepsAreIndependentInTheProduct) {
  std::mt19937_64 rng(43);
  const Shape s{3, 1, 2, 7, 4};
  auto q = oracle::rand_binary<double>(s, 0.4, rng);
  auto k = oracle::rand_binary<double>(s, 0.4, rng);
  auto v = oracle::rand_binary<double>(s, 0.4, rng);
  auto all = qktv_product(q, k, v, AttentionOrder::KvFirst);
  for (std::size_t t = 0; t < 3; ++t) {
    auto one = qktv_product(ops::select(q, t), ops::select(k, t), ops::select(v, t),
                            AttentionOrder::KvFirst);
    EXPECT_EQ(vec(one), vec(ops::select(all, t)));
  }
}
