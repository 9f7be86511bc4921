#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/neuron.hpp"
#include "spikeformer/ops.hpp"

using namespace spikeformer;
using Td = Tensor<double>;

namespace {

LifParams tau2() {
  LifParams p;
  p.tau = 2.0;
  p.v_threshold = 1.0;
  p.v_reset = 0.0;
  return p;
}

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(Lif, SingleStrongInputFiresAndResets) {
  auto tr = lif_trace(Td({1, 1}, {2.0}), tau2());
  EXPECT_EQ(tr.charge[0], 1.0);
  EXPECT_EQ(tr.spikes[0], 1.0);
  EXPECT_EQ(tr.membrane[0], 0.0);
}

TEST(Lif, ZerosStaySilentAtReset) {
  for (std::size_t steps : {1u, 3u, 8u}) {
    LifParams p = tau2();
    p.v_reset = -0.25;
    auto tr = lif_trace(Td::zeros({steps, 5}), p);
    for (double s : tr.spikes) EXPECT_EQ(s, 0.0);
    for (double v : tr.membrane) EXPECT_EQ(v, -0.25);
  }
}

TEST(Lif, SubthresholdPairMatchesExactRecurrence) {
  auto tr = lif_trace(Td({2, 1}, {0.6, 0.6}), tau2());
  const auto ref = oracle::exact_lif_tau2({0.6, 0.6}, 1.0, 0.0);
  ASSERT_TRUE(ref.exact);
  EXPECT_EQ(tr.charge, ref.charge);
  EXPECT_EQ(tr.spikes, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(tr.membrane, ref.membrane);
  EXPECT_EQ(tr.charge[0], 0.3);
  // 3/4 of the double nearest 0.6 is a rounding tie; the result sits one ulp
  // from the double nearest 0.45.
  EXPECT_LE(std::fabs(tr.charge[1] - 0.45), std::nextafter(0.45, 1.0) - 0.45);
}

TEST(Lif, RandomInputsMatchExactRecurrence) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> q(-64, 160);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(6);
    for (auto& v : x) v = q(rng) / 64.0;  // dyadic, so every halving is exact
    auto tr = lif_trace(Td({6, 1}, x), tau2());
    auto ref = oracle::exact_lif_tau2(x, 1.0, 0.0);
    ASSERT_TRUE(ref.exact);
    EXPECT_EQ(tr.charge, ref.charge);
    EXPECT_EQ(tr.spikes, ref.spikes);
    EXPECT_EQ(tr.membrane, ref.membrane);
  }
}

TEST(Lif, BinarityAndResetInvariants) {
  std::mt19937_64 rng(22);
  for (auto mode : {NeuronMode::Lif, NeuronMode::If}) {
    LifParams p = tau2();
    p.mode = mode;
    auto x = oracle::randn({5, 40}, rng, 1.5);
    auto tr = lif_trace(x, p);
    EXPECT_TRUE(is_binary(std::span<const double>(tr.spikes)));
    EXPECT_TRUE(is_binary(lif_forward(x, p).values()));
    for (std::size_t i = 0; i < tr.spikes.size(); ++i) {
      const double expected = tr.spikes[i] == 1.0 ? p.v_reset : tr.charge[i];
      EXPECT_EQ(tr.membrane[i], expected);
    }
  }
}

TEST(Lif, MonotoneFiring) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> pick_step(0, 3), pick_unit(0, 29);
  std::uniform_real_distribution<double> bump(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = oracle::randn({4, 30}, rng);
    const auto base = lif_trace(x, tau2());
    auto y = x.clone();
    const std::size_t t = pick_step(rng), i = pick_unit(rng);
    y.mutable_values()[t * 30 + i] += bump(rng);
    const auto raised = lif_trace(y, tau2());
    if (base.spikes[t * 30 + i] == 1.0) {
      EXPECT_EQ(raised.spikes[t * 30 + i], 1.0);
    }
  }
}

TEST(Lif, IfModeHasNoLeak) {
  LifParams p = tau2();
  p.mode = NeuronMode::If;
  auto tr = lif_trace(Td({3, 1}, {0.4, 0.4, 0.4}), p);
  EXPECT_DOUBLE_EQ(tr.charge[1], 0.8);
  EXPECT_EQ(tr.spikes, (std::vector<double>{0, 0, 1}));
}

TEST(Lif, NonTimeAxesAreIndependent) {
  std::mt19937_64 rng(24);
  auto x = oracle::randn({4, 3, 2}, rng, 2.0);
  auto joint = lif_trace(x, tau2());
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<double> col;
    for (std::size_t t = 0; t < 4; ++t) col.push_back(x.values()[t * 6 + i]);
    auto alone = lif_trace(Td({4, 1}, col), tau2());
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(alone.spikes[t], joint.spikes[t * 6 + i]);
  }
}

TEST(Lif, EmptyInputAndBadParamsThrow) {
  EXPECT_THROW(lif_forward(Td::zeros({0, 3}), tau2()), DimensionError);
  EXPECT_THROW(lif_forward(Td(), tau2()), DimensionError);
  LifParams p = tau2();
  p.tau = 0.5;
  EXPECT_THROW(p.validate(), ConfigError);
  p = tau2();
  p.v_reset = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Surrogate, ValueAtZeroAndSaturation) {
  EXPECT_EQ(surrogate_grad(0.0, 4.0), 1.0);
  EXPECT_LT(surrogate_grad(50.0, 4.0), 1e-40);
  EXPECT_LT(surrogate_grad(-50.0, 4.0), 1e-40);
  EXPECT_DOUBLE_EQ(surrogate_sigmoid(0.0, 4.0), 0.5);
}

TEST(Surrogate, MatchesFiniteDifferenceOfSigmoid) {
  const double eps = 1e-5;
  for (double x : {-2.0, -0.3, 0.0, 0.1, 0.7, 1.9}) {
    const double n =
        (surrogate_sigmoid(x + eps, 4.0) - surrogate_sigmoid(x - eps, 4.0)) / (2 * eps);
    EXPECT_LT(oracle::rel_err(surrogate_grad(x, 4.0), n), 1e-6) << x;
  }
}

TEST(Surrogate, SpikeFnBackwardEqualsSmoothDerivative) {
  std::mt19937_64 rng(25);
  auto x = oracle::randn({50}, rng, 1.0, true);
  spike_fn(x, 4.0).backward(std::vector<double>(50, 1.0));
  auto hard = vec(x.grad());
  auto ref = vec(surrogate_backward(x, 4.0).values());
  EXPECT_EQ(hard, ref);
  auto y = x.clone();
  y.zero_grad();
  ops::sigmoid(ops::scale(y, 4.0)).backward(std::vector<double>(50, 1.0));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(y.grad()[i], ref[i]);
}

TEST(Bptt, SingleStepIsSurrogateOverTau) {
  Td x({1, 1}, {1.3}, true);
  lif_forward(x, tau2()).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], surrogate_grad(1.3 / 2 - 1.0, 4.0) / 2.0);
}

TEST(Bptt, LeakPathIntoLaterStep) {
  Td x({2, 1}, {0.6, 0.6}, true);
  std::vector<double> seed{0.0, 1.0};  // d S[2]
  lif_forward(x, tau2()).backward(seed);
  const auto tr = lif_trace(x, tau2());
  ASSERT_EQ(tr.spikes[0], 0.0);
  const double sg2 = surrogate_grad(tr.charge[1] - 1.0, 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], sg2 * 0.5 * 0.5);
  EXPECT_DOUBLE_EQ(x.grad()[1], sg2 * 0.5);
}

TEST(Bptt, SpikeCutsLeakPath) {
  Td x({2, 1}, {2.4, 0.6}, true);
  lif_forward(x, tau2()).backward(std::vector<double>{0.0, 1.0});
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Smooth, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(26);
  for (auto mode : {NeuronMode::Lif, NeuronMode::If}) {
    LifParams p = tau2();
    p.mode = mode;
    p.smooth = true;
    auto r = oracle::check_gradients(
        [&](const std::vector<Td>& in) { return lif_forward(in[0], p); },
        {oracle::randn({4, 6}, rng, 1.2)});
    EXPECT_LT(r.max_rel_err, 1e-5) << r.worst;
  }
}

TEST(Smooth, SingleStepMatchesSurrogate) {
  LifParams p = tau2();
  p.smooth = true;
  Td x({1, 1}, {1.3}, true);
  auto y = lif_forward(x, p);
  EXPECT_DOUBLE_EQ(y.item(), surrogate_sigmoid(1.3 / 2 - 1.0, 4.0));
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], surrogate_grad(1.3 / 2 - 1.0, 4.0) / 2.0);
}
