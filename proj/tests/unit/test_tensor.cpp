#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spikeformer/error.hpp"
#include "spikeformer/neuron.hpp"
#include "spikeformer/ops.hpp"
#include "spikeformer/tensor.hpp"

using namespace spikeformer;
using oracle::check_gradients;
using Td = Tensor<double>;
using Inputs = std::vector<Td>;

namespace {

constexpr double kTol = 1e-6;

std::vector<double> vals(const Td& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
  Td eye({2, 2}, {1, 0, 0, 1});
  Td b({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(vals(ops::matmul(eye, b)), (std::vector<double>{3, 4, 5, 6}));
  Td r({1, 2}, {1, 2});
  Td c({2, 1}, {3, 4});
  EXPECT_EQ(ops::matmul(r, c).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Td a({2, 3}, std::vector<double>(6, 1.0));
  Td b({2, 3}, std::vector<double>(6, 1.0));
  try {
    ops::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] and [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (auto ta : {ops::Transpose::No, ops::Transpose::Yes}) {
    for (auto tb : {ops::Transpose::No, ops::Transpose::Yes}) {
      Shape sa = ta == ops::Transpose::No ? Shape{5, 7} : Shape{7, 5};
      Shape sb = tb == ops::Transpose::No ? Shape{7, 3} : Shape{3, 7};
      auto r = check_gradients(
          [&](const Inputs& in) { return ops::matmul(in[0], in[1], ta, tb); },
          {oracle::randn(sa, rng), oracle::randn(sb, rng)});
      EXPECT_LT(r.max_rel_err, kTol) << r.worst;
    }
  }
}

TEST(Matmul, BatchedAndSharedRightOperand) {
  std::mt19937_64 rng(2);
  auto r = check_gradients([](const Inputs& in) { return ops::matmul(in[0], in[1]); },
                           {oracle::randn({2, 3, 4, 5}, rng), oracle::randn({2, 3, 5, 2}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
  r = check_gradients([](const Inputs& in) { return ops::matmul(in[0], in[1]); },
                      {oracle::randn({3, 4, 5}, rng), oracle::randn({5, 2}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(Linear, IdentityAndZeroWeight) {
  Td x({2, 3}, {1, 2, 3, 4, 5, 6});
  Td eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(vals(ops::linear(x, eye, Td::zeros({3}))), vals(x));
  Td bias({2}, {0.5, -1.5});
  EXPECT_EQ(vals(ops::linear(x, Td::zeros({3, 2}), bias)),
            (std::vector<double>{0.5, -1.5, 0.5, -1.5}));
  EXPECT_THROW(ops::linear(x, Td::zeros({4, 2})), DimensionError);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto r = check_gradients(
      [](const Inputs& in) { return ops::linear(in[0], in[1], in[2]); },
      {oracle::randn({2, 3, 6}, rng), oracle::randn({6, 4}, rng), oracle::randn({4}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(Conv2d, ZeroInputAndCenterOfOnes) {
  auto zero = ops::conv2d(Td::zeros({1, 2, 4, 4}), Td::full({3, 2, 3, 3}, 1.0));
  EXPECT_EQ(zero.shape(), (Shape{1, 3, 4, 4}));
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  auto out = ops::conv2d(Td::full({1, 1, 3, 3}, 1.0), Td::full({1, 1, 3, 3}, 1.0));
  EXPECT_EQ(out.at({0, 0, 1, 1}), 9.0);
  EXPECT_EQ(out.at({0, 0, 0, 0}), 4.0);  // corner sees a 2x2 patch
  EXPECT_EQ(out.at({0, 0, 0, 1}), 6.0);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(ops::conv2d(Td::zeros({1, 2, 4, 4}), Td::zeros({3, 1, 3, 3})), DimensionError);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(4);
  auto x = oracle::randn({2, 3, 5, 4}, rng);
  auto w = oracle::randn({2, 3, 3, 3}, rng);
  auto y = ops::conv2d(x, w);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < 3; ++c)
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
                if (ii < 0 || jj < 0 || ii >= 5 || jj >= 4) continue;
                s += x.at({b, c, std::size_t(ii), std::size_t(jj)}) *
                     w.at({o, c, std::size_t(di + 1), std::size_t(dj + 1)});
              }
          EXPECT_NEAR(y.at({b, o, i, j}), s, 1e-12);
        }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto r = check_gradients([](const Inputs& in) { return ops::conv2d(in[0], in[1]); },
                           {oracle::randn({2, 2, 4, 5}, rng), oracle::randn({3, 2, 3, 3}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(MaxPool, SingleWindowAndTieRouting) {
  Td x({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto y = ops::maxpool2d(x);
  EXPECT_EQ(y.item(), 4.0);
  Td tie({1, 1, 2, 2}, {5, 5, 5, 5}, true);
  ops::maxpool2d(tie).backward();
  EXPECT_EQ(std::vector<double>(tie.grad().begin(), tie.grad().end()),
            (std::vector<double>{1, 0, 0, 0}));
  EXPECT_THROW(ops::maxpool2d(Td::zeros({1, 1, 3, 2})), DimensionError);
}

TEST(MaxPool, BinaryStaysBinary) {
  std::mt19937_64 rng(6);
  auto y = ops::maxpool2d(oracle::rand_binary<double>({2, 3, 6, 8}, 0.3, rng));
  EXPECT_TRUE(is_binary(y.values()));
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto r = check_gradients([](const Inputs& in) { return ops::maxpool2d(in[0]); },
                           {oracle::randn({2, 2, 4, 6}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(BatchNorm, TrainStatisticsAndDegenerateChannel) {
  std::mt19937_64 rng(8);
  auto x = oracle::randn({6, 3, 4, 4}, rng, 3.0);
  for (auto& v : x.mutable_values()) v += 2.0;
  ops::BatchNormState<double> st(3);
  auto y = ops::batchnorm(x, Td::full({3}, 1.0), Td::zeros({3}), st, 1, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, q = 0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t i = 0; i < 16; ++i) {
        const double v = y.values()[(b * 3 + c) * 16 + i];
        m += v;
        q += v * v;
        ++n;
      }
    m /= n;
    EXPECT_LT(std::fabs(m), 1e-6);
    EXPECT_NEAR(q / n - m * m, 1.0, 1e-4);
  }
  ops::BatchNormState<double> st2(1);
  auto k = ops::batchnorm(Td::full({4, 1, 2, 2}, 3.0), Td::full({1}, 2.0), Td::full({1}, 0.7),
                          st2, 1, true);
  for (double v : k.values()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(BatchNorm, EvalBeforeTrainingUsesInitialStats) {
  Td x({2, 2}, {1.0, -2.0, 3.0, 0.5});
  ops::BatchNormState<double> st(2);
  auto y = ops::batchnorm(x, Td::full({2}, 1.0), Td::zeros({2}), st, 1, false);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.values()[i], x.values()[i] / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (std::size_t axis : {1u, 3u}) {
    auto r = check_gradients(
        [axis](const Inputs& in) {
          ops::BatchNormState<double> st(3);
          return ops::batchnorm(in[0], in[1], in[2], st, axis, true);
        },
        {oracle::randn(axis == 1 ? Shape{4, 3, 2, 2} : Shape{2, 2, 4, 3}, rng),
         oracle::randn({3}, rng), oracle::randn({3}, rng)});
    EXPECT_LT(r.max_rel_err, kTol) << r.worst;
  }
  auto r = check_gradients(
      [](const Inputs& in) {
        ops::BatchNormState<double> st(3);
        st.running_mean = {0.3, -0.1, 0.2};
        st.running_var = {1.5, 0.7, 2.0};
        return ops::batchnorm(in[0], in[1], in[2], st, 1, false);
      },
      {oracle::randn({4, 3, 2}, rng), oracle::randn({3}, rng), oracle::randn({3}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(Softmax, UniformAndStable) {
  auto u = ops::softmax_lastdim(Td::zeros({1, 4}));
  for (double v : u.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto s = ops::softmax_lastdim(Td({1, 2}, {1000.0, 0.0}));
  EXPECT_TRUE(std::isfinite(s.values()[0]));
  EXPECT_NEAR(s.values()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.values()[1], 0.0, 1e-12);
}

TEST(CrossEntropy, UniformOverTenClassesIsLnTen) {
  std::vector<int> labels{3};
  EXPECT_NEAR(ops::cross_entropy(Td::zeros({1, 10}), labels).item(), std::log(10.0), 1e-12);
  EXPECT_NEAR(ops::cross_entropy(Td::zeros({1, 10}), labels).item(), 2.302585, 1e-6);
  std::vector<int> bad{10};
  EXPECT_THROW(ops::cross_entropy(Td::zeros({1, 10}), bad), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  const Shape s{3, 4};
  auto a = oracle::randn(s, rng), b = oracle::randn(s, rng);
  struct Case {
    const char* name;
    oracle::Fn f;
    Inputs in;
  };
  std::vector<Case> cases{
      {"add", [](const Inputs& in) { return ops::add(in[0], in[1]); }, {a.clone(), b.clone()}},
      {"sub", [](const Inputs& in) { return ops::sub(in[0], in[1]); }, {a.clone(), b.clone()}},
      {"mul", [](const Inputs& in) { return ops::mul(in[0], in[1]); }, {a.clone(), b.clone()}},
      {"scale", [](const Inputs& in) { return ops::scale(in[0], 0.37); }, {a.clone()}},
      {"scale_by", [](const Inputs& in) { return ops::scale_by(in[0], in[1]); },
       {a.clone(), Td::scalar(0.8)}},
      {"add_scalar", [](const Inputs& in) { return ops::add_scalar(in[0], -0.4); }, {a.clone()}},
      {"relu", [](const Inputs& in) { return ops::relu(in[0]); }, {a.clone()}},
      {"leaky_relu", [](const Inputs& in) { return ops::leaky_relu(in[0], 0.01); }, {a.clone()}},
      {"sigmoid", [](const Inputs& in) { return ops::sigmoid(in[0]); }, {a.clone()}},
      {"softmax", [](const Inputs& in) { return ops::softmax_lastdim(in[0]); }, {a.clone()}},
      {"reshape", [](const Inputs& in) { return ops::reshape(in[0], {2, 6}); }, {a.clone()}},
      {"permute", [](const Inputs& in) { return ops::permute(in[0], {1, 0}); }, {a.clone()}},
      {"mean_axis0", [](const Inputs& in) { return ops::mean_axis(in[0], 0); }, {a.clone()}},
      {"mean_axis1", [](const Inputs& in) { return ops::mean_axis(in[0], 1); }, {a.clone()}},
      {"sum", [](const Inputs& in) { return ops::sum(in[0]); }, {a.clone()}},
      {"mean", [](const Inputs& in) { return ops::mean(in[0]); }, {a.clone()}},
      {"select", [](const Inputs& in) { return ops::select(in[0], 2); }, {a.clone()}},
      {"stack", [](const Inputs& in) { return ops::stack<double>({in[0], in[1], in[0]}); },
       {a.clone(), b.clone()}},
  };
  for (auto& c : cases) {
    auto r = check_gradients(c.f, c.in);
    EXPECT_LT(r.max_rel_err, kTol) << c.name << ": " << r.worst;
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::vector<int> labels{0, 3, 2};
  auto r = check_gradients(
      [&](const Inputs& in) { return ops::cross_entropy(in[0], labels); },
      {oracle::randn({3, 5}, rng)});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(Permute, RankFiveHeadSplitLayout) {
  std::mt19937_64 rng(12);
  auto x = oracle::randn({2, 3, 4, 2, 5}, rng);
  auto y = ops::permute(x, {0, 1, 3, 2, 4});
  EXPECT_EQ(y.shape(), (Shape{2, 3, 2, 4, 5}));
  EXPECT_EQ(y.at({1, 2, 1, 3, 4}), x.at({1, 2, 3, 1, 4}));
  auto r = check_gradients([](const Inputs& in) { return ops::permute(in[0], {0, 1, 3, 2, 4}); },
                           {x});
  EXPECT_LT(r.max_rel_err, kTol) << r.worst;
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Td x({2}, {1.5, -2.0}, true);
  auto y = ops::mul(x, x);
  auto z = ops::add(y, x);
  ops::sum(z).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 1);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 1);
}

TEST(Tape, NoGradGuardRecordsNothing) {
  Td x({2}, {1.0, 2.0}, true);
  Td y;
  {
    NoGradGuard g;
    y = ops::mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(GradMode::enabled());
}

TEST(Tape, BackwardIsDeterministic) {
  std::mt19937_64 rng(13);
  auto a = oracle::randn({4, 6}, rng, 1.0, true);
  auto w = oracle::randn({6, 3}, rng, 1.0, true);
  auto run = [&] {
    a.zero_grad();
    w.zero_grad();
    ops::sum(ops::sigmoid(ops::matmul(a, w))).backward();
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Td a({2}, {1.0, 2.0});
  Td b = a;
  Td c = a.clone();
  a.mutable_values()[0] = 9.0;
  EXPECT_EQ(b.values()[0], 9.0);
  EXPECT_EQ(c.values()[0], 1.0);
  EXPECT_THROW(Td({3}, {1.0, 2.0}), DimensionError);
}
