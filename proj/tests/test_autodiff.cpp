#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dyroad/autodiff.hpp"
#include "dyroad/error.hpp"
#include "dyroad/random.hpp"
#include "gradcheck.hpp"
#include "op_suite.hpp"

using namespace dyroad;
using ad::Tensor;
using testkit::gradient_check;
using testkit::random_param;

namespace {

constexpr int kTrials = 100;
constexpr double kOpTolerance = 1e-4;

}  // namespace

TEST(Autodiff, SigmoidOfZeroIsHalf) {
  EXPECT_DOUBLE_EQ(ad::sigmoid(Tensor::scalar(0.0)).item(), 0.5);
}

TEST(Autodiff, SoftmaxOfEqualLogitsIsUniform) {
  auto s = ad::softmax(Tensor::constant({2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(s.at(0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(Autodiff, LayerNormOfConstantRowIsZero) {
  auto y = ad::layer_norm(Tensor::constant({3}, {2.5, 2.5, 2.5}), Tensor::constant({3}, {1, 1, 1}),
                          Tensor::constant({3}, {0, 0, 0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Autodiff, SumOfSquaresGradient) {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  ad::backward(ad::sum(ad::mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Autodiff, SigmoidGradientAtZero) {
  auto w = Tensor::parameter({}, {0.0});
  ad::backward(ad::sigmoid(w));
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Autodiff, BackwardRejectsNonScalarLoss) {
  auto x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(ad::backward(ad::scale(x, 2.0)), ShapeError);
}

TEST(Autodiff, ShapeErrorNamesOpAndShapes) {
  auto a = Tensor::constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor::constant({4, 5}, std::vector<double>(20, 1.0));
  try {
    ad::matmul(a, b);
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::concat({a, Tensor::constant({3, 3}, std::vector<double>(9, 0.0))}), ShapeError);
}

TEST(Autodiff, UnreachableLeafGetsZeroGrad) {
  auto x = Tensor::parameter({2}, {1, 2});
  auto unused = Tensor::parameter({2}, {3, 4});
  ad::backward(ad::sum(x));
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Autodiff, SharedLeafAccumulatesAcrossBranches) {
  auto x = Tensor::parameter({}, {3.0});
  // y = x*x + 2x + exp(x)  ->  dy/dx = 2x + 2 + exp(x)
  auto y = ad::add(ad::add(ad::mul(x, x), ad::scale(x, 2.0)), ad::exp(x));
  ad::backward(y);
  EXPECT_NEAR(x.grad()[0], 8.0 + std::exp(3.0), 1e-12);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndArePositive) {
  std::mt19937_64 rng(11);
  auto x = random_param({5, 7}, rng, -30, 30);
  auto s = ad::softmax(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GT(s.at(r * 7 + c), 0.0);
      total += s.at(r * 7 + c);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Autodiff, DeterministicValuesAndGradients) {
  auto run = [] {
    std::mt19937_64 rng(5);
    auto a = random_param({3, 4}, rng);
    auto b = random_param({4, 2}, rng);
    auto y = ad::sum(ad::tanh(ad::matmul(a, b)));
    ad::backward(y);
    std::vector<double> out{y.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, BroadcastRules) {
  auto x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto bias = Tensor::constant({3}, {10, 20, 30});
  auto y = ad::add(x, bias);
  EXPECT_EQ(y.at(4), 25.0);
  auto s = ad::mul(x, Tensor::scalar(2.0));
  EXPECT_EQ(s.at(5), 12.0);
  EXPECT_THROW(ad::add(x, Tensor::constant({2}, {1, 2})), ShapeError);
}

// Finite-difference checks, one per op, 100 random trials each.

class AutodiffGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(AutodiffGradients, MatchesCentralDifferences) {
  const auto& c = testkit::op_suite()[GetParam()];
  std::mt19937_64 rng(stable_hash(c.name));
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    auto [params, fn] = c.build(rng);
    worst = std::max(worst, gradient_check(params, fn).max_rel_error);
  }
  EXPECT_LT(worst, kOpTolerance) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Ops, AutodiffGradients,
                         ::testing::Range<std::size_t>(0, testkit::op_suite().size()),
                         [](const auto& info) { return testkit::op_suite()[info.param].name; });

TEST(Optimizers, SgdStep) {
  auto p = Tensor::parameter({1}, {1.0});
  p.mutable_grad()[0] = 2.0;
  std::vector<Tensor> ps{p};
  ad::sgd_step(ps, 0.5);
  EXPECT_DOUBLE_EQ(p.at(0), 0.0);
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(Optimizers, SgdZeroLearningRateIsIdentity) {
  auto p = Tensor::parameter({2}, {1.0, -4.0});
  ad::backward(ad::sum(ad::mul(p, p)));
  std::vector<Tensor> ps{p};
  ad::sgd_step(ps, 0.0);
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), -4.0);
}

TEST(Optimizers, SgdMissingGradThrows) {
  auto c = Tensor::constant({1}, {1.0});
  std::vector<Tensor> ps{c};
  EXPECT_THROW(ad::sgd_step(ps, 0.1), Error);
}

TEST(Optimizers, SgdQuadraticHandIteration) {
  // loss (p - 3)^2, lr 0.25: p <- p - 0.5 (p - 3), so 0 -> 1.5 -> 2.25.
  auto p = Tensor::parameter({}, {0.0});
  std::vector<Tensor> ps{p};
  const double expected[] = {1.5, 2.25};
  double prev = 0.0;
  for (double e : expected) {
    auto d = ad::sub(p, Tensor::scalar(3.0));
    ad::backward(ad::mul(d, d));
    ad::sgd_step(ps, 0.25);
    EXPECT_DOUBLE_EQ(p.item(), e);
    EXPECT_GT(p.item(), prev);
    prev = p.item();
  }
}

TEST(Optimizers, AdamFirstStepHasMagnitudeLr) {
  for (double g : {1e-3, 1.0, 250.0}) {
    auto p = Tensor::parameter({}, {0.0});
    ad::Adam opt({p}, ad::AdamConfig{0.01});
    ad::backward(ad::scale(p, g));
    opt.step();
    EXPECT_NEAR(p.item(), -0.01, 1e-6) << "grad " << g;
  }
}

TEST(Optimizers, AdamZeroGradLeavesParamsUnchanged) {
  auto p = Tensor::parameter({2}, {1.0, 2.0});
  ad::Adam opt({p});
  for (int i = 0; i < 10; ++i) {
    ad::backward(ad::scale(ad::sum(p), 0.0));
    opt.step();
  }
  EXPECT_EQ(p.at(0), 1.0);
  EXPECT_EQ(p.at(1), 2.0);
}

TEST(Optimizers, AdamMissingGradThrows) {
  auto c = Tensor::constant({1}, {1.0});
  std::vector<Tensor> ps{c};
  std::vector<std::vector<double>> m(1, std::vector<double>(1)), v(1, std::vector<double>(1));
  EXPECT_THROW(ad::adam_step(ps, m, v, 1, {}), Error);
}

TEST(Optimizers, AdamQuadraticDecreasesMonotonically) {
  auto p = Tensor::parameter({3}, {10.0, -8.0, 6.0});
  ad::Adam opt({p}, ad::AdamConfig{0.05});
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 100; ++i) {
    auto loss = ad::sum(ad::mul(p, p));
    double v = loss.item();
    if (i >= 5) {
      EXPECT_LT(v, prev) << "step " << i;
    }
    prev = v;
    ad::backward(loss);
    opt.step();
  }
}
