#include <gtest/gtest.h>

#include <cmath>

#include "dyroad/error.hpp"
#include "dyroad/temporal.hpp"
#include "gradcheck.hpp"

using namespace dyroad;

TEST(TemporalEncoder, EncodeAtZero) {
  Rng rng(1);
  TemporalEncoder enc(8, 1.0, rng);
  auto v = enc.encode_value(0.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(v[k], 1.0);
    EXPECT_EQ(v[k + 4], 0.0);
  }
}

TEST(TemporalEncoder, LayoutAndRange) {
  TemporalEncoder enc(std::vector<double>{0.5, -2.0, 3.0});
  ASSERT_EQ(enc.dim(), 6u);
  for (double t : {-7.0, 0.3, 12.5, 1e4}) {
    auto v = enc.encode_value(t);
    EXPECT_DOUBLE_EQ(v[1], std::cos(-2.0 * t));
    EXPECT_DOUBLE_EQ(v[5], std::sin(3.0 * t));
    for (double x : v) {
      EXPECT_LE(x, 1.0);
      EXPECT_GE(x, -1.0);
    }
  }
}

TEST(TemporalEncoder, GraphAndPlainEncodingsAgree) {
  Rng rng(4);
  TemporalEncoder enc(10, 2.0, rng);
  std::vector<double> times{0.0, 1.5, -3.0, 100.0};
  auto rows = enc.encode(times);
  ASSERT_EQ(rows.shape(), (ad::Shape{4, 10}));
  for (std::size_t i = 0; i < times.size(); ++i) {
    auto v = enc.encode_value(times[i]);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(rows.at(i * 10 + k), v[k], 1e-12);
  }
}

TEST(TemporalEncoder, InitialisationDistribution) {
  Rng rng(9);
  TemporalEncoder enc(20000, 0.5, rng);
  double mean = 0.0, sq = 0.0;
  for (double w : enc.frequencies().values()) {
    mean += w;
    sq += w * w;
  }
  const double n = 10000.0;
  mean /= n;
  double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.06);
  EXPECT_NEAR(sd, 2.0, 0.05);
}

TEST(TemporalEncoder, RejectsBadArguments) {
  Rng rng(1);
  EXPECT_THROW(TemporalEncoder(7, 1.0, rng), Error);
  EXPECT_THROW(TemporalEncoder(0, 1.0, rng), Error);
  EXPECT_THROW(TemporalEncoder(8, 0.0, rng), Error);
  EXPECT_THROW(TemporalEncoder(std::vector<double>{}), Error);
}

TEST(TemporalEncoder, FrequencyGradientMatchesFiniteDifference) {
  Rng rng(11);
  TemporalEncoder enc(6, 1.0, rng);
  std::vector<double> times{0.7, -1.3, 2.2};
  auto loss = [&] {
    auto coeff = ad::Tensor::constant({3, 6}, {0.3, -1, 2, 0.5, 1, -0.4, 1, 1, -1, 0.2, 0.1, 0.9,
                                               -0.6, 0.8, 0.4, -2, 1.5, 0.3});
    return ad::sum(ad::mul(enc.encode(times), coeff));
  };
  std::vector<ad::Tensor> params{enc.frequencies()};
  auto r = testkit::gradient_check(params, loss);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(TemporalEncoder, SingleEntryDerivative) {
  TemporalEncoder enc(std::vector<double>{0.8, 1.7});
  const double t = 1.9;
  auto row = enc.encode(std::span<const double>(&t, 1));
  auto loss = ad::sum(ad::slice(row, 1, 2));  // cos(w_1 t)
  ad::backward(loss);
  EXPECT_NEAR(enc.frequencies().grad()[1], -t * std::sin(1.7 * t), 1e-12);
  EXPECT_EQ(enc.frequencies().grad()[0], 0.0);
}

class KernelIdentities : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(KernelIdentities, HoldForRandomParameters) {
  Rng rng(GetParam());
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  std::uniform_real_distribution<double> sig(0.1, 5.0);
  TemporalEncoder enc(2 * (1 + GetParam() % 16), sig(rng), rng);
  // Perturb frequencies as training would.
  for (double& w : enc.frequencies().mutable_values()) w += 0.3 * u(rng) / 50.0;
  const double half = static_cast<double>(enc.dim() / 2);
  for (int trial = 0; trial < 50; ++trial) {
    double a = u(rng), b = u(rng), c = u(rng);
    EXPECT_NEAR(enc.kernel(a, b), enc.kernel_by_difference(a, b), 1e-9);
    EXPECT_NEAR(enc.kernel(a, b), enc.kernel(a + c, b + c), 1e-9);
    EXPECT_NEAR(enc.kernel(a, a), half, 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, KernelIdentities, ::testing::Range<std::uint64_t>(1, 21));

TEST(TemporalEncoder, ApproximatesGaussianKernel) {
  Rng rng(2024);
  TemporalEncoder enc(4096, 1.0, rng);
  for (double delta : {0.0, 0.5, 1.0, 2.0}) {
    double normalised = 2.0 / 4096.0 * enc.kernel(3.0, 3.0 + delta);
    EXPECT_NEAR(normalised, std::exp(-delta * delta / 2.0), 0.05) << "delta " << delta;
  }
}

TEST(FrameOf, Examples) {
  EXPECT_EQ(frame_of(0.0, 24, 3600.0), 0u);
  EXPECT_EQ(frame_of(86401.0, 24, 3600.0), 0u);
  EXPECT_EQ(frame_of(8.5 * 3600.0, 24, 3600.0), 8u);
  EXPECT_EQ(frame_of(86399.999, 24, 3600.0), 23u);
  EXPECT_EQ(frame_of(-1.0, 24, 3600.0), 23u);
}

TEST(FrameOf, MatchesIntegerArithmetic) {
  Rng rng(5);
  std::uniform_int_distribution<long> secs(0, 86400L * 40);
  for (int i = 0; i < 2000; ++i) {
    long s = secs(rng);
    EXPECT_EQ(frame_of(static_cast<double>(s), 48, 1800.0),
              static_cast<std::size_t>((s % 86400) / 1800));
  }
}

TEST(FrameEmbedding, LookupRows) {
  Rng rng(3);
  FrameEmbedding fe(24, 4, rng, 0.1);
  EXPECT_EQ(fe.frames(), 24u);
  std::vector<std::size_t> idx{5, 0, 5};
  auto rows = fe.lookup(idx);
  ASSERT_EQ(rows.shape(), (ad::Shape{3, 4}));
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(rows.at(k), fe.table().at(5 * 4 + k));
    EXPECT_EQ(rows.at(8 + k), fe.table().at(5 * 4 + k));
    EXPECT_EQ(rows.at(4 + k), fe.table().at(k));
  }
  EXPECT_THROW(FrameEmbedding(0, 4, rng, 0.1), Error);
}
