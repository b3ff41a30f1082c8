// Copyright 2026 The BIRE Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include "support.hpp"

namespace bire::ars {
namespace {

using testing::ks_statistic;
using testing::NumericCdf;

double std_normal(double x) { return -0.5 * x * x; }

TEST(BuildEnvelope, HandChordsForStandardNormal) {
  const Envelope env = build_envelope(std_normal, {-1.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(env.upper(0.5), 0.25);
  EXPECT_DOUBLE_EQ(std_normal(0.5), -0.125);
  EXPECT_DOUBLE_EQ(env.lower(0.5), -0.25);
  for (std::size_t i = 0; i < env.points().size(); ++i) {
    EXPECT_DOUBLE_EQ(env.upper(env.points()[i]), env.values()[i]);
    EXPECT_DOUBLE_EQ(env.lower(env.points()[i]), env.values()[i]);
  }
}

TEST(BuildEnvelope, MassDominatesTheDensity) {
  const Envelope env = build_envelope(std_normal, {-2.0, 0.0, 2.0});
  EXPECT_GE(env.total_mass(), std::sqrt(2 * M_PI));
  for (const auto& s : env.hull().segments()) EXPECT_TRUE(std::isfinite(s.log_mass));
}

TEST(BuildEnvelope, LowerBoundRestrictsSupport) {
  const Envelope env = build_envelope(std_normal, {0.5, 1.0, 2.0}, 0.0);
  for (const auto& s : env.hull().segments()) {
    EXPECT_GE(s.lo, 0.0);
    EXPECT_GE(s.hi, 0.0);
  }
  EXPECT_EQ(env.hull().support_lo(), 0.0);
}

TEST(BuildEnvelope, ModeNotStraddledCarriesSlopes) {
  try {
    build_envelope(std_normal, {1.0, 2.0, 3.0});
    FAIL() << "expected ModeNotStraddled";
  } catch (const ModeNotStraddled& e) {
    EXPECT_DOUBLE_EQ(e.first_slope, -1.5);
    EXPECT_DOUBLE_EQ(e.last_slope, -2.5);
  }
}

TEST(BuildEnvelope, RejectsBadInput) {
  EXPECT_THROW(build_envelope([](double) { return NAN; }, {-1.0, 0.0, 1.0}), ContractViolation);
  EXPECT_THROW(build_envelope(std_normal, {-1.0, 0.0}), ContractViolation);
  EXPECT_THROW(build_envelope(std_normal, {1.0, 0.0, -1.0}), ContractViolation);
  EXPECT_THROW(build_envelope(std_normal, {-1.0, 0.0, 1.0}, 0.0), ContractViolation);
}

TEST(BuildEnvelope, WideningFindsAFarMode) {
  Envelope env;
  auto far = [](double x) { return -0.5 * (x - 500) * (x - 500); };
  build_envelope_widening(env, far, {-2.0, 0.0, 2.0}, std::nullopt);
  EXPECT_GT(env.points().back(), 500.0);
}

TEST(Sample, StandardNormalPassesKs) {
  Envelope env = build_envelope(std_normal, {-1.0, 0.0, 1.0});
  std::mt19937_64 rng(1);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample(env, std_normal, rng).x);
  EXPECT_LT(ks_statistic(xs, testing::normal_cdf), 0.02);
}

TEST(Sample, TruncatedNormalStaysAboveBoundAndMatchesRenormalisedCdf) {
  const double b = 0.5;
  Envelope env = build_envelope(std_normal, {0.6, 1.0, 2.0}, b);
  std::mt19937_64 rng(2);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample(env, std_normal, rng).x);
  EXPECT_GE(*std::min_element(xs.begin(), xs.end()), b);
  const double tail = 1 - testing::normal_cdf(b);
  EXPECT_LT(ks_statistic(xs, [&](double x) { return (testing::normal_cdf(x) - testing::normal_cdf(b)) / tail; }),
            0.02);

  Envelope zero = build_envelope(std_normal, {0.1, 1.0, 2.0}, 0.0);
  double lo = INFINITY;
  for (int i = 0; i < 10000; ++i) lo = std::min(lo, sample(zero, std_normal, rng).x);
  EXPECT_GE(lo, 0.0);
}

TEST(Sample, ExponentialShapePassesKs) {
  auto logp = [](double x) { return -x; };
  Envelope env = build_envelope(logp, {0.1, 1.0, 3.0}, 0.0);
  std::mt19937_64 rng(3);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample(env, logp, rng).x);
  EXPECT_LT(ks_statistic(xs, [](double x) { return x <= 0 ? 0.0 : 1 - std::exp(-x); }), 0.02);
}

TEST(Sample, DensityEqualToItsHullAlwaysAcceptsFirstTime) {
  auto laplace = [](double x) { return -std::abs(x); };
  Envelope env = build_envelope(laplace, {-2.0, -1.0, 0.0, 1.0, 2.0});
  std::mt19937_64 rng(4);
  for (int i = 0; i < 5000; ++i) EXPECT_EQ(sample(env, laplace, rng).rejections, 0);
}

TEST(Sample, NonLogConcaveTargetIsDetected) {
  auto bumpy = [](double x) { return -0.5 * x * x + 5 * std::exp(-50 * (x - 0.3) * (x - 0.3)); };
  Envelope env = build_envelope(bumpy, {-2.0, -1.0, 1.0, 2.0});
  std::mt19937_64 rng(5);
  EXPECT_THROW(
      {
        for (int i = 0; i < 100000; ++i) sample(env, bumpy, rng);
      },
      EnvelopeViolation);
}

TEST(Sample, RefinementNeverIncreasesMass) {
  Envelope env = build_envelope(std_normal, {-3.0, 0.2, 3.0});
  std::mt19937_64 rng(6);
  double prev = env.total_mass();
  std::size_t points = env.points().size();
  for (int i = 0; i < 2000; ++i) {
    sample(env, std_normal, rng);
    if (env.points().size() != points) {
      EXPECT_LE(env.total_mass(), prev * (1 + 1e-12));
      prev = env.total_mass();
      points = env.points().size();
    }
  }
  EXPECT_LE(env.points().size(), kMaxPoints);
}

TEST(Sample, LogisticGaussianConditionalsPassKs) {
  // Two Gibbs conditionals: few observations with mixed labels, and a
  // skewed one with many negatives.
  LogisticGaussianConditional a{{1.0, 1.0, 1.0}, {-0.5, 0.3, 1.0}, {1, 0, 1}, 0.2, 0.8};
  LogisticGaussianConditional b;
  b.prior_mean = -1;
  b.prior_var = 2;
  for (int k = 0; k < 40; ++k) {
    b.coef.push_back(0.5 + 0.05 * k);
    b.rest.push_back(-2.5);
    b.y.push_back(k % 9 == 0);
  }
  std::mt19937_64 rng(7);
  for (const auto* c : {&a, &b}) {
    Envelope env;
    build_envelope_widening(env, *c, {c->prior_mean - 2, c->prior_mean, c->prior_mean + 2}, std::nullopt);
    std::vector<double> xs;
    for (int i = 0; i < 10000; ++i) xs.push_back(sample(env, *c, rng).x);
    const NumericCdf cdf(*c, c->prior_mean - 15, c->prior_mean + 15);
    EXPECT_LT(ks_statistic(xs, cdf), 0.02);
  }
}

TEST(Envelope, SandwichHoldsOnGrids) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    LogisticGaussianConditional c;
    c.prior_mean = z(rng);
    c.prior_var = u(rng);
    const int n = 1 + trial % 20;
    for (int k = 0; k < n; ++k) {
      c.coef.push_back(z(rng));
      c.rest.push_back(z(rng));
      c.y.push_back(k % 3 == 0);
    }
    Envelope env;
    std::vector<double> init{c.prior_mean - 2, c.prior_mean, c.prior_mean + 2};
    build_envelope_widening(env, c, init, std::nullopt);
    for (int k = 0; k < 5; ++k) sample(env, c, rng);
    const double lo = env.points().front() - 3, hi = env.points().back() + 3;
    for (int g = 0; g < 1000; ++g) {
      const double x = lo + (hi - lo) * g / 999.0;
      const double h = c(x);
      EXPECT_LE(env.lower(x), h + 1e-9);
      EXPECT_GE(env.upper(x), h - 1e-9);
    }
  }
}

HullSegment flat(double lo, double hi) { return {lo, hi, lo, 0.0, 0.0}; }

TEST(SampleHull, UniformSegment) {
  PiecewiseExponential h;
  h.assign({flat(0, 1)});
  std::mt19937_64 rng(9);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) sum += h.sample(rng);
  EXPECT_NEAR(sum / 1e5, 0.5, 0.005);
}

TEST(SampleHull, ExponentialSegment) {
  PiecewiseExponential h;
  h.assign({{0.0, INFINITY, 0.0, 0.0, -1.0}});
  std::mt19937_64 rng(10);
  double sum = 0;
  for (int i = 0; i < 100000; ++i) sum += h.sample(rng);
  EXPECT_NEAR(sum / 1e5, 1.0, 0.01);
}

TEST(SampleHull, EqualMassSegmentsChosenEvenly) {
  PiecewiseExponential h;
  h.assign({flat(0, 1), flat(1, 2)});
  EXPECT_NEAR(h.segment_probability(0), 0.5, 1e-15);
  std::mt19937_64 rng(11);
  int left = 0;
  for (int i = 0; i < 100000; ++i) left += h.sample(rng) < 1.0;
  EXPECT_NEAR(left / 1e5, 0.5, 0.005);
}

TEST(SampleHull, NearFlatSlopeUsesLinearLimit) {
  const HullSegment s{0.0, 1.0, 0.0, 0.0, 1e-14};
  EXPECT_NEAR(PiecewiseExponential::segment_log_mass(s), 0.0, 1e-12);
  EXPECT_NEAR(PiecewiseExponential::invert_segment(s, 0.25), 0.25, 1e-12);
}

TEST(SampleHull, LogSpaceMassesSurviveLargeOffsets) {
  PiecewiseExponential h;
  h.assign({{0.0, 1.0, 0.0, -2000.0, 0.0}, {1.0, 2.0, 1.0, -2000.0, 0.0}});
  EXPECT_NEAR(h.log_total_mass(), -2000.0 + std::log(2.0), 1e-9);
  EXPECT_NEAR(h.segment_probability(1), 0.5, 1e-12);
}

TEST(PercentileWarmStart, UniformHull) {
  PiecewiseExponential h;
  h.assign({flat(0, 1)});
  const auto q = percentile_warm_start(h);
  EXPECT_NEAR(q[0], 0.05, 1e-12);
  EXPECT_NEAR(q[1], 0.5, 1e-12);
  EXPECT_NEAR(q[2], 0.95, 1e-12);
}

TEST(PercentileWarmStart, ExponentialHull) {
  PiecewiseExponential h;
  h.assign({{0.0, INFINITY, 0.0, 0.0, -1.0}});
  const auto q = percentile_warm_start(h);
  EXPECT_NEAR(q[0], -std::log(0.95), 1e-12);
  EXPECT_NEAR(q[1], std::log(2.0), 1e-12);
  EXPECT_NEAR(q[2], -std::log(0.05), 1e-12);
  EXPECT_NEAR(q[0], 0.05129329438755058, 1e-15);
  EXPECT_NEAR(q[1], 0.6931471805599453, 1e-15);
  EXPECT_NEAR(q[2], 2.995732273553991, 1e-14);
}

TEST(PercentileWarmStart, SymmetricEnvelopeHasZeroMedian) {
  const Envelope env = build_envelope(std_normal, {-1.0, 0.0, 1.0});
  EXPECT_NEAR(percentile_warm_start(env)[1], 0.0, 1e-12);
  const Envelope wide = build_envelope(std_normal, {-2.5, -1.0, 0.0, 1.0, 2.5});
  const auto q = percentile_warm_start(wide);
  EXPECT_NEAR(q[1], 0.0, 1e-12);
  EXPECT_NEAR(q[0], -q[2], 1e-12);
}

}  // namespace
}  // namespace bire::ars
