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

namespace bire {
namespace {

Dataset intercept_only(const std::vector<int>& labels, Index M, Index N) {
  std::vector<Observation> obs;
  for (std::size_t k = 0; k < labels.size(); ++k)
    obs.push_back({static_cast<Index>(k) % M, static_cast<Index>(k) % N, labels[k]});
  return Dataset(obs, RowMatrix::Ones(M, 1), RowMatrix::Ones(N, 1));
}

TEST(FeatOnly, InterceptOnlyFitsTheBaseRate) {
  std::vector<int> y;
  for (int k = 0; k < 40; ++k) y.push_back(k % 2);
  auto balanced = fit_feat_only(intercept_only(y, 4, 3), 0);
  EXPECT_TRUE(balanced.converged);
  const Dataset d = intercept_only(y, 4, 3);
  for (Index k = 0; k < d.size(); ++k) EXPECT_NEAR(math::logistic(balanced.log_odds(d, k)), 0.5, 1e-9);

  std::vector<int> skewed(40, 0);
  for (int k = 0; k < 10; ++k) skewed[k * 4] = 1;
  FeatOnlyConfig cfg;
  cfg.lambda = 0;
  const Dataset ds = intercept_only(skewed, 5, 2);
  const auto fit = fit_feat_only(ds, 0, cfg);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(math::logistic(fit.log_odds(ds, 0)), 0.25, 1e-6);
}

TEST(FeatOnly, GradientMatchesFiniteDifferencesAtSolution) {
  SyntheticSpec spec;
  spec.M = 10;
  spec.N = 5;
  spec.events_per_user = 5;
  spec.p_f = 2;
  spec.seed = 3;
  const auto truth = generate_synthetic(spec);
  const Dataset& d = truth.dataset;
  ASSERT_EQ(d.size(), 50);
  FeatOnlyConfig cfg;
  cfg.lambda = 1e-2;
  const auto fit = fit_feat_only(d, 2, cfg);
  FeatOnlyModel grad;
  feat_only_objective(fit, d, cfg.lambda, &grad);
  const Vector w = detail::pack(fit), g = detail::pack(grad);
  const detail::FeatOnlyLayout L{d.event_dim(), d.user_dim(), d.item_dim(), 2};
  double worst = 0;
  for (Index c = 0; c < w.size(); ++c) {
    Vector hi = w, lo = w;
    hi(c) += 1e-6;
    lo(c) -= 1e-6;
    const double fd = (feat_only_objective(detail::unpack(L, hi), d, cfg.lambda) -
                       feat_only_objective(detail::unpack(L, lo), d, cfg.lambda)) / 2e-6;
    worst = std::max(worst, std::abs(fd - g(c)));
  }
  EXPECT_LT(worst, 1e-5);
  EXPECT_LT(fit.gradient_norm, 1e-5);
}

TEST(FeatOnly, UsersWithEqualCovariatesPredictEqually) {
  RowMatrix xu(3, 2);
  xu << 1, 0.5, 1, 0.5, 1, -1;
  RowMatrix xv(2, 2);
  xv << 1, 0.2, 1, -0.7;
  std::vector<Observation> obs{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}, {2, 1, 1}, {2, 0, 0}, {1, 1, 1}};
  const Dataset d(obs, xu, xv);
  const auto fit = fit_feat_only(d, 1);
  EXPECT_EQ(fit.log_odds(d, 0), fit.log_odds(d, 2));
  EXPECT_EQ(fit.log_odds(d, 1), fit.log_odds(d, 5));
}

TEST(FeatOnly, PartitionedFitAveragesShards) {
  SyntheticSpec spec;
  spec.M = 60;
  spec.N = 10;
  spec.events_per_user = 5;
  spec.seed = 4;
  const auto truth = generate_synthetic(spec);
  const auto one = fit_feat_only_partitioned(truth.dataset, 1, {1, 1, PartitionKey::kUser}, {}, 1);
  const auto direct = fit_feat_only(partition_dataset(truth.dataset, {1, 1, PartitionKey::kUser})[0].data, 1);
  EXPECT_TRUE(one.g_w == direct.g_w);
  const auto a = fit_feat_only_partitioned(truth.dataset, 1, {2, 3, PartitionKey::kUser}, {}, 1);
  const auto b = fit_feat_only_partitioned(truth.dataset, 1, {2, 3, PartitionKey::kUser}, {}, 3);
  EXPECT_TRUE(a.G_w == b.G_w);
}

TEST(Sgd, ZeroPassesReturnInitialization) {
  auto p = testing::random_problem(1, 10, 5, 2, 3);
  SgdConfig cfg;
  cfg.passes = 0;
  cfg.seed = 9;
  const auto m = fit_sgd(p.data, 2, cfg);
  const auto init = sgd_initialize(p.data, 2, 9);
  EXPECT_TRUE(m.alpha == init.alpha);
  EXPECT_TRUE(m.u == init.u);
  EXPECT_TRUE(m.V == init.V);
  EXPECT_TRUE(m.loss_trace.empty());
}

TEST(Sgd, HeavyPenaltyShrinksParameters) {
  auto p = testing::random_problem(2, 20, 8, 2, 5);
  SgdConfig cfg;
  cfg.lambda = 1e3;
  cfg.learning_rate = 1e-4;
  cfg.passes = 5;
  const auto init = sgd_initialize(p.data, 2, cfg.seed);
  const auto m = fit_sgd(p.data, 2, cfg);
  EXPECT_LT(m.u.norm(), init.u.norm());
  EXPECT_LT(m.alpha.norm(), init.alpha.norm());
  EXPECT_LT(m.U.norm(), init.U.norm());
}

TEST(Sgd, ObservationGradientMatchesFiniteDifferences) {
  auto p = testing::random_problem(3, 8, 5, 3, 4);
  const double lambda = 0.3;
  SgdModel m = sgd_initialize(p.data, 3, 4);
  m.U *= 5;
  m.V *= 5;
  for (Index k = 0; k < p.data.size(); k += 5) {
    const auto g = sgd_observation_gradient(m, p.data, k, lambda);
    double worst = 0;
    auto probe = [&](double& x, double analytic) {
      const double saved = x;
      x = saved + 1e-6;
      const double hi = sgd_observation_loss(m, p.data, k, lambda);
      x = saved - 1e-6;
      const double lo = sgd_observation_loss(m, p.data, k, lambda);
      x = saved;
      worst = std::max(worst, std::abs((hi - lo) / 2e-6 - analytic));
    };
    probe(m.alpha(g.user), g.alpha);
    probe(m.beta(g.item), g.beta);
    for (Index c = 0; c < 3; ++c) {
      probe(m.u(g.user, c), g.u(c));
      probe(m.v(g.item, c), g.v(c));
      for (Index q = 0; q < m.U.cols(); ++q) probe(m.U(c, q), g.U(c, q));
      for (Index q = 0; q < m.V.cols(); ++q) probe(m.V(c, q), g.V(c, q));
    }
    EXPECT_LT(worst, 1e-5) << "observation " << k;
  }
}

TEST(Sgd, ObservationLossesSumToFullLoss) {
  auto p = testing::random_problem(4, 10, 6, 2, 4);
  const auto m = sgd_initialize(p.data, 2, 3);
  double sum = 0;
  for (Index k = 0; k < p.data.size(); ++k) sum += sgd_observation_loss(m, p.data, k, 0.7);
  EXPECT_NEAR(sum, sgd_loss(m, p.data, 0.7), 1e-10);
}

TEST(Sgd, DeterministicGivenSeed) {
  auto p = testing::random_problem(5, 20, 8, 2, 5);
  SgdConfig cfg;
  cfg.passes = 3;
  const auto a = fit_sgd(p.data, 2, cfg), b = fit_sgd(p.data, 2, cfg);
  EXPECT_TRUE(a.u == b.u);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Sgd, StableGridStaysFinite) {
  SyntheticSpec spec;
  spec.M = 40;
  spec.N = 10;
  spec.events_per_user = 5;
  spec.seed = 6;
  const auto truth = generate_synthetic(spec);
  for (double lambda : {0.0, 1e-6, 1e-5, 1e-4, 1e-3})
    for (double rate : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) {
      SgdConfig cfg;
      cfg.lambda = lambda;
      cfg.learning_rate = rate;
      cfg.passes = 3;
      const auto m = fit_sgd(truth.dataset, 2, cfg);
      for (double l : m.loss_trace) EXPECT_TRUE(std::isfinite(l)) << lambda << " " << rate;
    }
}

TEST(Sgd, DivergenceNamesTheStep) {
  auto p = testing::random_problem(7, 10, 5, 2, 5);
  SgdConfig cfg;
  cfg.learning_rate = 1e150;
  try {
    fit_sgd(p.data, 2, cfg);
    FAIL() << "expected divergence";
  } catch (const FitError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("pass 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
  }
  cfg.learning_rate = 0;
  EXPECT_THROW(fit_sgd(p.data, 2, cfg), ContractViolation);
  cfg.learning_rate = 1e-2;
  cfg.lambda = -1;
  EXPECT_THROW(fit_sgd(p.data, 2, cfg), ContractViolation);
}

TEST(CategoryProfile, Examples) {
  EXPECT_EQ(category_profile(0, 0, 0.05), 0.0);
  for (double a : {0.5, 1.0, 10.0, 100.0}) EXPECT_NEAR(category_profile(200, 10, 0.05, a), 0.0, 1e-15);
  EXPECT_NEAR(category_profile(100, 20, 0.1, 10), 0.4054651081081644, 1e-15);
  EXPECT_THROW(category_profile(-1, 0, 0.1), ContractViolation);
  EXPECT_THROW(category_profile(1, 0, 0.0), ContractViolation);
  EXPECT_THROW(category_profile(1, 0, 0.1, 0.0), ContractViolation);
}

TEST(CategoryProfile, MonotoneInClicksAndViews) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 100);
  for (int trial = 0; trial < 500; ++trial) {
    const double v = u(rng), c = u(rng), g = 0.01 + u(rng) / 100, a = 0.1 + u(rng) / 10;
    EXPECT_GT(category_profile(v, c + 1, g, a), category_profile(v, c, g, a));
    EXPECT_LT(category_profile(v + 1, c, g, a), category_profile(v, c, g, a));
  }
}

TEST(CategoryProfile, TableForm) {
  Matrix views(2, 2), clicks(2, 2);
  views << 0, 100, 200, 10;
  clicks << 0, 20, 10, 0;
  const Matrix out = category_profile(views, clicks, Vector{{0.05, 0.1}});
  EXPECT_EQ(out(0, 0), 0.0);
  EXPECT_NEAR(out(0, 1), 0.4054651081081644, 1e-15);
  EXPECT_NEAR(out(1, 0), 0.0, 1e-15);
  EXPECT_THROW(category_profile(views, clicks, Vector{{0.05}}), ContractViolation);
}

}  // namespace
}  // namespace bire
