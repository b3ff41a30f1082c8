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


// Independent oracles and fixtures shared by the test binaries.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/QR>

#include "bire/bire.hpp"

namespace bire::testing {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Two-sided Kolmogorov-Smirnov statistic of `xs` against `cdf`.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// CDF of exp(logp) on [lo, hi] by composite Simpson integration on a fine
/// grid, normalised to 1; evaluated by linear interpolation.
class NumericCdf {
 public:
  NumericCdf(const std::function<double(double)>& logp, double lo, double hi, int cells = 20000)
      : lo_(lo), hi_(hi), h_((hi - lo) / cells), cum_(static_cast<std::size_t>(cells) + 1, 0.0) {
    double peak = -INFINITY;
    for (int i = 0; i <= 2 * cells; ++i) peak = std::max(peak, logp(lo + 0.5 * h_ * i));
    for (int i = 0; i < cells; ++i) {
      const double a = lo + h_ * i;
      const double fa = std::exp(logp(a) - peak), fm = std::exp(logp(a + 0.5 * h_) - peak),
                   fb = std::exp(logp(a + h_) - peak);
      cum_[i + 1] = cum_[i] + h_ / 6 * (fa + 4 * fm + fb);
    }
    for (double& c : cum_) c /= cum_.back();
  }

  double operator()(double x) const {
    if (x <= lo_) return 0;
    if (x >= hi_) return 1;
    const double t = (x - lo_) / h_;
    const auto i = static_cast<std::size_t>(t);
    if (i + 1 >= cum_.size()) return 1;
    return cum_[i] + (t - static_cast<double>(i)) * (cum_[i + 1] - cum_[i]);
  }

 private:
  double lo_, hi_, h_;
  std::vector<double> cum_;
};

/// Gauss-Jordan elimination with partial pivoting; written without Eigen
/// solvers so it is independent of the code under test.
inline std::vector<double> gauss_jordan(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t c = 0; c < n; ++c) b[c] /= a[c][c];
  return b;
}

inline double pearson(const Vector& a, const Vector& b) {
  const Vector x = a.array() - a.mean(), y = b.array() - b.mean();
  return x.dot(y) / std::sqrt(x.squaredNorm() * y.squaredNorm());
}

/// Generating Theta used by the synthetic recovery checks: p_u = p_v = 3,
/// intercept-only f, base rate near 7%.
inline Hyperparams recovery_theta(Index r = 2) {
  Hyperparams t = Hyperparams::zeros(r, 1, 3, 3);
  t.f_w << -3.6;
  t.g_w << 0, 0.8, -0.6;
  t.h_w << 0, 0.5, 0.3;
  for (Index k = 0; k < r; ++k) {
    t.G_w(k, 1 + k % 2) = 0.5;
    t.H_w(k, 1 + k % 2) = 0.5;
  }
  t.sigma2_alpha = 0.5;
  t.sigma2_beta = 0.3;
  t.sigma2_u = Vector::Constant(r, 0.3);
  t.sigma2_v = 0.3;
  return t;
}

/// Random dataset with random Theta and Delta for property checks.
struct RandomProblem {
  Dataset data;
  Hyperparams theta;
  LatentState delta;
};

inline RandomProblem random_problem(std::uint64_t seed, Index M = 6, Index N = 5, Index r = 2,
                                    Index events_per_user = 4, bool diagonal = false) {
  SyntheticSpec spec;
  spec.M = M;
  spec.N = N;
  spec.r = r;
  spec.events_per_user = events_per_user;
  spec.seed = seed;
  auto truth = generate_synthetic(spec);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  truth.theta.sigma2_alpha = u(rng);
  truth.theta.sigma2_beta = u(rng);
  truth.theta.sigma2_v = u(rng);
  truth.theta.diagonal_u = diagonal;
  for (Index k = 0; k < r; ++k) truth.theta.sigma2_u(k) = diagonal ? u(rng) : truth.theta.sigma2_u(0);
  if (!diagonal) truth.theta.sigma2_u.setConstant(u(rng));
  return {truth.dataset, truth.theta, truth.delta};
}

// Conjugate posterior by QR on the whitened augmented least-squares system.
inline GaussianConditional qr_oracle(EffectKind kind, Index index, const LatentState& s, const Hyperparams& t,
                              const Dataset& d, const PseudoResponse& p) {
  const bool user = kind == EffectKind::kAlpha || kind == EffectKind::kU;
  const bool bias = kind == EffectKind::kAlpha || kind == EffectKind::kBeta;
  const Index q = bias ? 1 : t.factors();
  std::vector<Index> obs;
  for (Index k = 0; k < d.size(); ++k)
    if ((user ? d[k].user : d[k].item) == index) obs.push_back(k);
  Matrix A = Matrix::Zero(static_cast<Index>(obs.size()) + q, q);
  Vector b = Vector::Zero(A.rows());
  for (std::size_t n = 0; n < obs.size(); ++n) {
    const Index k = obs[n];
    const auto& o = d[k];
    const double w = 1 / std::sqrt(p.sigma2(k));
    const double f = d.event_features().row(k).dot(t.f_w);
    double target = p.r(k) - f;
    if (bias) {
      target -= (user ? s.beta(o.item) : s.alpha(o.user)) + s.U.row(o.user).dot(s.V.row(o.item));
      A(n, 0) = w;
    } else {
      target -= s.alpha(o.user) + s.beta(o.item);
      A.row(n) = w * (user ? s.V.row(o.item) : s.U.row(o.user));
    }
    b(n) = w * target;
  }
  const Index base = static_cast<Index>(obs.size());
  for (Index c = 0; c < q; ++c) {
    double var, mean;
    if (kind == EffectKind::kAlpha) {
      var = t.sigma2_alpha;
      mean = d.user_features().row(index).dot(t.g_w);
    } else if (kind == EffectKind::kBeta) {
      var = t.sigma2_beta;
      mean = d.item_features().row(index).dot(t.h_w);
    } else if (kind == EffectKind::kU) {
      var = t.diagonal_u ? t.sigma2_u(c) : t.sigma2_u(0);
      mean = t.G_w.row(c).dot(d.user_features().row(index));
    } else {
      var = t.sigma2_v;
      mean = t.H_w.row(c).dot(d.item_features().row(index));
    }
    A(base + c, c) = 1 / std::sqrt(var);
    b(base + c) = mean / std::sqrt(var);
  }
  Eigen::HouseholderQR<Matrix> qr(A);
  const Matrix R = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
  const Vector mean = qr.solve(b);
  const Matrix Rinv = R.triangularView<Eigen::Upper>().solve(Matrix::Identity(q, q));
  return {mean, Rinv * Rinv.transpose()};
}

/// Dataset with no observations.
inline Dataset empty_dataset(Index M, Index N, Index p_u = 1, Index p_v = 1) {
  RowMatrix xu = RowMatrix::Ones(M, p_u), xv = RowMatrix::Ones(N, p_v);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (Index i = 0; i < M; ++i)
    for (Index k = 1; k < p_u; ++k) xu(i, k) = z(rng);
  for (Index j = 0; j < N; ++j)
    for (Index k = 1; k < p_v; ++k) xv(j, k) = z(rng);
  return Dataset({}, std::move(xu), std::move(xv));
}

}  // namespace bire::testing
