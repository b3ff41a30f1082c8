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

#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <numeric>
#include <vector>

#include "bire/model.hpp"

namespace bire {

inline constexpr double kRidge = 1e-6;
inline constexpr double kVarianceFloor = 1e-6;
inline constexpr int kIrlsMaxIters = 100;
inline constexpr double kIrlsTol = 1e-8;

struct PriorRegression {
  Matrix weights;        // q x p, one row per target column
  Vector rss;            // q
  double sigma2 = 0;     // pooled: (sum(sum_var) + sum(rss)) / (q n)
  Vector sigma2_per_dim; // (sum_var_k + rss_k) / n
};

/// Ridge-stabilised least squares of every target column on `features`,
/// with the matching prior-variance updates. `sum_var(k)` is the summed
/// posterior variance of target column k.
inline PriorRegression fit_prior_regression(const Eigen::Ref<const Matrix>& targets,
                                            const RowMatrix& features, const Vector& sum_var) {
  const Index n = targets.rows(), q = targets.cols();
  require(n >= 1 && q >= 1, "fit_prior_regression: empty targets");
  require(features.rows() == n, "fit_prior_regression: feature rows must match targets");
  require(sum_var.size() == q, "fit_prior_regression: one variance sum per target column");
  require((sum_var.array() >= 0).all(), "fit_prior_regression: negative variance sum");

  Matrix gram = features.transpose() * features;
  gram.diagonal().array() += kRidge;
  const Eigen::LDLT<Matrix> ldlt(gram);
  const Matrix w = ldlt.solve(features.transpose() * targets);  // p x q

  PriorRegression out;
  out.weights = w.transpose();
  out.rss = (targets - features * w).colwise().squaredNorm().transpose();
  const double dn = static_cast<double>(n);
  out.sigma2 = std::max((sum_var.sum() + out.rss.sum()) / (static_cast<double>(q) * dn), kVarianceFloor);
  out.sigma2_per_dim = ((sum_var + out.rss) / dn).cwiseMax(kVarianceFloor);
  return out;
}

struct LogisticFit {
  Vector weights;
  bool converged = false;
  int iterations = 0;
};

/// Penalised log-likelihood maximised by fit_f_logistic:
/// sum_k loglik(y_k, offset_k + x_k w) - ridge/2 |w|^2.
inline double offset_logistic_objective(const Dataset& d, const Vector& offsets, const Vector& w) {
  const Vector eta = offsets + d.event_features() * w;
  double obj = -0.5 * kRidge * w.squaredNorm();
  for (Index k = 0; k < d.size(); ++k) obj += math::bernoulli_loglik(d[k].y, eta(k));
  return obj;
}

inline Vector offset_logistic_gradient(const Dataset& d, const Vector& offsets, const Vector& w) {
  const Vector eta = offsets + d.event_features() * w;
  Vector resid(d.size());
  for (Index k = 0; k < d.size(); ++k) resid(k) = d[k].y - math::logistic(eta(k));
  return d.event_features().transpose() * resid - kRidge * w;
}

/// Logistic regression of y on the event covariates with fixed per-
/// observation offsets, by Newton/IRLS with step halving.
inline LogisticFit fit_f_logistic(const Dataset& d, const Vector& offsets,
                                  const Vector* init = nullptr) {
  require(offsets.size() == d.size(), "fit_f_logistic: one offset per observation");
  require(offsets.allFinite(), "fit_f_logistic: offsets must be finite");
  const Index p = d.event_dim();
  const auto& X = d.event_features();
  LogisticFit fit;
  fit.weights = init ? *init : Vector::Zero(p);
  require(fit.weights.size() == p, "fit_f_logistic: initial weights dimension");

  double obj = offset_logistic_objective(d, offsets, fit.weights);
  Vector prob(d.size()), wts(d.size());
  for (fit.iterations = 1; fit.iterations <= kIrlsMaxIters; ++fit.iterations) {
    const Vector eta = offsets + X * fit.weights;
    for (Index k = 0; k < d.size(); ++k) {
      prob(k) = math::logistic(eta(k));
      wts(k) = prob(k) * (1 - prob(k));
    }
    Vector resid(d.size());
    for (Index k = 0; k < d.size(); ++k) resid(k) = d[k].y - prob(k);
    const Vector grad = X.transpose() * resid - kRidge * fit.weights;
    Matrix hess = X.transpose() * wts.asDiagonal() * X;
    hess.diagonal().array() += kRidge;
    const Vector step = hess.ldlt().solve(grad);

    double t = 1.0;
    Vector next = fit.weights + step;
    double next_obj = offset_logistic_objective(d, offsets, next);
    for (int h = 0; h < 30 && next_obj < obj; ++h) {
      t *= 0.5;
      next = fit.weights + t * step;
      next_obj = offset_logistic_objective(d, offsets, next);
    }
    if (next_obj < obj) break;  // no ascent possible along the Newton direction
    const double moved = (t * step).cwiseAbs().maxCoeff();
    fit.weights = std::move(next);
    obj = next_obj;
    if (moved < kIrlsTol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    fit.converged = offset_logistic_gradient(d, offsets, fit.weights).norm() < 1e-6;
    fit.iterations = std::min(fit.iterations, kIrlsMaxIters);
  }
  return fit;
}

/// Plug-in offsets alpha_i + beta_j + u_i'v_j at the posterior means.
inline Vector plug_in_offsets(const LatentState& means, const Dataset& d) {
  Vector o(d.size());
  for (Index k = 0; k < d.size(); ++k) {
    const auto& ob = d[k];
    o(k) = means.alpha(ob.user) + means.beta(ob.item) + means.U.row(ob.user).dot(means.V.row(ob.item));
  }
  return o;
}

struct MStepResult {
  Hyperparams theta;
  bool f_converged = true;
};

/// Maximises q_t(Theta): five separate regressions. Under ARSID the user
/// factor prior becomes a per-dimension diagonal and sigma2_v stays at 1.
inline MStepResult run_mstep(const SufficientStats& st, const Dataset& d, const Hyperparams& current,
                             Method method) {
  current.check_against(d);
  const Index M = d.num_users(), N = d.num_items(), r = current.factors();
  require(st.mean_alpha.size() == M && st.mean_beta.size() == N && st.mean_U.rows() == M &&
              st.mean_V.rows() == N && st.mean_U.cols() == r && st.mean_V.cols() == r,
          "run_mstep: statistics do not match the dataset");
  const bool arsid = method == Method::kArsId;

  MStepResult out;
  Hyperparams& t = out.theta;
  t = current;
  t.diagonal_u = arsid;

  if (M > 0) {
    const auto a = fit_prior_regression(st.mean_alpha, d.user_features(), Vector::Constant(1, st.sum_var_alpha));
    t.g_w = a.weights.row(0).transpose();
    t.sigma2_alpha = a.sigma2;
    const auto u = fit_prior_regression(Matrix(st.mean_U), d.user_features(), st.per_coord_var_U);
    t.G_w = u.weights;
    if (arsid)
      t.sigma2_u = u.sigma2_per_dim;
    else
      t.sigma2_u = Vector::Constant(r, u.sigma2);
  }
  if (N > 0) {
    const auto b = fit_prior_regression(st.mean_beta, d.item_features(), Vector::Constant(1, st.sum_var_beta));
    t.h_w = b.weights.row(0).transpose();
    t.sigma2_beta = b.sigma2;
    const auto v = fit_prior_regression(Matrix(st.mean_V), d.item_features(), st.per_coord_var_V);
    t.H_w = v.weights;
    t.sigma2_v = arsid ? 1.0 : v.sigma2;
  }

  const auto fit = fit_f_logistic(d, plug_in_offsets(st.means(), d), &current.f_w);
  t.f_w = fit.weights;
  out.f_converged = fit.converged;
  return out;
}

/// Sorts the diagonal of Sigma_u into non-increasing order and applies the
/// same permutation to the rows of G and H and the columns of U and V.
/// Returns the permutation (new position k holds old dimension perm[k]).
inline std::vector<Index> enforce_ordered_variances(Hyperparams& t, LatentState& s) {
  const Index r = t.factors();
  std::vector<Index> perm(static_cast<std::size_t>(r));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::stable_sort(perm.begin(), perm.end(),
                   [&](Index a, Index b) { return t.sigma2_u(a) > t.sigma2_u(b); });
  const Hyperparams old_t = t;
  const LatentState old_s = s;
  for (Index k = 0; k < r; ++k) {
    const Index from = perm[static_cast<std::size_t>(k)];
    t.sigma2_u(k) = old_t.sigma2_u(from);
    t.G_w.row(k) = old_t.G_w.row(from);
    t.H_w.row(k) = old_t.H_w.row(from);
    if (s.U.cols() == r) s.U.col(k) = old_s.U.col(from);
    if (s.V.cols() == r) s.V.col(k) = old_s.V.col(from);
  }
  return perm;
}

}  // namespace bire
