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

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bire/parallel.hpp"

namespace bire {

// ---------------------------------------------------------------------------
// FEAT-ONLY: s = f(x_ij) + g(x_i) + h(x_j) + (G x_i)'(H x_j), no latent state.

struct FeatOnlyModel {
  Vector f_w, g_w, h_w;
  Matrix G_w, H_w;  // r x p_u, r x p_v; r may be 0
  bool converged = false;
  Index iterations = 0;
  double gradient_norm = 0;

  Index factors() const { return G_w.rows(); }

  double log_odds(const Dataset& d, Index k) const {
    const auto& o = d[k];
    const auto xu = d.user_features().row(o.user);
    const auto xv = d.item_features().row(o.item);
    double s = d.event_features().row(k).dot(f_w) + xu.dot(g_w) + xv.dot(h_w);
    if (factors() > 0) s += (G_w * xu.transpose()).dot(H_w * xv.transpose());
    return s;
  }
};

struct FeatOnlyConfig {
  double lambda = 1e-4;       // L2 penalty, on the mean-loss scale
  Index max_iters = 500;
  double gradient_tol = 1e-6;
  Index restart_every = 50;
  std::uint64_t seed = 1;     // symmetry-breaking init of G and H
};

namespace detail {

struct FeatOnlyLayout {
  Index p_f, p_u, p_v, r;
  Index size() const { return p_f + p_u + p_v + r * (p_u + p_v); }
};

inline FeatOnlyModel unpack(const FeatOnlyLayout& L, const Vector& w) {
  FeatOnlyModel m;
  Index o = 0;
  m.f_w = w.segment(o, L.p_f); o += L.p_f;
  m.g_w = w.segment(o, L.p_u); o += L.p_u;
  m.h_w = w.segment(o, L.p_v); o += L.p_v;
  m.G_w = Eigen::Map<const Matrix>(w.data() + o, L.r, L.p_u); o += L.r * L.p_u;
  m.H_w = Eigen::Map<const Matrix>(w.data() + o, L.r, L.p_v);
  return m;
}

inline Vector pack(const FeatOnlyModel& m) {
  const FeatOnlyLayout L{m.f_w.size(), m.g_w.size(), m.h_w.size(), m.factors()};
  Vector w(L.size());
  Index o = 0;
  w.segment(o, L.p_f) = m.f_w; o += L.p_f;
  w.segment(o, L.p_u) = m.g_w; o += L.p_u;
  w.segment(o, L.p_v) = m.h_w; o += L.p_v;
  Eigen::Map<Matrix>(w.data() + o, L.r, L.p_u) = m.G_w; o += L.r * L.p_u;
  Eigen::Map<Matrix>(w.data() + o, L.r, L.p_v) = m.H_w;
  return w;
}

}  // namespace detail

/// Mean logistic loss plus (lambda / 2) * ||w||^2; fills `grad` when given.
inline double feat_only_objective(const FeatOnlyModel& m, const Dataset& d, double lambda,
                                  FeatOnlyModel* grad = nullptr) {
  require(d.size() > 0, "feat_only_objective: empty dataset");
  const Index r = m.factors();
  const Matrix A = d.user_features() * m.G_w.transpose();  // M x r
  const Matrix B = d.item_features() * m.H_w.transpose();  // N x r
  const Vector su = d.user_features() * m.g_w;
  const Vector sv = d.item_features() * m.h_w;
  const Vector sf = d.event_features() * m.f_w;
  const double inv_n = 1.0 / static_cast<double>(d.size());
  Vector e(d.size());
  double loss = 0;
  for (Index k = 0; k < d.size(); ++k) {
    const auto& o = d[k];
    double s = sf(k) + su(o.user) + sv(o.item);
    if (r > 0) s += A.row(o.user).dot(B.row(o.item));
    loss -= math::bernoulli_loglik(o.y, s);
    e(k) = (math::logistic(s) - o.y) * inv_n;
  }
  const Vector w = detail::pack(m);
  loss = loss * inv_n + 0.5 * lambda * w.squaredNorm();
  if (grad) {
    Vector eu = Vector::Zero(d.num_users()), ev = Vector::Zero(d.num_items());
    Matrix bu = Matrix::Zero(d.num_users(), r), av = Matrix::Zero(d.num_items(), r);
    for (Index k = 0; k < d.size(); ++k) {
      const auto& o = d[k];
      eu(o.user) += e(k);
      ev(o.item) += e(k);
      if (r > 0) {
        bu.row(o.user) += e(k) * B.row(o.item);
        av.row(o.item) += e(k) * A.row(o.user);
      }
    }
    grad->f_w = d.event_features().transpose() * e + lambda * m.f_w;
    grad->g_w = d.user_features().transpose() * eu + lambda * m.g_w;
    grad->h_w = d.item_features().transpose() * ev + lambda * m.h_w;
    grad->G_w = bu.transpose() * d.user_features() + lambda * m.G_w;
    grad->H_w = av.transpose() * d.item_features() + lambda * m.H_w;
  }
  return loss;
}

/// Nonlinear conjugate gradient (Polak-Ribiere+, Armijo backtracking). On
/// non-convergence the best iterate is returned with converged = false.
inline FeatOnlyModel fit_feat_only(const Dataset& d, Index r, const FeatOnlyConfig& cfg = {}) {
  require(r >= 0, "fit_feat_only: r must be >= 0");
  require(cfg.lambda >= 0 && cfg.max_iters >= 0 && cfg.restart_every >= 1, "fit_feat_only: invalid config");
  const detail::FeatOnlyLayout L{d.event_dim(), d.user_dim(), d.item_dim(), r};
  FeatOnlyModel init;
  init.f_w = Vector::Zero(L.p_f);
  init.g_w = Vector::Zero(L.p_u);
  init.h_w = Vector::Zero(L.p_v);
  init.G_w = Matrix(r, L.p_u);
  init.H_w = Matrix(r, L.p_v);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> z(0.0, 0.1);
  for (Index a = 0; a < init.G_w.size(); ++a) init.G_w.data()[a] = z(rng);
  for (Index a = 0; a < init.H_w.size(); ++a) init.H_w.data()[a] = z(rng);

  auto eval = [&](const Vector& w, Vector& g) {
    FeatOnlyModel gm;
    const double f = feat_only_objective(detail::unpack(L, w), d, cfg.lambda, &gm);
    g = detail::pack(gm);
    return f;
  };
  Vector w = detail::pack(init), g;
  double f = eval(w, g);
  Vector dir = -g;
  double step = 1.0;
  Index it = 0;
  bool converged = g.norm() <= cfg.gradient_tol;
  for (; it < cfg.max_iters && !converged; ++it) {
    double slope = g.dot(dir);
    if (slope >= 0 || it % cfg.restart_every == 0) {
      dir = -g;
      slope = -g.squaredNorm();
    }
    double t = 2.0 * step;
    Vector w_new, g_new;
    double f_new = 0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, t *= 0.5) {
      w_new = w + t * dir;
      f_new = eval(w_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    step = t;
    const double beta = std::max(0.0, g_new.dot(g_new - g) / g.squaredNorm());
    dir = -g_new + beta * dir;
    w = std::move(w_new);
    g = std::move(g_new);
    f = f_new;
    converged = g.norm() <= cfg.gradient_tol;
  }
  FeatOnlyModel out = detail::unpack(L, w);
  out.converged = converged;
  out.iterations = it;
  out.gradient_norm = g.norm();
  return out;
}

/// Fits FEAT-ONLY on each partition of `plan` and averages the weights.
inline FeatOnlyModel fit_feat_only_partitioned(const Dataset& d, Index r, const PartitionPlan& plan,
                                               const FeatOnlyConfig& cfg, Index worker_budget) {
  const auto shards = partition_dataset(d, plan);
  std::vector<std::optional<FeatOnlyModel>> fits(shards.size());
  run_pool(
      plan.m, worker_budget,
      [&](Index p) {
        if (shards[p].data.size() > 0) fits[p] = fit_feat_only(shards[p].data, r, cfg);
      },
      "partition");
  FeatOnlyModel avg;
  Index count = 0;
  avg.converged = true;
  for (const auto& m : fits) {
    if (!m) continue;
    if (count++ == 0) {
      avg.f_w = m->f_w;
      avg.g_w = m->g_w;
      avg.h_w = m->h_w;
      avg.G_w = m->G_w;
      avg.H_w = m->H_w;
    } else {
      avg.f_w += m->f_w;
      avg.g_w += m->g_w;
      avg.h_w += m->h_w;
      avg.G_w += m->G_w;
      avg.H_w += m->H_w;
    }
    avg.converged = avg.converged && m->converged;
    avg.iterations = std::max(avg.iterations, m->iterations);
  }
  require(count > 0, "fit_feat_only_partitioned: every shard is empty");
  const double inv = 1.0 / static_cast<double>(count);
  avg.f_w *= inv;
  avg.g_w *= inv;
  avg.h_w *= inv;
  avg.G_w *= inv;
  avg.H_w *= inv;
  return avg;
}

// ---------------------------------------------------------------------------
// SGD factorization: s = (alpha_i 1 + u_i + U x_i)'(beta_j 1 + v_j + V x_j).

struct SgdModel {
  Vector alpha, beta;  // M, N
  RowMatrix u, v;      // M x r, N x r
  Matrix U, V;         // r x p_u, r x p_v
  std::vector<double> loss_trace;  // full penalized loss after each pass

  Index factors() const { return u.cols(); }

  Vector user_vector(const Dataset& d, Index i) const {
    return Vector::Constant(factors(), alpha(i)) + u.row(i).transpose() +
           U * d.user_features().row(i).transpose();
  }
  Vector item_vector(const Dataset& d, Index j) const {
    return Vector::Constant(factors(), beta(j)) + v.row(j).transpose() +
           V * d.item_features().row(j).transpose();
  }
  double log_odds(const Dataset& d, Index i, Index j) const { return user_vector(d, i).dot(item_vector(d, j)); }
};

struct SgdConfig {
  double lambda = 1e-4;
  double learning_rate = 1e-2;
  Index passes = 10;
  std::uint64_t seed = 1;
};

/// Loss of observation k with its share of the penalty: lambda/|J_i| on user
/// i's effects, lambda/|I_j| on item j's, lambda/n on U and V. Summed over
/// all observations this is the full objective.
inline double sgd_observation_loss(const SgdModel& m, const Dataset& d, Index k, double lambda) {
  const auto& o = d[k];
  const double s = m.log_odds(d, o.user, o.item);
  const double wu = lambda / static_cast<double>(d.by_user(o.user).size());
  const double wv = lambda / static_cast<double>(d.by_item(o.item).size());
  const double wg = lambda / static_cast<double>(d.size());
  return -math::bernoulli_loglik(o.y, s) + wu * (m.alpha(o.user) * m.alpha(o.user) + m.u.row(o.user).squaredNorm()) +
         wv * (m.beta(o.item) * m.beta(o.item) + m.v.row(o.item).squaredNorm()) +
         wg * (m.U.squaredNorm() + m.V.squaredNorm());
}

inline double sgd_loss(const SgdModel& m, const Dataset& d, double lambda) {
  double loss = 0;
  for (Index k = 0; k < d.size(); ++k) loss -= math::bernoulli_loglik(d[k].y, m.log_odds(d, d[k].user, d[k].item));
  return loss + lambda * (m.alpha.squaredNorm() + m.beta.squaredNorm() + m.u.squaredNorm() + m.v.squaredNorm() +
                          m.U.squaredNorm() + m.V.squaredNorm());
}

/// Gradient of sgd_observation_loss. Only the touched rows are nonzero.
struct SgdGradient {
  Index user = 0, item = 0;
  double alpha = 0, beta = 0;
  Vector u, v;
  Matrix U, V;
};

inline SgdGradient sgd_observation_gradient(const SgdModel& m, const Dataset& d, Index k, double lambda) {
  const auto& o = d[k];
  const Vector a = m.user_vector(d, o.user);
  const Vector b = m.item_vector(d, o.item);
  const double e = math::logistic(a.dot(b)) - o.y;
  const double wu = 2 * lambda / static_cast<double>(d.by_user(o.user).size());
  const double wv = 2 * lambda / static_cast<double>(d.by_item(o.item).size());
  const double wg = 2 * lambda / static_cast<double>(d.size());
  SgdGradient g;
  g.user = o.user;
  g.item = o.item;
  g.alpha = e * b.sum() + wu * m.alpha(o.user);
  g.beta = e * a.sum() + wv * m.beta(o.item);
  g.u = e * b + wu * m.u.row(o.user).transpose();
  g.v = e * a + wv * m.v.row(o.item).transpose();
  g.U = e * b * d.user_features().row(o.user) + wg * m.U;
  g.V = e * a * d.item_features().row(o.item) + wg * m.V;
  return g;
}

inline SgdModel sgd_initialize(const Dataset& d, Index r, std::uint64_t seed) {
  require(r >= 1, "fit_sgd: r must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::normal_distribution<double> z(0.0, 0.1);
  auto fill = [&](auto& x) {
    for (Index a = 0; a < x.size(); ++a) x.data()[a] = z(rng);
  };
  SgdModel m;
  m.alpha.resize(d.num_users());
  m.beta.resize(d.num_items());
  m.u.resize(d.num_users(), r);
  m.v.resize(d.num_items(), r);
  m.U.resize(r, d.user_dim());
  m.V.resize(r, d.item_dim());
  fill(m.alpha);
  fill(m.beta);
  fill(m.u);
  fill(m.v);
  fill(m.U);
  fill(m.V);
  return m;
}

/// Per-observation stochastic gradient descent over `passes` shuffled
/// passes. Throws FitError naming the pass and step on divergence.
inline SgdModel fit_sgd(const Dataset& d, Index r, const SgdConfig& cfg) {
  require(cfg.lambda >= 0, "fit_sgd: lambda must be >= 0");
  require(cfg.learning_rate > 0, "fit_sgd: learning rate must be > 0");
  require(cfg.passes >= 0, "fit_sgd: passes must be >= 0");
  SgdModel m = sgd_initialize(d, r, cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(d.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, 1));
  const double lr = cfg.learning_rate;
  for (Index pass = 0; pass < cfg.passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t step = 0; step < order.size(); ++step) {
      const SgdGradient g = sgd_observation_gradient(m, d, order[step], cfg.lambda);
      m.alpha(g.user) -= lr * g.alpha;
      m.beta(g.item) -= lr * g.beta;
      m.u.row(g.user) -= lr * g.u.transpose();
      m.v.row(g.item) -= lr * g.v.transpose();
      m.U -= lr * g.U;
      m.V -= lr * g.V;
      if (!std::isfinite(m.alpha(g.user)) || !std::isfinite(m.beta(g.item)) || !m.u.row(g.user).allFinite() ||
          !m.v.row(g.item).allFinite() || !m.U.allFinite() || !m.V.allFinite())
        throw FitError("fit_sgd: diverged at pass " + std::to_string(pass) + ", step " + std::to_string(step) +
                       " (observation " + std::to_string(order[step]) + ")");
    }
    const double loss = sgd_loss(m, d, cfg.lambda);
    if (!std::isfinite(loss)) throw FitError("fit_sgd: loss is not finite after pass " + std::to_string(pass));
    m.loss_trace.push_back(loss);
  }
  return m;
}

// ---------------------------------------------------------------------------

/// Log posterior mean of a user's relative preference for a category, from
/// views v, clicks c, the category's global CTR gamma and a Gamma(a, a) prior.
inline double category_profile(double views, double clicks, double gamma, double a = 10.0) {
  require(views >= 0 && clicks >= 0, "category_profile: counts must be >= 0");
  require(gamma > 0 && a > 0, "category_profile: gamma and a must be > 0");
  return std::log((clicks + a) / (views * gamma + a));
}

/// Elementwise over a users x categories table.
inline Matrix category_profile(const Matrix& views, const Matrix& clicks, const Vector& gamma, double a = 10.0) {
  require(views.rows() == clicks.rows() && views.cols() == clicks.cols() && gamma.size() == views.cols(),
          "category_profile: shape mismatch");
  Matrix out(views.rows(), views.cols());
  for (Index i = 0; i < views.rows(); ++i)
    for (Index k = 0; k < views.cols(); ++k) out(i, k) = category_profile(views(i, k), clicks(i, k), gamma(k), a);
  return out;
}

}  // namespace bire
