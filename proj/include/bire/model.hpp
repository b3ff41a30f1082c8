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

// Domain types of the regression-based bilinear random effects model:
//
//   y_ij ~ Bernoulli(logistic(s_ij)),
//   s_ij = f(x_ij) + alpha_i + beta_j + u_i' v_j,
//   alpha_i ~ N(g(x_i), s2_alpha),  u_i ~ N(G x_i, s2_u I or diag),
//   beta_j  ~ N(h(x_j), s2_beta),   v_j ~ N(H x_j, s2_v I).
//
// All regressions are linear in the covariates. Every covariate matrix
// carries an intercept in column 0.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "bire/common.hpp"

namespace bire {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

struct Observation {
  Index user = 0;
  Index item = 0;
  int y = 0;
};

/// Binary observations plus covariate tables, with per-user and per-item
/// observation lists stored in compressed (offset + index) form.
class Dataset {
 public:
  Dataset() = default;

  /// Validates and indexes. `event_features` may have zero rows, in which
  /// case f is intercept-only; otherwise it must have one row per observation
  /// and already include the intercept column.
  Dataset(std::vector<Observation> observations, RowMatrix user_features,
          RowMatrix item_features, RowMatrix event_features = {})
      : observations_(std::move(observations)),
        user_features_(std::move(user_features)),
        item_features_(std::move(item_features)),
        event_features_(std::move(event_features)) {
    const Index n = size();
    if (event_features_.rows() == 0) event_features_ = RowMatrix::Ones(n, 1);
    require(event_features_.rows() == n, "event feature rows must match observation count");
    require(user_features_.cols() >= 1 && item_features_.cols() >= 1 &&
                event_features_.cols() >= 1,
            "feature tables need at least the intercept column");
    for (const auto& o : observations_) {
      require(o.y == 0 || o.y == 1, "label must be 0 or 1");
      require(o.user >= 0 && o.user < num_users(), "user index out of range");
      require(o.item >= 0 && o.item < num_items(), "item index out of range");
    }
    build_index(true, user_offsets_, user_obs_);
    build_index(false, item_offsets_, item_obs_);
  }

  Index size() const { return static_cast<Index>(observations_.size()); }
  Index num_users() const { return user_features_.rows(); }
  Index num_items() const { return item_features_.rows(); }
  Index user_dim() const { return user_features_.cols(); }
  Index item_dim() const { return item_features_.cols(); }
  Index event_dim() const { return event_features_.cols(); }

  const std::vector<Observation>& observations() const { return observations_; }
  const Observation& operator[](Index k) const { return observations_[static_cast<std::size_t>(k)]; }
  const RowMatrix& user_features() const { return user_features_; }
  const RowMatrix& item_features() const { return item_features_; }
  const RowMatrix& event_features() const { return event_features_; }

  /// Observation ordinals of user i (J_i) and of item j (I_j).
  std::span<const Index> by_user(Index i) const {
    return {user_obs_.data() + user_offsets_[i], user_obs_.data() + user_offsets_[i + 1]};
  }
  std::span<const Index> by_item(Index j) const {
    return {item_obs_.data() + item_offsets_[j], item_obs_.data() + item_offsets_[j + 1]};
  }

  double positive_rate() const {
    if (observations_.empty()) return 0.0;
    double pos = 0;
    for (const auto& o : observations_) pos += o.y;
    return pos / static_cast<double>(observations_.size());
  }

 private:
  void build_index(bool users, std::vector<Index>& offsets, std::vector<Index>& obs) const {
    const Index groups = users ? num_users() : num_items();
    offsets.assign(static_cast<std::size_t>(groups + 1), 0);
    for (const auto& o : observations_) ++offsets[static_cast<std::size_t>((users ? o.user : o.item) + 1)];
    for (Index g = 0; g < groups; ++g) offsets[g + 1] += offsets[g];
    obs.resize(observations_.size());
    std::vector<Index> cursor(offsets.begin(), offsets.end() - 1);
    for (Index k = 0; k < size(); ++k) {
      const auto& o = observations_[static_cast<std::size_t>(k)];
      obs[static_cast<std::size_t>(cursor[users ? o.user : o.item]++)] = k;
    }
  }

  std::vector<Observation> observations_;
  RowMatrix user_features_;
  RowMatrix item_features_;
  RowMatrix event_features_;
  std::vector<Index> user_offsets_{0}, user_obs_;
  std::vector<Index> item_offsets_{0}, item_obs_;
};

/// Theta: regression weights and prior variances.
namespace detail {

/// Exact equality that tolerates differing shapes.
template <class A, class B>
bool same(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace detail

struct Hyperparams {
  Vector f_w;   // p_f
  Vector g_w;   // p_u
  Vector h_w;   // p_v
  Matrix G_w;   // r x p_u
  Matrix H_w;   // r x p_v
  double sigma2_alpha = 1.0;
  double sigma2_beta = 1.0;
  Vector sigma2_u;  // r entries; all equal unless diagonal_u
  bool diagonal_u = false;
  double sigma2_v = 1.0;

  Index factors() const { return G_w.rows(); }

  static Hyperparams zeros(Index r, Index p_f, Index p_u, Index p_v, bool diagonal = false) {
    require(r >= 1 && p_f >= 1 && p_u >= 1 && p_v >= 1, "Hyperparams dimensions must be >= 1");
    Hyperparams t;
    t.f_w = Vector::Zero(p_f);
    t.g_w = Vector::Zero(p_u);
    t.h_w = Vector::Zero(p_v);
    t.G_w = Matrix::Zero(r, p_u);
    t.H_w = Matrix::Zero(r, p_v);
    t.sigma2_u = Vector::Ones(r);
    t.diagonal_u = diagonal;
    return t;
  }

  /// Scalar sigma2_u view; only meaningful when !diagonal_u.
  double sigma2_u_scalar() const { return sigma2_u(0); }

  void check_against(const Dataset& d) const {
    require(f_w.size() == d.event_dim(), "f weights do not match event covariate dimension");
    require(g_w.size() == d.user_dim() && G_w.cols() == d.user_dim(),
            "user regression weights do not match user covariate dimension");
    require(h_w.size() == d.item_dim() && H_w.cols() == d.item_dim(),
            "item regression weights do not match item covariate dimension");
    require(H_w.rows() == factors() && sigma2_u.size() == factors(),
            "factor dimension mismatch inside Hyperparams");
  }

  void check_variances() const {
    require(sigma2_alpha > 0 && sigma2_beta > 0 && sigma2_v > 0 && (sigma2_u.array() > 0).all(),
            "variances must be positive");
  }

  bool operator==(const Hyperparams& o) const {
    return detail::same(f_w, o.f_w) && detail::same(g_w, o.g_w) && detail::same(h_w, o.h_w) &&
           detail::same(G_w, o.G_w) && detail::same(H_w, o.H_w) && sigma2_alpha == o.sigma2_alpha &&
           sigma2_beta == o.sigma2_beta && detail::same(sigma2_u, o.sigma2_u) && diagonal_u == o.diagonal_u &&
           sigma2_v == o.sigma2_v;
  }
};

/// Delta: per-user and per-item random effects.
struct LatentState {
  Vector alpha;  // M
  Vector beta;   // N
  RowMatrix U;   // M x r
  RowMatrix V;   // N x r

  static LatentState zeros(Index M, Index N, Index r) {
    return {Vector::Zero(M), Vector::Zero(N), RowMatrix::Zero(M, r), RowMatrix::Zero(N, r)};
  }

  void check_against(const Dataset& d, Index r) const {
    require(alpha.size() == d.num_users() && U.rows() == d.num_users(),
            "user effects do not match user count");
    require(beta.size() == d.num_items() && V.rows() == d.num_items(),
            "item effects do not match item count");
    require(U.cols() == r && V.cols() == r, "factor dimension mismatch in LatentState");
  }

  bool operator==(const LatentState& o) const {
    return detail::same(alpha, o.alpha) && detail::same(beta, o.beta) && detail::same(U, o.U) &&
           detail::same(V, o.V);
  }
};

/// Monte Carlo posterior summaries produced by an E-step and consumed by the
/// M-step.
struct SufficientStats {
  Vector mean_alpha;
  Vector mean_beta;
  RowMatrix mean_U;
  RowMatrix mean_V;
  double sum_var_alpha = 0;
  double sum_var_beta = 0;
  double sum_var_U = 0;
  double sum_var_V = 0;
  Vector per_coord_var_U;  // r
  Vector per_coord_var_V;  // r
  Index L = 1;

  LatentState means() const { return {mean_alpha, mean_beta, mean_U, mean_V}; }
};

// ---------------------------------------------------------------------------
// Prior means.

inline double user_prior_mean(const Hyperparams& t, const Dataset& d, Index i) {
  return d.user_features().row(i).dot(t.g_w);
}
inline double item_prior_mean(const Hyperparams& t, const Dataset& d, Index j) {
  return d.item_features().row(j).dot(t.h_w);
}
inline Vector user_factor_prior_mean(const Hyperparams& t, const Dataset& d, Index i) {
  return t.G_w * d.user_features().row(i).transpose();
}
inline Vector item_factor_prior_mean(const Hyperparams& t, const Dataset& d, Index j) {
  return t.H_w * d.item_features().row(j).transpose();
}

/// f(x_ij) for every observation.
inline Vector event_offsets(const Hyperparams& t, const Dataset& d) {
  return d.event_features() * t.f_w;
}

/// Log odds of one observation, given its event covariate row.
inline double log_odds(const Hyperparams& t, const LatentState& s, const Observation& o,
                       const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (x.size() != t.f_w.size() || s.U.cols() != t.factors() || s.V.cols() != t.factors() || o.user < 0 ||
      o.user >= s.alpha.size() || o.item < 0 || o.item >= s.beta.size())
    throw ContractViolation("log_odds: dimension mismatch");
  return x.dot(t.f_w) + s.alpha(o.user) + s.beta(o.item) + s.U.row(o.user).dot(s.V.row(o.item));
}

inline double log_odds(const Hyperparams& t, const LatentState& s, const Dataset& d, Index k) {
  return log_odds(t, s, d[k], d.event_features().row(k));
}

inline double predict_probability(const Hyperparams& t, const LatentState& s, const Observation& o,
                                  const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return math::logistic(log_odds(t, s, o, x));
}

inline double predict_probability(const Hyperparams& t, const LatentState& s, const Dataset& d,
                                  Index k) {
  return math::logistic(log_odds(t, s, d, k));
}

/// log Pr[y, Delta | Theta] without its additive constant.
inline double complete_data_log_likelihood(const Hyperparams& t, const LatentState& s,
                                           const Dataset& d) {
  t.check_against(d);
  s.check_against(d, t.factors());
  t.check_variances();
  const Index M = d.num_users(), N = d.num_items(), r = t.factors();

  double ll = 0;
  const Vector f = event_offsets(t, d);
  for (Index k = 0; k < d.size(); ++k) {
    const auto& o = d[k];
    const double sij = f(k) + s.alpha(o.user) + s.beta(o.item) + s.U.row(o.user).dot(s.V.row(o.item));
    ll += math::bernoulli_loglik(o.y, sij);
  }

  const Vector ga = d.user_features() * t.g_w;
  const Vector hb = d.item_features() * t.h_w;
  ll -= (s.alpha - ga).squaredNorm() / (2 * t.sigma2_alpha) + 0.5 * M * std::log(t.sigma2_alpha);
  ll -= (s.beta - hb).squaredNorm() / (2 * t.sigma2_beta) + 0.5 * N * std::log(t.sigma2_beta);

  const Matrix du = s.U - d.user_features() * t.G_w.transpose();
  const Matrix dv = s.V - d.item_features() * t.H_w.transpose();
  if (t.diagonal_u) {
    for (Index k = 0; k < r; ++k)
      ll -= du.col(k).squaredNorm() / (2 * t.sigma2_u(k)) + 0.5 * M * std::log(t.sigma2_u(k));
  } else {
    const double s2 = t.sigma2_u_scalar();
    ll -= du.squaredNorm() / (2 * s2) + 0.5 * M * r * std::log(s2);
  }
  ll -= dv.squaredNorm() / (2 * t.sigma2_v) + 0.5 * N * r * std::log(t.sigma2_v);
  return ll;
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct SyntheticSpec {
  Index M = 100;
  Index N = 20;
  Index r = 2;
  Index p_u = 3;  // including intercept
  Index p_v = 3;
  Index p_f = 1;
  Index events_per_user = 10;
  /// Generating Theta. When absent, weights and variances are drawn randomly.
  std::optional<Hyperparams> theta;
  /// Zero prior variances are allowed here (degenerate priors).
  std::uint64_t seed = 1;
};

struct SyntheticTruth {
  Hyperparams theta;
  LatentState delta;
  Dataset dataset;
};

inline SyntheticTruth generate_synthetic(const SyntheticSpec& spec) {
  require(spec.M >= 1 && spec.N >= 1 && spec.r >= 1 && spec.p_u >= 1 && spec.p_v >= 1 &&
              spec.p_f >= 1 && spec.events_per_user >= 0,
          "generate_synthetic: degenerate sizes");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> z;

  Hyperparams theta;
  if (spec.theta) {
    theta = *spec.theta;
  } else {
    theta = Hyperparams::zeros(spec.r, spec.p_f, spec.p_u, spec.p_v);
    auto fill = [&](auto& m, double sd) {
      for (Index a = 0; a < m.rows(); ++a)
        for (Index b = 0; b < m.cols(); ++b) m(a, b) = sd * z(rng);
    };
    fill(theta.g_w, 0.5);
    fill(theta.h_w, 0.5);
    fill(theta.G_w, 0.5);
    fill(theta.H_w, 0.5);
    theta.f_w(0) = -1.0;
    theta.sigma2_alpha = theta.sigma2_beta = 0.5;
    theta.sigma2_u.setConstant(0.5);
    theta.sigma2_v = 0.5;
  }
  require(theta.g_w.size() == spec.p_u && theta.h_w.size() == spec.p_v &&
              theta.f_w.size() == spec.p_f && theta.factors() == spec.r,
          "generate_synthetic: theta dimensions disagree with spec");
  require(theta.sigma2_alpha >= 0 && theta.sigma2_beta >= 0 && theta.sigma2_v >= 0 &&
              (theta.sigma2_u.array() >= 0).all(),
          "generate_synthetic: negative variance");

  auto features = [&](Index rows, Index cols) {
    RowMatrix x(rows, cols);
    for (Index a = 0; a < rows; ++a) {
      x(a, 0) = 1.0;
      for (Index b = 1; b < cols; ++b) x(a, b) = z(rng);
    }
    return x;
  };
  RowMatrix xu = features(spec.M, spec.p_u);
  RowMatrix xv = features(spec.N, spec.p_v);

  LatentState delta = LatentState::zeros(spec.M, spec.N, spec.r);
  const double sa = std::sqrt(theta.sigma2_alpha), sb = std::sqrt(theta.sigma2_beta);
  const double sv = std::sqrt(theta.sigma2_v);
  for (Index i = 0; i < spec.M; ++i) {
    delta.alpha(i) = xu.row(i).dot(theta.g_w) + sa * z(rng);
    const Vector mu = theta.G_w * xu.row(i).transpose();
    for (Index k = 0; k < spec.r; ++k) {
      const double su = std::sqrt(theta.diagonal_u ? theta.sigma2_u(k) : theta.sigma2_u(0));
      delta.U(i, k) = mu(k) + su * z(rng);
    }
  }
  for (Index j = 0; j < spec.N; ++j) {
    delta.beta(j) = xv.row(j).dot(theta.h_w) + sb * z(rng);
    const Vector mu = theta.H_w * xv.row(j).transpose();
    for (Index k = 0; k < spec.r; ++k) delta.V(j, k) = mu(k) + sv * z(rng);
  }

  const Index n = spec.M * spec.events_per_user;
  std::vector<Observation> obs;
  obs.reserve(static_cast<std::size_t>(n));
  std::vector<Index> items(static_cast<std::size_t>(spec.N));
  for (Index i = 0; i < spec.M; ++i) {
    const bool distinct = spec.events_per_user <= spec.N;
    if (distinct) {
      for (Index j = 0; j < spec.N; ++j) items[j] = j;
    }
    for (Index e = 0; e < spec.events_per_user; ++e) {
      Index j;
      if (distinct) {
        // partial Fisher-Yates
        std::uniform_int_distribution<Index> pick(e, spec.N - 1);
        std::swap(items[e], items[pick(rng)]);
        j = items[e];
      } else {
        j = std::uniform_int_distribution<Index>(0, spec.N - 1)(rng);
      }
      obs.push_back({i, j, 0});
    }
  }

  RowMatrix xe = features(n, spec.p_f);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index k = 0; k < n; ++k) {
    auto& o = obs[static_cast<std::size_t>(k)];
    const double s = xe.row(k).dot(theta.f_w) + delta.alpha(o.user) + delta.beta(o.item) +
                     delta.U.row(o.user).dot(delta.V.row(o.item));
    o.y = unif(rng) < math::logistic(s) ? 1 : 0;
  }

  return {std::move(theta), std::move(delta),
          Dataset(std::move(obs), std::move(xu), std::move(xv), std::move(xe))};
}

}  // namespace bire
