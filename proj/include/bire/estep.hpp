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

// Monte Carlo E-step. Two Gibbs samplers share one driver:
//
//  * VAR replaces every binary label by a Gaussian pseudo-response through
//    the logistic variational bound and draws alpha, beta from scalar and
//    u_i, v_j from r-dimensional Gaussian conditionals.
//  * ARS / ARSID draw every scalar coordinate (alpha_i, beta_j, u_ik, v_jk)
//    exactly from its logistic-Gaussian conditional with adaptive rejection
//    sampling. ARSID truncates v_jk to be positive.

#pragma once

#include <Eigen/Cholesky>

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "bire/ars.hpp"
#include "bire/model.hpp"

namespace bire {

enum class EffectKind { kAlpha, kBeta, kU, kV };

inline const char* effect_name(EffectKind k) {
  switch (k) {
    case EffectKind::kAlpha: return "alpha";
    case EffectKind::kBeta: return "beta";
    case EffectKind::kU: return "u";
    case EffectKind::kV: return "v";
  }
  return "?";
}

inline constexpr double kXiFloor = 1e-6;
inline constexpr double kPositivityBound = 1e-8;

struct EStepConfig {
  Method method = Method::kArs;
  Index L = 10;
  Index burn_in = 2;
  /// Forced off under ARSID.
  bool center_v = true;
  /// Seed ARS abscissae from the previous envelope of the same coordinate.
  bool warm_start = true;
  std::uint64_t rng_seed = 1;

  bool truncate_v() const { return method == Method::kArsId; }
  bool centers_v() const { return center_v && method != Method::kArsId; }
};

// ---------------------------------------------------------------------------
// Variational pseudo-responses.

/// lambda(xi) = tanh(xi / 2) / (4 xi), with its limit 1/8 at 0.
inline double var_lambda(double xi) {
  require(xi >= 0, "var_lambda: xi must be non-negative");
  if (xi < 1e-4) return 0.125 - xi * xi / 96.0;
  return std::tanh(0.5 * xi) / (4.0 * xi);
}

struct PseudoObservation {
  double r;
  double sigma2;
};

inline PseudoObservation var_pseudo(int y, double xi) {
  const double lam = var_lambda(xi);
  return {(2.0 * y - 1.0) / (4.0 * lam), 1.0 / (2.0 * lam)};
}

struct XiTable {
  Vector xi;
};

struct PseudoResponse {
  Vector r;
  Vector sigma2;
};

inline XiTable initial_xi(const Dataset& d) { return {Vector::Ones(d.size())}; }

inline PseudoResponse make_pseudo_response(const Dataset& d, const XiTable& xi) {
  require(xi.xi.size() == d.size(), "xi table does not match the dataset");
  PseudoResponse p{Vector(d.size()), Vector(d.size())};
  for (Index k = 0; k < d.size(); ++k) {
    const auto po = var_pseudo(d[k].y, xi.xi(k));
    p.r(k) = po.r;
    p.sigma2(k) = po.sigma2;
  }
  return p;
}

/// xi = sqrt(E[s^2]) from retained samples of one log odds.
inline double var_update_xi(std::span<const double> samples) {
  require(!samples.empty(), "var_update_xi: no samples");
  double m2 = 0;
  for (double s : samples) m2 += s * s;
  return std::max(std::sqrt(m2 / static_cast<double>(samples.size())), kXiFloor);
}

/// Vectorised form from per-observation second moments E[s^2].
inline XiTable var_update_xi(const Vector& second_moments) {
  XiTable t{second_moments.array().max(0.0).sqrt().max(kXiFloor)};
  return t;
}

// ---------------------------------------------------------------------------
// Gaussian conditionals for VAR.

struct GaussianConditional {
  Vector mean;
  Matrix cov;
};

namespace detail {

inline double prior_var_u(const Hyperparams& t, Index k) {
  return t.diagonal_u ? t.sigma2_u(k) : t.sigma2_u_scalar();
}

/// Precision and linear term of a factor block conditional.
struct FactorSystem {
  Matrix precision;
  Vector linear;
};

inline FactorSystem factor_system(EffectKind kind, Index index, const LatentState& s,
                                  const Hyperparams& t, const Dataset& d,
                                  const PseudoResponse& p, const Vector& f) {
  const Index r = t.factors();
  FactorSystem sys{Matrix::Zero(r, r), Vector::Zero(r)};
  const bool user = kind == EffectKind::kU;
  const Vector mu = user ? user_factor_prior_mean(t, d, index) : item_factor_prior_mean(t, d, index);
  for (Index k = 0; k < r; ++k) {
    const double pv = user ? prior_var_u(t, k) : t.sigma2_v;
    sys.precision(k, k) = 1.0 / pv;
    sys.linear(k) = mu(k) / pv;
  }
  const auto obs = user ? d.by_user(index) : d.by_item(index);
  for (Index k : obs) {
    const auto& o = d[k];
    const double w = 1.0 / p.sigma2(k);
    const double resid = p.r(k) - f(k) - s.alpha(o.user) - s.beta(o.item);
    const auto other = user ? s.V.row(o.item) : s.U.row(o.user);
    sys.precision.noalias() += w * other.transpose() * other;
    sys.linear.noalias() += (w * resid) * other.transpose();
  }
  return sys;
}

}  // namespace detail

/// Exact Gaussian conditional of one effect given everything else and the
/// pseudo-responses. Bias kinds return 1-dimensional results; factor kinds
/// the full r-dimensional block.
inline GaussianConditional var_conditional(EffectKind kind, Index index, const LatentState& s,
                                           const Hyperparams& t, const Dataset& d,
                                           const PseudoResponse& p, const Vector& f) {
  if (kind == EffectKind::kAlpha || kind == EffectKind::kBeta) {
    const bool user = kind == EffectKind::kAlpha;
    const double pv = user ? t.sigma2_alpha : t.sigma2_beta;
    const double pm = user ? user_prior_mean(t, d, index) : item_prior_mean(t, d, index);
    double prec = 1.0 / pv, lin = pm / pv;
    for (Index k : user ? d.by_user(index) : d.by_item(index)) {
      const auto& o = d[k];
      const double other = user ? s.beta(o.item) : s.alpha(o.user);
      const double resid = p.r(k) - f(k) - other - s.U.row(o.user).dot(s.V.row(o.item));
      prec += 1.0 / p.sigma2(k);
      lin += resid / p.sigma2(k);
    }
    GaussianConditional g{Vector(1), Matrix(1, 1)};
    g.cov(0, 0) = 1.0 / prec;
    g.mean(0) = lin / prec;
    return g;
  }
  const auto sys = detail::factor_system(kind, index, s, t, d, p, f);
  Eigen::LLT<Matrix> llt(sys.precision);
  if (llt.info() != Eigen::Success) throw ContractViolation("var_conditional: singular precision");
  const Index r = t.factors();
  return {llt.solve(sys.linear), llt.solve(Matrix::Identity(r, r))};
}

// ---------------------------------------------------------------------------
// Logistic-Gaussian conditionals for ARS.

/// log p(x | Rest) = sum_k loglik(y_k, rest_k + coef_k x) - (x - m)^2 / (2 v)
/// up to a constant. Log-concave in x.
struct LogisticGaussianConditional {
  std::vector<double> coef;
  std::vector<double> rest;
  std::vector<int> y;
  double prior_mean = 0;
  double prior_var = 1;

  double operator()(double x) const {
    double lp = -0.5 * (x - prior_mean) * (x - prior_mean) / prior_var;
    for (std::size_t k = 0; k < coef.size(); ++k) lp += math::bernoulli_loglik(y[k], rest[k] + coef[k] * x);
    return lp;
  }

  void clear() {
    coef.clear();
    rest.clear();
    y.clear();
  }
};

namespace detail {

inline double current_value(EffectKind kind, Index index, Index coord, const LatentState& s) {
  switch (kind) {
    case EffectKind::kAlpha: return s.alpha(index);
    case EffectKind::kBeta: return s.beta(index);
    case EffectKind::kU: return s.U(index, coord);
    case EffectKind::kV: return s.V(index, coord);
  }
  return 0;
}

/// Fills `out` for coordinate (kind, index, coord). When `eta` (current log
/// odds of every observation) is given it is used to form the offsets in
/// O(|obs|); otherwise offsets are recomputed from the state.
inline void fill_conditional(LogisticGaussianConditional& out, EffectKind kind, Index index,
                             Index coord, const LatentState& s, const Hyperparams& t,
                             const Dataset& d, const Vector& f, const Vector* eta) {
  out.clear();
  const bool user = kind == EffectKind::kAlpha || kind == EffectKind::kU;
  switch (kind) {
    case EffectKind::kAlpha:
      out.prior_mean = user_prior_mean(t, d, index);
      out.prior_var = t.sigma2_alpha;
      break;
    case EffectKind::kBeta:
      out.prior_mean = item_prior_mean(t, d, index);
      out.prior_var = t.sigma2_beta;
      break;
    case EffectKind::kU:
      out.prior_mean = t.G_w.row(coord).dot(d.user_features().row(index));
      out.prior_var = prior_var_u(t, coord);
      break;
    case EffectKind::kV:
      out.prior_mean = t.H_w.row(coord).dot(d.item_features().row(index));
      out.prior_var = t.sigma2_v;
      break;
  }
  const double cur = current_value(kind, index, coord, s);
  for (Index k : user ? d.by_user(index) : d.by_item(index)) {
    const auto& o = d[k];
    double c = 1.0;
    if (kind == EffectKind::kU) c = s.V(o.item, coord);
    if (kind == EffectKind::kV) c = s.U(o.user, coord);
    const double full = eta ? (*eta)(k)
                            : f(k) + s.alpha(o.user) + s.beta(o.item) + s.U.row(o.user).dot(s.V.row(o.item));
    out.coef.push_back(c);
    out.rest.push_back(full - c * cur);
    out.y.push_back(o.y);
  }
}

}  // namespace detail

inline double ars_conditional_logdensity(EffectKind kind, Index index, Index coord, double value,
                                         const LatentState& s, const Hyperparams& t,
                                         const Dataset& d) {
  LogisticGaussianConditional c;
  detail::fill_conditional(c, kind, index, coord, s, t, d, event_offsets(t, d), nullptr);
  return c(value);
}

// ---------------------------------------------------------------------------
// Gibbs sampler.

struct SweepDiagnostics {
  std::int64_t ars_draws = 0;
  std::int64_t ars_rejections = 0;
};

/// Owns the per-sweep scratch of one chain. A single writer mutates the
/// LatentState passed to sweep().
class GibbsSampler {
 public:
  GibbsSampler(const Hyperparams& theta, const Dataset& data, const EStepConfig& config,
               const PseudoResponse* pseudo = nullptr)
      : theta_(theta), data_(data), config_(config), pseudo_(pseudo), f_(bire::event_offsets(theta, data)) {
    theta.check_against(data);
    theta.check_variances();
    if (config.method == Method::kVar)
      require(pseudo != nullptr && pseudo->r.size() == data.size(),
              "VAR sweeps need pseudo-responses for every observation");
    const Index r = theta.factors();
    warm_.assign(static_cast<std::size_t>((data.num_users() + data.num_items()) * (1 + r)), {});
  }

  const Vector& event_offsets() const { return f_; }
  const SweepDiagnostics& diagnostics() const { return diag_; }

  /// Forgets the envelopes remembered from previous sweeps.
  void reset_warm_start() { std::fill(warm_.begin(), warm_.end(), std::nullopt); }

  template <class Rng>
  void sweep(LatentState& s, Rng& rng) {
    s.check_against(data_, theta_.factors());
    if (config_.method == Method::kVar)
      sweep_var(s, rng);
    else
      sweep_ars(s, rng);
  }

 private:
  template <class Rng>
  void sweep_var(LatentState& s, Rng& rng) {
    std::normal_distribution<double> z;
    const Index M = data_.num_users(), N = data_.num_items(), r = theta_.factors();
    for (Index i = 0; i < M; ++i) {
      const auto g = var_conditional(EffectKind::kAlpha, i, s, theta_, data_, *pseudo_, f_);
      s.alpha(i) = g.mean(0) + std::sqrt(g.cov(0, 0)) * z(rng);
    }
    for (Index j = 0; j < N; ++j) {
      const auto g = var_conditional(EffectKind::kBeta, j, s, theta_, data_, *pseudo_, f_);
      s.beta(j) = g.mean(0) + std::sqrt(g.cov(0, 0)) * z(rng);
    }
    Vector noise(r);
    for (int pass = 0; pass < 2; ++pass) {
      const bool user = pass == 0;
      const EffectKind kind = user ? EffectKind::kU : EffectKind::kV;
      for (Index a = 0; a < (user ? M : N); ++a) {
        const auto sys = detail::factor_system(kind, a, s, theta_, data_, *pseudo_, f_);
        Eigen::LLT<Matrix> llt(sys.precision);
        if (llt.info() != Eigen::Success) throw ContractViolation("VAR sweep: singular precision");
        const Vector mean = llt.solve(sys.linear);
        for (Index k = 0; k < r; ++k) noise(k) = z(rng);
        // x = mean + L^{-T} z has covariance (L L^T)^{-1}
        const Vector draw = mean + llt.matrixU().solve(noise);
        if (user)
          s.U.row(a) = draw.transpose();
        else
          s.V.row(a) = draw.transpose();
      }
    }
  }

  template <class Rng>
  void sweep_ars(LatentState& s, Rng& rng) {
    const Index M = data_.num_users(), N = data_.num_items(), r = theta_.factors();
    eta_.resize(data_.size());
    for (Index k = 0; k < data_.size(); ++k) {
      const auto& o = data_[k];
      eta_(k) = f_(k) + s.alpha(o.user) + s.beta(o.item) + s.U.row(o.user).dot(s.V.row(o.item));
    }
    for (Index i = 0; i < M; ++i) draw_ars(EffectKind::kAlpha, i, 0, s, rng);
    for (Index j = 0; j < N; ++j) draw_ars(EffectKind::kBeta, j, 0, s, rng);
    for (Index i = 0; i < M; ++i)
      for (Index k = 0; k < r; ++k) draw_ars(EffectKind::kU, i, k, s, rng);
    for (Index j = 0; j < N; ++j)
      for (Index k = 0; k < r; ++k) draw_ars(EffectKind::kV, j, k, s, rng);
  }

  std::size_t warm_slot(EffectKind kind, Index index, Index coord) const {
    const Index M = data_.num_users(), N = data_.num_items(), r = theta_.factors();
    switch (kind) {
      case EffectKind::kAlpha: return static_cast<std::size_t>(index);
      case EffectKind::kBeta: return static_cast<std::size_t>(M + index);
      case EffectKind::kU: return static_cast<std::size_t>(M + N + index * r + coord);
      case EffectKind::kV: return static_cast<std::size_t>(M + N + M * r + index * r + coord);
    }
    return 0;
  }

  std::vector<double> initial_points(EffectKind kind, Index index, Index coord,
                                     std::optional<double> lb) const {
    if (config_.warm_start) {
      if (const auto& w = warm_[warm_slot(kind, index, coord)]) {
        const auto& p = *w;
        const double tol = 1e-9 * (1.0 + std::abs(p[1]));
        if (p[1] - p[0] > tol && p[2] - p[1] > tol && (!lb || p[0] > *lb)) return {p[0], p[1], p[2]};
      }
    }
    const double m = cond_.prior_mean, sd = std::sqrt(cond_.prior_var);
    if (!lb || m - 2 * sd > *lb) return {m - 2 * sd, m, m + 2 * sd};
    const double w = std::max(m + 2 * sd - *lb, sd);
    return {*lb + 0.25 * w, *lb + 0.5 * w, *lb + w};
  }

  template <class Rng>
  void draw_ars(EffectKind kind, Index index, Index coord, LatentState& s, Rng& rng) {
    detail::fill_conditional(cond_, kind, index, coord, s, theta_, data_, f_, &eta_);
    const std::optional<double> lb =
        kind == EffectKind::kV && config_.truncate_v() ? std::optional<double>(kPositivityBound) : std::nullopt;
    double x;
    try {
      ars::build_envelope_widening(env_, cond_, initial_points(kind, index, coord, lb), lb);
      const auto draw = ars::sample(env_, cond_, rng);
      x = draw.x;
      ++diag_.ars_draws;
      diag_.ars_rejections += draw.rejections;
    } catch (const FitError& e) {
      std::ostringstream os;
      os << "ARS failed for " << effect_name(kind) << "[" << index << "]";
      if (kind == EffectKind::kU || kind == EffectKind::kV) os << "[" << coord << "]";
      os << ": " << e.what();
      throw FitError(os.str());
    }
    if (config_.warm_start) warm_[warm_slot(kind, index, coord)] = ars::percentile_warm_start(env_);

    const double old = detail::current_value(kind, index, coord, s);
    const double delta = x - old;
    switch (kind) {
      case EffectKind::kAlpha:
        s.alpha(index) = x;
        for (Index k : data_.by_user(index)) eta_(k) += delta;
        break;
      case EffectKind::kBeta:
        s.beta(index) = x;
        for (Index k : data_.by_item(index)) eta_(k) += delta;
        break;
      case EffectKind::kU:
        s.U(index, coord) = x;
        for (Index k : data_.by_user(index)) eta_(k) += delta * s.V(data_[k].item, coord);
        break;
      case EffectKind::kV:
        s.V(index, coord) = x;
        for (Index k : data_.by_item(index)) eta_(k) += delta * s.U(data_[k].user, coord);
        break;
    }
  }

  const Hyperparams& theta_;
  const Dataset& data_;
  EStepConfig config_;
  const PseudoResponse* pseudo_;
  Vector f_;
  Vector eta_;
  LogisticGaussianConditional cond_;
  ars::Envelope env_;
  std::vector<std::optional<std::array<double, 3>>> warm_;
  SweepDiagnostics diag_;
};

/// One full pass: every alpha_i, then beta_j, then u_i, then v_j.
template <class Rng>
void gibbs_sweep(LatentState& state, const Hyperparams& theta, const Dataset& data,
                 const EStepConfig& config, Rng& rng, const PseudoResponse* pseudo = nullptr) {
  GibbsSampler sampler(theta, data, config, pseudo);
  sampler.sweep(state, rng);
}

// ---------------------------------------------------------------------------
// Centering.

/// Subtracts across-user means from alpha and each column of U, and
/// across-item means from beta and each column of V. V is left alone when
/// `center_v` is false (ARSID).
inline void center(LatentState& s, bool center_v) {
  if (s.alpha.size() > 0) s.alpha.array() -= s.alpha.mean();
  if (s.beta.size() > 0) s.beta.array() -= s.beta.mean();
  if (s.U.rows() > 0) s.U.rowwise() -= s.U.colwise().mean();
  if (center_v && s.V.rows() > 0) s.V.rowwise() -= s.V.colwise().mean();
}

inline void center(SufficientStats& st, bool center_v) {
  LatentState view{std::move(st.mean_alpha), std::move(st.mean_beta), std::move(st.mean_U),
                   std::move(st.mean_V)};
  center(view, center_v);
  st.mean_alpha = std::move(view.alpha);
  st.mean_beta = std::move(view.beta);
  st.mean_U = std::move(view.U);
  st.mean_V = std::move(view.V);
}

// ---------------------------------------------------------------------------
// E-step driver.

struct EStepResult {
  SufficientStats stats;
  LatentState last_sample;
  /// Per-observation Monte Carlo moments of s_ij over retained sweeps
  /// (VAR only; empty otherwise).
  Vector mean_s;
  Vector mean_s2;
  XiTable xi;
  SweepDiagnostics diagnostics;
};

/// burn_in discarded sweeps then L retained sweeps from `start`. Means and
/// variances are per coordinate over the retained sweeps (divisor L); the
/// means are centered afterwards.
inline EStepResult run_estep(const LatentState& start, const Hyperparams& theta, const Dataset& data,
                             const EStepConfig& config, const XiTable* xi = nullptr) {
  require(config.L >= 1 && config.burn_in >= 0, "run_estep: L >= 1 and burn_in >= 0 required");
  const Index M = data.num_users(), N = data.num_items(), r = theta.factors();
  start.check_against(data, r);

  std::optional<PseudoResponse> pseudo;
  if (config.method == Method::kVar) {
    const XiTable x0 = xi ? *xi : initial_xi(data);
    pseudo = make_pseudo_response(data, x0);
  }
  GibbsSampler sampler(theta, data, config, pseudo ? &*pseudo : nullptr);
  std::mt19937_64 rng(config.rng_seed);

  LatentState s = start;
  if (config.truncate_v()) s.V = s.V.cwiseMax(kPositivityBound);
  for (Index b = 0; b < config.burn_in; ++b) sampler.sweep(s, rng);

  // Welford accumulators
  LatentState mean = LatentState::zeros(M, N, r);
  LatentState m2 = LatentState::zeros(M, N, r);
  Vector sum_s, sum_s2;
  if (pseudo) {
    sum_s = Vector::Zero(data.size());
    sum_s2 = Vector::Zero(data.size());
  }
  for (Index l = 1; l <= config.L; ++l) {
    sampler.sweep(s, rng);
    const double inv = 1.0 / static_cast<double>(l);
    auto acc = [inv](auto& mu, auto& sq, const auto& x) {
      const auto d = (x - mu).eval();
      mu += d * inv;
      sq += d.cwiseProduct(x - mu);
    };
    acc(mean.alpha, m2.alpha, s.alpha);
    acc(mean.beta, m2.beta, s.beta);
    acc(mean.U, m2.U, s.U);
    acc(mean.V, m2.V, s.V);
    if (pseudo) {
      const Vector& f = sampler.event_offsets();
      for (Index k = 0; k < data.size(); ++k) {
        const auto& o = data[k];
        const double sk = f(k) + s.alpha(o.user) + s.beta(o.item) + s.U.row(o.user).dot(s.V.row(o.item));
        sum_s(k) += sk;
        sum_s2(k) += sk * sk;
      }
    }
  }

  const double L = static_cast<double>(config.L);
  EStepResult out;
  auto& st = out.stats;
  st.L = config.L;
  st.mean_alpha = std::move(mean.alpha);
  st.mean_beta = std::move(mean.beta);
  st.mean_U = std::move(mean.U);
  st.mean_V = std::move(mean.V);
  st.sum_var_alpha = m2.alpha.sum() / L;
  st.sum_var_beta = m2.beta.sum() / L;
  st.per_coord_var_U = m2.U.colwise().sum().transpose() / L;
  st.per_coord_var_V = m2.V.colwise().sum().transpose() / L;
  st.sum_var_U = st.per_coord_var_U.sum();
  st.sum_var_V = st.per_coord_var_V.sum();
  center(st, config.centers_v());

  out.last_sample = std::move(s);
  if (pseudo) {
    out.mean_s = sum_s / L;
    out.mean_s2 = sum_s2 / L;
    out.xi = var_update_xi(out.mean_s2);
  }
  out.diagnostics = sampler.diagnostics();
  return out;
}

}  // namespace bire
