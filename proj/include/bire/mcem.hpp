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

// Single-partition Monte Carlo EM: alternate run_estep and run_mstep.

#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "bire/estep.hpp"
#include "bire/mstep.hpp"

namespace bire {

struct FitSchedule {
  Index num_iters = 30;
  std::vector<Index> sample_vector;
  Index burn_in = 2;
  Method method = Method::kArs;
  bool do_mstep = true;
  bool warm_start = true;
  std::uint64_t rng_seed = 1;

  /// 30 iterations: L = 10 for 1-10, 50 for 11-20, 200 for 21-30.
  static FitSchedule default_ramp(Method method, std::uint64_t seed = 1) {
    return ramp(method, {{10, 10}, {10, 50}, {10, 200}}, seed);
  }

  /// Blocks of (iterations, samples per iteration).
  static FitSchedule ramp(Method method, std::vector<std::pair<Index, Index>> blocks,
                          std::uint64_t seed = 1) {
    FitSchedule s;
    s.method = method;
    s.rng_seed = seed;
    s.num_iters = 0;
    for (auto [iters, L] : blocks) {
      for (Index i = 0; i < iters; ++i) s.sample_vector.push_back(L);
      s.num_iters += iters;
    }
    return s;
  }

  /// One E-step pass with L samples and no M-step.
  static FitSchedule estep_only(Method method, Index L = 200, std::uint64_t seed = 1) {
    FitSchedule s = ramp(method, {{1, L}}, seed);
    s.do_mstep = false;
    return s;
  }

  void validate() const {
    require(num_iters >= 0, "FitSchedule: num_iters must be >= 0");
    require(static_cast<Index>(sample_vector.size()) == num_iters,
            "FitSchedule: sample_vector length must equal num_iters");
    for (Index L : sample_vector) require(L >= 1, "FitSchedule: every L must be >= 1");
    require(burn_in >= 0, "FitSchedule: burn_in must be >= 0");
  }
};

struct IterationTrace {
  Index iteration = 0;
  Index samples = 0;
  double log_likelihood = 0;
  double min_v = 0;
  bool sigma2_u_ordered = true;
  std::int64_t ars_draws = 0;
  std::int64_t ars_rejections = 0;
  bool f_converged = true;
  double seconds = 0;
};

struct FitResult {
  Hyperparams theta;
  LatentState delta;  // posterior means
  std::vector<IterationTrace> trace;
  XiTable xi;
};

/// Hook for callers that need to inspect intermediate states.
struct IterationEvent {
  enum class Phase { kAfterEStep, kAfterMStep } phase;
  Index iteration;
  const Hyperparams& theta;
  const LatentState& delta;
};
using IterationObserver = std::function<void(const IterationEvent&)>;

/// Latent effects ~ N(0, 0.01) (|.| for V under ARSID), regression weights
/// 0, variances 1.
inline std::pair<Hyperparams, LatentState> random_initialization(const Dataset& d, Index r, Method method,
                                                                 std::uint64_t seed) {
  const bool arsid = method == Method::kArsId;
  Hyperparams t = Hyperparams::zeros(r, d.event_dim(), d.user_dim(), d.item_dim(), arsid);
  LatentState s = LatentState::zeros(d.num_users(), d.num_items(), r);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 0.1);
  for (Index i = 0; i < s.alpha.size(); ++i) s.alpha(i) = z(rng);
  for (Index j = 0; j < s.beta.size(); ++j) s.beta(j) = z(rng);
  for (Index i = 0; i < s.U.size(); ++i) s.U.data()[i] = z(rng);
  for (Index j = 0; j < s.V.size(); ++j) s.V.data()[j] = arsid ? std::abs(z(rng)) : z(rng);
  return {std::move(t), std::move(s)};
}

inline XiTable plug_in_xi(const Hyperparams& t, const LatentState& s, const Dataset& d) {
  XiTable x{Vector(d.size())};
  for (Index k = 0; k < d.size(); ++k) x.xi(k) = std::max(std::abs(log_odds(t, s, d, k)), kXiFloor);
  return x;
}

inline FitResult fit_single_partition(const Dataset& d,
                                      const std::optional<std::pair<Hyperparams, LatentState>>& init,
                                      const FitSchedule& schedule, Index factors,
                                      const IterationObserver& observer = {}) {
  schedule.validate();
  FitResult out;
  const Method method = schedule.method;
  if (init) {
    out.theta = init->first;
    out.delta = init->second;
    out.theta.check_against(d);
    out.delta.check_against(d, out.theta.factors());
  } else {
    require(factors >= 1, "fit_single_partition: factors must be >= 1");
    std::tie(out.theta, out.delta) =
        random_initialization(d, factors, method, derive_seed(schedule.rng_seed, 0xA11CE));
  }
  if (method == Method::kVar) out.xi = init ? plug_in_xi(out.theta, out.delta, d) : initial_xi(d);

  for (Index it = 0; it < schedule.num_iters; ++it) {
    const auto started = std::chrono::steady_clock::now();
    EStepConfig cfg;
    cfg.method = method;
    cfg.L = schedule.sample_vector[static_cast<std::size_t>(it)];
    cfg.burn_in = schedule.burn_in;
    cfg.warm_start = schedule.warm_start;
    cfg.rng_seed = derive_seed(schedule.rng_seed, static_cast<std::uint64_t>(it) + 1);

    EStepResult es;
    try {
      es = run_estep(out.delta, out.theta, d, cfg, method == Method::kVar ? &out.xi : nullptr);
    } catch (const FitError& e) {
      std::ostringstream os;
      os << "iteration " << it + 1 << " E-step: " << e.what();
      throw FitError(os.str());
    }
    out.delta = es.stats.means();
    if (observer) observer({IterationEvent::Phase::kAfterEStep, it, out.theta, out.delta});

    IterationTrace tr;
    tr.iteration = it + 1;
    tr.samples = cfg.L;
    tr.ars_draws = es.diagnostics.ars_draws;
    tr.ars_rejections = es.diagnostics.ars_rejections;
    tr.min_v = out.delta.V.size() ? out.delta.V.minCoeff() : 0.0;

    if (schedule.do_mstep) {
      auto ms = run_mstep(es.stats, d, out.theta, method);
      tr.f_converged = ms.f_converged;
      if (method == Method::kArsId) enforce_ordered_variances(ms.theta, out.delta);
      if (method == Method::kVar) {
        // shift the Monte Carlo moments of s_ij to the refitted f
        const Vector shift = d.event_features() * (ms.theta.f_w - out.theta.f_w);
        const Vector m2 = es.mean_s2 + 2.0 * shift.cwiseProduct(es.mean_s) + shift.cwiseAbs2();
        out.xi = var_update_xi(m2);
      }
      out.theta = std::move(ms.theta);
      if (observer) observer({IterationEvent::Phase::kAfterMStep, it, out.theta, out.delta});
    } else if (method == Method::kVar) {
      out.xi = es.xi;
    }
    for (Index k = 0; k + 1 < out.theta.sigma2_u.size(); ++k)
      tr.sigma2_u_ordered = tr.sigma2_u_ordered && out.theta.sigma2_u(k) >= out.theta.sigma2_u(k + 1);
    tr.log_likelihood = complete_data_log_likelihood(out.theta, out.delta, d);
    tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.trace.push_back(tr);
  }
  return out;
}

}  // namespace bire
