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

// In-process divide-and-conquer fitting with the dataflow of a map/shuffle/
// reduce job:
//
//   map      key every observation by get_partition_number(key id, seed, m)
//   shuffle  group observations (and the feature / init rows they reference)
//            per partition
//   reduce   fit each partition independently on a bounded worker pool
//
// fit_ensemble runs one full MCEM job, averages Theta over partitions, then
// n E-step-only jobs on fresh partitionings, and averages Delta per id.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "bire/mcem.hpp"

namespace bire {

enum class PartitionKey { kUser, kItem, kEvent };

inline const char* partition_key_name(PartitionKey k) {
  switch (k) {
    case PartitionKey::kUser: return "user";
    case PartitionKey::kItem: return "item";
    case PartitionKey::kEvent: return "event";
  }
  return "?";
}

inline PartitionKey parse_partition_key(std::string_view s) {
  if (s == "user") return PartitionKey::kUser;
  if (s == "item") return PartitionKey::kItem;
  if (s == "event") return PartitionKey::kEvent;
  throw ContractViolation("unknown partition key '" + std::string(s) + "'");
}

struct PartitionPlan {
  std::uint64_t seed = 1;
  Index m = 1;
  PartitionKey key = PartitionKey::kUser;
};

/// Seeds a SplitMix64 generator with `id`, draws `seed` outputs and returns
/// the last one modulo `range`. Bit-exact on every platform.
inline Index get_partition_number(std::uint64_t id, std::uint64_t seed, Index range) {
  require(seed >= 1, "get_partition_number: seed must be >= 1");
  require(range >= 1, "get_partition_number: range must be >= 1");
  std::uint64_t state = id;
  std::uint64_t out = 0;
  for (std::uint64_t i = 0; i < seed; ++i) out = splitmix64(state);
  return static_cast<Index>(out % static_cast<std::uint64_t>(range));
}

/// One partition: a self-contained dataset plus local-to-global maps.
struct Shard {
  Index partition = 0;
  Dataset data;
  std::vector<Index> users;         // local user -> global user
  std::vector<Index> items;         // local item -> global item
  std::vector<Index> observations;  // local ordinal -> global ordinal
};

/// Splits `d` into plan.m shards. Keys are dense user / item indices or the
/// observation ordinal. Each shard carries exactly the user and item rows its
/// observations reference, in increasing global order.
inline std::vector<Shard> partition_dataset(const Dataset& d, const PartitionPlan& plan) {
  require(plan.m >= 1 && plan.seed >= 1, "partition_dataset: invalid plan");
  const auto m = static_cast<std::size_t>(plan.m);
  std::vector<std::vector<Index>> groups(m);
  for (Index k = 0; k < d.size(); ++k) {
    const auto& o = d[k];
    const std::uint64_t id = static_cast<std::uint64_t>(
        plan.key == PartitionKey::kUser ? o.user : plan.key == PartitionKey::kItem ? o.item : k);
    groups[static_cast<std::size_t>(get_partition_number(id, plan.seed, plan.m))].push_back(k);
  }

  std::vector<Shard> shards(m);
  std::vector<Index> user_local(static_cast<std::size_t>(d.num_users()), -1);
  std::vector<Index> item_local(static_cast<std::size_t>(d.num_items()), -1);
  for (std::size_t p = 0; p < m; ++p) {
    Shard& sh = shards[p];
    sh.partition = static_cast<Index>(p);
    sh.observations = std::move(groups[p]);
    for (Index k : sh.observations) {
      user_local[static_cast<std::size_t>(d[k].user)] = 0;
      item_local[static_cast<std::size_t>(d[k].item)] = 0;
    }
    for (Index i = 0; i < d.num_users(); ++i)
      if (user_local[i] == 0) {
        user_local[i] = static_cast<Index>(sh.users.size());
        sh.users.push_back(i);
      }
    for (Index j = 0; j < d.num_items(); ++j)
      if (item_local[j] == 0) {
        item_local[j] = static_cast<Index>(sh.items.size());
        sh.items.push_back(j);
      }

    RowMatrix xu(static_cast<Index>(sh.users.size()), d.user_dim());
    RowMatrix xv(static_cast<Index>(sh.items.size()), d.item_dim());
    for (std::size_t a = 0; a < sh.users.size(); ++a) xu.row(a) = d.user_features().row(sh.users[a]);
    for (std::size_t b = 0; b < sh.items.size(); ++b) xv.row(b) = d.item_features().row(sh.items[b]);
    RowMatrix xe(static_cast<Index>(sh.observations.size()), d.event_dim());
    std::vector<Observation> obs;
    obs.reserve(sh.observations.size());
    for (std::size_t c = 0; c < sh.observations.size(); ++c) {
      const Index k = sh.observations[c];
      const auto& o = d[k];
      obs.push_back({user_local[o.user], item_local[o.item], o.y});
      xe.row(static_cast<Index>(c)) = d.event_features().row(k);
    }
    sh.data = Dataset(std::move(obs), std::move(xu), std::move(xv), std::move(xe));
    for (Index i : sh.users) user_local[i] = -1;
    for (Index j : sh.items) item_local[j] = -1;
  }
  return shards;
}

/// Rows of a global Delta restricted to one shard.
inline LatentState slice_delta(const LatentState& global, const Shard& sh) {
  const Index r = global.U.cols();
  LatentState s = LatentState::zeros(static_cast<Index>(sh.users.size()), static_cast<Index>(sh.items.size()), r);
  for (std::size_t a = 0; a < sh.users.size(); ++a) {
    s.alpha(a) = global.alpha(sh.users[a]);
    s.U.row(a) = global.U.row(sh.users[a]);
  }
  for (std::size_t b = 0; b < sh.items.size(); ++b) {
    s.beta(b) = global.beta(sh.items[b]);
    s.V.row(b) = global.V.row(sh.items[b]);
  }
  return s;
}

struct ShardModel {
  Index partition = 0;
  Hyperparams theta;
  LatentState delta;
  std::vector<Index> users;
  std::vector<Index> items;
  Index observations = 0;
  std::vector<IterationTrace> trace;
  double seconds = 0;
};

/// Runs `task(i)` for i in [0, count) on at most `workers` threads. Errors
/// are collected per index and rethrown together.
template <class Task>
void run_pool(Index count, Index workers, Task&& task, const char* what) {
  std::vector<std::string> errors(static_cast<std::size_t>(count));
  std::atomic<Index> next{0};
  auto worker = [&] {
    for (Index i; (i = next.fetch_add(1)) < count;) {
      try {
        task(i);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  const Index n = std::clamp<Index>(workers, 1, std::max<Index>(count, 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (Index t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::ostringstream os;
  bool failed = false;
  for (Index i = 0; i < count; ++i)
    if (!errors[i].empty()) {
      os << (failed ? "; " : "") << what << " " << i << ": " << errors[i];
      failed = true;
    }
  if (failed) throw FitError(os.str());
}

/// One map/shuffle/reduce job. Every non-empty shard is fitted by
/// fit_single_partition with an RNG stream derived from (run seed,
/// partition index); empty shards yield nullopt. Results are ordered by
/// partition index and do not depend on `worker_budget`.
inline std::vector<std::optional<ShardModel>> train_run(
    const Dataset& d, const PartitionPlan& plan,
    const std::optional<std::pair<Hyperparams, LatentState>>& global_init, const FitSchedule& schedule,
    Index factors, Index worker_budget) {
  const auto shards = partition_dataset(d, plan);
  std::vector<std::optional<ShardModel>> out(shards.size());
  run_pool(
      plan.m, worker_budget,
      [&](Index p) {
        const Shard& sh = shards[static_cast<std::size_t>(p)];
        if (sh.data.size() == 0) return;
        const auto started = std::chrono::steady_clock::now();
        FitSchedule local = schedule;
        local.rng_seed = derive_seed(derive_seed(schedule.rng_seed, plan.seed), static_cast<std::uint64_t>(p));
        std::optional<std::pair<Hyperparams, LatentState>> init;
        if (global_init) init.emplace(global_init->first, slice_delta(global_init->second, sh));
        auto fit = fit_single_partition(sh.data, init, local, factors);
        ShardModel sm;
        sm.partition = p;
        sm.theta = std::move(fit.theta);
        sm.delta = std::move(fit.delta);
        sm.users = sh.users;
        sm.items = sh.items;
        sm.observations = sh.data.size();
        sm.trace = std::move(fit.trace);
        sm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        out[static_cast<std::size_t>(p)] = std::move(sm);
      },
      "partition");
  return out;
}

/// Elementwise mean of weights and variances. For ordered-diagonal models
/// the diagonal is re-sorted non-increasing together with the rows of G and
/// H; the applied permutation is written to `perm` when given.
inline Hyperparams average_theta(const std::vector<Hyperparams>& models, std::vector<Index>* perm = nullptr) {
  require(!models.empty(), "average_theta: no models");
  const Hyperparams& first = models.front();
  Hyperparams avg = first;
  for (std::size_t k = 1; k < models.size(); ++k) {
    const auto& t = models[k];
    require(t.diagonal_u == first.diagonal_u, "average_theta: models mix scalar and diagonal sigma2_u");
    require(t.f_w.size() == first.f_w.size() && t.g_w.size() == first.g_w.size() &&
                t.h_w.size() == first.h_w.size() && t.G_w.rows() == first.G_w.rows() &&
                t.G_w.cols() == first.G_w.cols() && t.H_w.cols() == first.H_w.cols(),
            "average_theta: dimension mismatch");
    avg.f_w += t.f_w;
    avg.g_w += t.g_w;
    avg.h_w += t.h_w;
    avg.G_w += t.G_w;
    avg.H_w += t.H_w;
    avg.sigma2_alpha += t.sigma2_alpha;
    avg.sigma2_beta += t.sigma2_beta;
    avg.sigma2_u += t.sigma2_u;
    avg.sigma2_v += t.sigma2_v;
  }
  const double n = static_cast<double>(models.size());
  avg.f_w /= n;
  avg.g_w /= n;
  avg.h_w /= n;
  avg.G_w /= n;
  avg.H_w /= n;
  avg.sigma2_alpha /= n;
  avg.sigma2_beta /= n;
  avg.sigma2_u /= n;
  avg.sigma2_v /= n;
  if (avg.diagonal_u) {
    LatentState none;
    auto p = enforce_ordered_variances(avg, none);
    if (perm) *perm = std::move(p);
  } else if (perm) {
    perm->resize(static_cast<std::size_t>(avg.factors()));
    std::iota(perm->begin(), perm->end(), Index{0});
  }
  return avg;
}

/// Per-id mean over every shard result that contains the id. Ids covered by
/// no shard take their row from `fallback`; without a fallback that is a
/// contract violation.
inline LatentState combine_delta(const std::vector<const ShardModel*>& shards, Index M, Index N, Index r,
                                 const LatentState* fallback = nullptr) {
  LatentState sum = LatentState::zeros(M, N, r);
  std::vector<Index> nu(static_cast<std::size_t>(M), 0), ni(static_cast<std::size_t>(N), 0);
  for (const ShardModel* sm : shards) {
    require(sm->delta.U.cols() == r, "combine_delta: factor dimension mismatch");
    for (std::size_t a = 0; a < sm->users.size(); ++a) {
      const Index i = sm->users[a];
      sum.alpha(i) += sm->delta.alpha(a);
      sum.U.row(i) += sm->delta.U.row(a);
      ++nu[i];
    }
    for (std::size_t b = 0; b < sm->items.size(); ++b) {
      const Index j = sm->items[b];
      sum.beta(j) += sm->delta.beta(b);
      sum.V.row(j) += sm->delta.V.row(b);
      ++ni[j];
    }
  }
  for (Index i = 0; i < M; ++i) {
    if (nu[i] > 0) {
      sum.alpha(i) /= static_cast<double>(nu[i]);
      sum.U.row(i) /= static_cast<double>(nu[i]);
    } else {
      if (!fallback) throw ContractViolation("combine_delta: user " + std::to_string(i) + " is in no shard");
      sum.alpha(i) = fallback->alpha(i);
      sum.U.row(i) = fallback->U.row(i);
    }
  }
  for (Index j = 0; j < N; ++j) {
    if (ni[j] > 0) {
      sum.beta(j) /= static_cast<double>(ni[j]);
      sum.V.row(j) /= static_cast<double>(ni[j]);
    } else {
      if (!fallback) throw ContractViolation("combine_delta: item " + std::to_string(j) + " is in no shard");
      sum.beta(j) = fallback->beta(j);
      sum.V.row(j) = fallback->V.row(j);
    }
  }
  return sum;
}

/// Regression-prior means of every effect: the cold-start prediction.
inline LatentState prior_means(const Hyperparams& t, const Dataset& d) {
  return {d.user_features() * t.g_w, d.item_features() * t.h_w, d.user_features() * t.G_w.transpose(),
          d.item_features() * t.H_w.transpose()};
}

struct EnsembleConfig {
  Index m = 1;
  Index n = 1;
  PartitionKey key = PartitionKey::kUser;
  Index factors = 2;
  /// seeds[0] partitions the full run, seeds[k] the k-th E-step-only run.
  /// Empty means 1, 2, ..., n + 1.
  std::vector<std::uint64_t> seeds;
  FitSchedule schedule_full;
  FitSchedule schedule_eonly;
  /// Extra full-MCEM rounds started from the averaged Theta. Off by default.
  Index sync_rounds = 0;

  std::uint64_t seed(Index k) const {
    return seeds.empty() ? static_cast<std::uint64_t>(k + 1) : seeds[static_cast<std::size_t>(k)];
  }

  void validate() const {
    require(m >= 1 && n >= 1 && factors >= 1, "EnsembleConfig: m, n and factors must be >= 1");
    require(seeds.empty() || static_cast<Index>(seeds.size()) == n + 1 + sync_rounds,
            "EnsembleConfig: need one seed per run");
    std::vector<std::uint64_t> all;
    for (Index k = 0; k <= n + sync_rounds; ++k) {
      require(seed(k) >= 1, "EnsembleConfig: seeds must be >= 1");
      all.push_back(seed(k));
    }
    std::sort(all.begin(), all.end());
    require(std::adjacent_find(all.begin(), all.end()) == all.end(), "EnsembleConfig: seeds must be distinct");
    require(schedule_full.do_mstep, "EnsembleConfig: the full schedule must run M-steps");
    require(!schedule_eonly.do_mstep, "EnsembleConfig: the ensemble schedule must be E-step only");
    require(schedule_full.method == schedule_eonly.method, "EnsembleConfig: schedules disagree on method");
    schedule_full.validate();
    schedule_eonly.validate();
  }
};

struct EnsembleResult {
  Hyperparams theta;
  LatentState delta;
  /// Combined Delta of each E-step-only run on its own; run_delta[0] is the
  /// n = 1 result.
  std::vector<LatentState> run_delta;
  nlohmann::json report;
};

namespace detail {

inline nlohmann::json run_report(const std::vector<std::optional<ShardModel>>& run, std::uint64_t seed) {
  nlohmann::json j;
  j["seed"] = seed;
  j["partitions"] = nlohmann::json::array();
  for (const auto& sm : run) {
    if (!sm) continue;
    nlohmann::json p;
    p["partition"] = sm->partition;
    p["observations"] = sm->observations;
    p["users"] = sm->users.size();
    p["items"] = sm->items.size();
    p["seconds"] = sm->seconds;
    p["trace"] = nlohmann::json::array();
    for (const auto& tr : sm->trace)
      p["trace"].push_back({{"iteration", tr.iteration}, {"samples", tr.samples},
                            {"log_likelihood", tr.log_likelihood}, {"ars_rejections", tr.ars_rejections}});
    j["partitions"].push_back(std::move(p));
  }
  return j;
}

inline std::vector<const ShardModel*> present(const std::vector<std::optional<ShardModel>>& run) {
  std::vector<const ShardModel*> out;
  for (const auto& sm : run)
    if (sm) out.push_back(&*sm);
  return out;
}

}  // namespace detail

/// Full sequence: partition with seeds[0] and fit MCEM per shard; average
/// Theta; combine the stage-1 Delta; then n E-step-only jobs, each on its own
/// partitioning, started from (Theta, stage-1 Delta); finally average Delta
/// per id over all E-step-only shard results.
inline EnsembleResult fit_ensemble(const Dataset& d, const EnsembleConfig& cfg, Index worker_budget) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
  const Index M = d.num_users(), N = d.num_items(), r = cfg.factors;
  EnsembleResult out;
  auto& report = out.report;
  report["config"] = {{"m", cfg.m}, {"n", cfg.n}, {"key", partition_key_name(cfg.key)},
                      {"factors", r}, {"method", std::string(method_name(cfg.schedule_full.method))},
                      {"sync_rounds", cfg.sync_rounds}};

  auto stage_fit = [&](std::uint64_t seed, const std::optional<std::pair<Hyperparams, LatentState>>& init,
                       const char* stage) {
    auto t0 = clock::now();
    std::vector<std::optional<ShardModel>> run;
    try {
      run = train_run(d, {seed, cfg.m, cfg.key}, init, cfg.schedule_full, r, worker_budget);
    } catch (const FitError& e) {
      throw FitError(std::string(stage) + ": " + e.what());
    }
    const auto shards = detail::present(run);
    require(!shards.empty(), "fit_ensemble: every shard is empty");
    std::vector<Hyperparams> thetas;
    for (const auto* sm : shards) thetas.push_back(sm->theta);
    std::vector<Index> perm;
    Hyperparams avg = average_theta(thetas, &perm);
    const LatentState fallback = prior_means(avg, d);
    LatentState delta = combine_delta(shards, M, N, r, &fallback);
    // apply the diagonal re-sort to the combined factors as well
    if (avg.diagonal_u) {
      const LatentState before = delta;
      for (Index k = 0; k < r; ++k) {
        delta.U.col(k) = before.U.col(perm[static_cast<std::size_t>(k)]);
        delta.V.col(k) = before.V.col(perm[static_cast<std::size_t>(k)]);
      }
    }
    auto j = detail::run_report(run, seed);
    j["stage"] = stage;
    j["seconds"] = seconds_since(t0);
    report["stages"].push_back(std::move(j));
    return std::pair{std::move(avg), std::move(delta)};
  };

  auto [theta, delta1] = stage_fit(cfg.seed(0), std::nullopt, "full");
  for (Index round = 1; round <= cfg.sync_rounds; ++round) {
    std::tie(theta, delta1) = stage_fit(cfg.seed(cfg.n + round), std::pair{theta, delta1}, "sync");
  }

  auto t0 = clock::now();
  std::vector<std::vector<std::optional<ShardModel>>> runs;
  const std::optional<std::pair<Hyperparams, LatentState>> init{std::in_place, theta, delta1};
  for (Index k = 1; k <= cfg.n; ++k) {
    try {
      runs.push_back(train_run(d, {cfg.seed(k), cfg.m, cfg.key}, init, cfg.schedule_eonly, r, worker_budget));
    } catch (const FitError& e) {
      throw FitError("estep-only run " + std::to_string(k) + ": " + e.what());
    }
    out.run_delta.push_back(combine_delta(detail::present(runs.back()), M, N, r, &delta1));
    auto j = detail::run_report(runs.back(), cfg.seed(k));
    j["stage"] = "estep-only";
    report["stages"].push_back(std::move(j));
  }
  std::vector<const ShardModel*> all;
  for (const auto& run : runs)
    for (const auto* sm : detail::present(run)) all.push_back(sm);
  out.delta = combine_delta(all, M, N, r, &delta1);
  out.theta = std::move(theta);
  report["estep_only_seconds"] = seconds_since(t0);
  return out;
}

}  // namespace bire
