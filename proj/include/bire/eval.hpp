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

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "bire/common.hpp"

namespace bire {

/// Area under the ROC curve by the rank-sum statistic with midranks for
/// tied scores.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi < n && scores[order[hi]] == scores[order[lo]]) ++hi;
    const double midrank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) {
      require(labels[order[k]] == 0 || labels[order[k]] == 1, "auc: labels must be 0 or 1");
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++positives;
      }
    }
    lo = hi;
  }
  const std::size_t negatives = n - positives;
  require(positives > 0 && negatives > 0, "auc: need at least one positive and one negative");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

/// A click: the user, the item clicked and the candidate pool it was
/// chosen from.
struct ReplayEvent {
  Index epoch = 0;
  Index user = 0;
  Index clicked = 0;
  std::vector<Index> pool;
};

struct ReplayResult {
  Index score = 0;             // S: clicks whose item the predictor would have picked
  std::vector<Index> matches;  // the same count per epoch
};

/// Item the predictor ranks first in `pool`; ties go to the smallest index.
inline Index replay_pick(const std::function<double(Index, Index)>& predictor, Index user,
                         std::span<const Index> pool) {
  require(!pool.empty(), "replay: empty candidate pool");
  Index best = pool.front();
  double best_score = predictor(user, best);
  for (std::size_t k = 1; k < pool.size(); ++k) {
    const double s = predictor(user, pool[k]);
    if (s > best_score || (s == best_score && pool[k] < best)) {
      best = pool[k];
      best_score = s;
    }
  }
  return best;
}

inline ReplayResult replay_score(const std::function<double(Index, Index)>& predictor,
                                 std::span<const ReplayEvent> events) {
  ReplayResult out;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    require(!ev.pool.empty(), "replay: event " + std::to_string(e) + " has an empty pool");
    require(std::find(ev.pool.begin(), ev.pool.end(), ev.clicked) != ev.pool.end(),
            "replay: event " + std::to_string(e) + " clicked item is not in its pool");
    require(ev.epoch >= 0, "replay: negative epoch");
    if (static_cast<std::size_t>(ev.epoch) >= out.matches.size()) out.matches.resize(ev.epoch + 1, 0);
    if (replay_pick(predictor, ev.user, ev.pool) == ev.clicked) {
      ++out.score;
      ++out.matches[ev.epoch];
    }
  }
  return out;
}

}  // namespace bire
