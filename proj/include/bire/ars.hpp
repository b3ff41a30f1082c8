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

// Derivative-free adaptive rejection sampling for univariate log-concave
// densities. The upper hull on [x_i, x_{i+1}] is the lower of the two
// neighbouring chords extended into the interval; the tails use the extreme
// chords. The squeeze is the chord interpolation on [x_0, x_{n-1}].

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bire/common.hpp"

namespace bire::ars {

inline constexpr double kFlatSlope = 1e-12;
inline constexpr int kMaxRejections = 1000;
inline constexpr std::size_t kMaxPoints = 50;
inline constexpr int kMaxWidenings = 40;

using LogDensity = std::function<double(double)>;

/// The initial abscissae do not bracket the mode. Callers recover by widening.
class ModeNotStraddled : public FitError {
 public:
  ModeNotStraddled(double first_slope, double last_slope)
      : FitError(message(first_slope, last_slope)),
        first_slope(first_slope),
        last_slope(last_slope) {}
  double first_slope;
  double last_slope;

 private:
  static std::string message(double a, double b) {
    std::ostringstream os;
    os << "ARS initial points do not straddle the mode (first chord slope " << a
       << ", last chord slope " << b << ")";
    return os.str();
  }
};

/// The target evaluated above its own upper hull, so it is not log-concave,
/// or the rejection cap was hit.
class EnvelopeViolation : public FitError {
 public:
  using FitError::FitError;
};

/// One exponential piece exp(y0 + slope * (x - x0)) on [lo, hi].
struct HullSegment {
  double lo;
  double hi;
  double x0;
  double y0;
  double slope;
  double log_mass = 0;

  double value(double x) const { return y0 + slope * (x - x0); }
};

/// Normalisable piecewise-exponential density (the normalised hull e_1).
class PiecewiseExponential {
 public:
  PiecewiseExponential() = default;
  explicit PiecewiseExponential(std::vector<HullSegment> segments) { assign(std::move(segments)); }

  void assign(std::vector<HullSegment> segments) {
    segments_ = std::move(segments);
    finalize();
  }

  const std::vector<HullSegment>& segments() const { return segments_; }
  double log_total_mass() const { return log_total_; }
  double total_mass() const { return std::exp(log_total_); }
  double segment_probability(std::size_t k) const { return prob_[k]; }

  double support_lo() const { return segments_.front().lo; }
  double support_hi() const { return segments_.back().hi; }

  /// log of the unnormalised hull at x; -inf outside the support. On a
  /// boundary shared by two segments the smaller value is returned.
  double log_value(double x) const {
    if (segments_.empty() || x < support_lo() || x > support_hi()) return -math::kInf;
    auto it = std::upper_bound(segments_.begin(), segments_.end(), x,
                               [](double v, const HullSegment& s) { return v < s.hi; });
    if (it == segments_.end()) --it;
    double v = it->value(x);
    if (it != segments_.begin() && std::prev(it)->hi == x) v = std::min(v, std::prev(it)->value(x));
    return v;
  }

  /// Inverse CDF of the normalised hull.
  double quantile(double p) const {
    p = std::clamp(p, 0.0, 1.0);
    std::size_t k = 0;
    double before = 0;
    while (k + 1 < segments_.size() && before + prob_[k] < p) before += prob_[k++];
    const double u = prob_[k] > 0 ? std::clamp((p - before) / prob_[k], 0.0, 1.0) : 0.5;
    return invert_segment(segments_[k], u);
  }

  template <class Rng>
  double sample(Rng& rng) const {
    const double u1 = open_uniform(rng);
    std::size_t k = 0;
    double acc = prob_[0];
    while (k + 1 < segments_.size() && acc < u1) acc += prob_[++k];
    return invert_segment(segments_[k], open_uniform(rng));
  }

  template <class Rng>
  static double open_uniform(Rng& rng) {
    // (0, 1): avoids log(0) in the tail inversions
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double v;
    do v = u(rng);
    while (v <= 0.0);
    return v;
  }

  static double segment_log_mass(const HullSegment& s) {
    const double m = s.slope;
    if (s.lo == -math::kInf) {
      if (!(m > kFlatSlope)) return math::kInf;
      return s.value(s.hi) - std::log(m);
    }
    if (s.hi == math::kInf) {
      if (!(m < -kFlatSlope)) return math::kInf;
      return s.value(s.lo) - std::log(-m);
    }
    const double w = s.hi - s.lo;
    if (w <= 0) return -math::kInf;
    if (std::abs(m) < kFlatSlope) return s.value(s.lo) + std::log(w);
    if (m > 0) return s.value(s.hi) + std::log(-std::expm1(-m * w)) - std::log(m);
    return s.value(s.lo) + std::log(-std::expm1(m * w)) - std::log(-m);
  }

  static double invert_segment(const HullSegment& s, double u) {
    const double m = s.slope;
    double x;
    if (s.lo == -math::kInf) {
      x = s.hi + std::log(u) / m;
    } else if (s.hi == math::kInf) {
      x = s.lo + std::log1p(-u) / m;
    } else {
      const double w = s.hi - s.lo;
      if (std::abs(m) < kFlatSlope)
        x = s.lo + u * w;
      else if (m > 0)
        x = s.hi + std::log(u + (1 - u) * std::exp(-m * w)) / m;
      else
        x = s.lo + std::log1p(u * std::expm1(m * w)) / m;
    }
    return std::clamp(x, s.lo, s.hi);
  }

 private:
  void finalize() {
    require(!segments_.empty(), "PiecewiseExponential needs at least one segment");
    log_total_ = -math::kInf;
    for (auto& s : segments_) {
      s.log_mass = segment_log_mass(s);
      if (!std::isfinite(s.log_mass) && s.log_mass != -math::kInf)
        throw ContractViolation("hull segment has infinite or undefined mass");
      log_total_ = math::log_add_exp(log_total_, s.log_mass);
    }
    require(std::isfinite(log_total_), "hull has zero mass");
    prob_.resize(segments_.size());
    for (std::size_t k = 0; k < segments_.size(); ++k)
      prob_[k] = std::exp(segments_[k].log_mass - log_total_);
  }

  std::vector<HullSegment> segments_;
  std::vector<double> prob_;
  double log_total_ = -math::kInf;
};

/// Upper and lower piecewise-linear bounds of a log-density built from
/// evaluated abscissae.
class Envelope {
 public:
  Envelope() = default;

  /// Rebuilds from sorted, distinct abscissae and their log-density values.
  void reset(std::vector<double> xs, std::vector<double> hs, std::optional<double> lower_bound) {
    xs_ = std::move(xs);
    hs_ = std::move(hs);
    lower_bound_ = lower_bound;
    rebuild();
  }

  const std::vector<double>& points() const { return xs_; }
  const std::vector<double>& values() const { return hs_; }
  std::optional<double> lower_bound() const { return lower_bound_; }
  const PiecewiseExponential& hull() const { return hull_; }
  double total_mass() const { return hull_.total_mass(); }
  double log_total_mass() const { return hull_.log_total_mass(); }

  double upper(double x) const { return hull_.log_value(x); }

  double lower(double x) const {
    if (x < xs_.front() || x > xs_.back()) return -math::kInf;
    auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
    std::size_t i = it == xs_.end() ? xs_.size() - 2 : static_cast<std::size_t>(it - xs_.begin()) - 1;
    return chord_at(i, x);
  }

  /// Adds an evaluated abscissa. Returns false when the point budget is
  /// exhausted or x duplicates an existing point.
  bool insert(double x, double h) {
    if (xs_.size() >= kMaxPoints) return false;
    auto it = std::lower_bound(xs_.begin(), xs_.end(), x);
    const double tol = 1e-12 * (1.0 + std::abs(x));
    if (it != xs_.end() && std::abs(*it - x) <= tol) return false;
    if (it != xs_.begin() && std::abs(*(it - 1) - x) <= tol) return false;
    const auto pos = it - xs_.begin();
    xs_.insert(it, x);
    hs_.insert(hs_.begin() + pos, h);
    rebuild();
    return true;
  }

 private:
  double slope(std::size_t i) const { return (hs_[i + 1] - hs_[i]) / (xs_[i + 1] - xs_[i]); }
  double chord_at(std::size_t i, double x) const { return hs_[i] + slope(i) * (x - xs_[i]); }

  void rebuild() {
    const std::size_t n = xs_.size();
    require(n >= 3, "envelope needs at least 3 abscissae");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(hs_[i])) throw ContractViolation("log-density is not finite at an abscissa");
      if (i + 1 < n && !(xs_[i] < xs_[i + 1]))
        throw ContractViolation("envelope abscissae must be strictly increasing");
    }
    if (lower_bound_) require(xs_.front() > *lower_bound_, "abscissae must exceed the lower bound");

    const double first = slope(0), last = slope(n - 2);
    if (!(last < -kFlatSlope) || (!lower_bound_ && !(first > kFlatSlope)))
      throw ModeNotStraddled(first, last);

    segs_.clear();
    auto push = [&](double lo, double hi, std::size_t chord) {
      if (hi > lo || (lo == -math::kInf) || (hi == math::kInf))
        segs_.push_back({lo, hi, xs_[chord], hs_[chord], slope(chord)});
    };

    push(lower_bound_ ? *lower_bound_ : -math::kInf, xs_[0], 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double a = xs_[i], b = xs_[i + 1];
      const bool has_left = i >= 1, has_right = i + 2 < n;
      if (has_left && has_right) {
        const std::size_t L = i - 1, R = i + 1;
        const double la = chord_at(L, a), lb = chord_at(L, b);
        const double ra = chord_at(R, a), rb = chord_at(R, b);
        if (la <= ra && lb <= rb) {
          push(a, b, L);
        } else if (ra <= la && rb <= lb) {
          push(a, b, R);
        } else {
          const double z = std::clamp(a + (ra - la) / ((lb - la) - (rb - ra)) * (b - a), a, b);
          push(a, z, L);
          push(z, b, R);
        }
      } else {
        push(a, b, has_left ? i - 1 : i + 1);
      }
    }
    push(xs_[n - 1], math::kInf, n - 2);
    hull_.assign(segs_);
  }

  std::vector<double> xs_;
  std::vector<double> hs_;
  std::optional<double> lower_bound_;
  std::vector<HullSegment> segs_;
  PiecewiseExponential hull_;
};

/// Evaluates the density at `init_points` and builds the envelope.
template <class Density>
Envelope build_envelope(Density&& density, std::vector<double> init_points,
                        std::optional<double> lower_bound = std::nullopt) {
  require(init_points.size() >= 3, "build_envelope needs at least 3 initial points");
  require(std::is_sorted(init_points.begin(), init_points.end()), "initial points must be sorted");
  std::vector<double> hs(init_points.size());
  for (std::size_t i = 0; i < init_points.size(); ++i) hs[i] = density(init_points[i]);
  Envelope env;
  env.reset(std::move(init_points), std::move(hs), lower_bound);
  return env;
}

/// Like build_envelope, but when the points do not straddle the mode the
/// offending side is pushed outward with geometrically growing gaps. Already
/// evaluated points are kept.
template <class Density>
void build_envelope_widening(Envelope& env, Density&& density, std::vector<double> xs,
                             std::optional<double> lower_bound) {
  std::vector<double> hs(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) hs[i] = density(xs[i]);
  double gap = std::max(xs.back() - xs.front(), 1e-6);
  for (int attempt = 0;; ++attempt) {
    try {
      env.reset(xs, hs, lower_bound);
      return;
    } catch (const ModeNotStraddled& e) {
      if (attempt >= kMaxWidenings) throw;
      if (!lower_bound && !(e.first_slope > kFlatSlope)) {
        const double x = xs.front() - gap;
        xs.insert(xs.begin(), x);
        hs.insert(hs.begin(), density(x));
      }
      if (!(e.last_slope < -kFlatSlope)) {
        const double x = xs.back() + gap;
        xs.push_back(x);
        hs.push_back(density(x));
      }
      gap *= 2;
    }
  }
}

struct Draw {
  double x;
  int rejections;
};

/// One exact draw from the normalised (and, with a lower bound, truncated)
/// density. Rejected abscissae refine `env` in place.
template <class Density, class Rng>
Draw sample(Envelope& env, Density&& density, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rejections = 0; rejections <= kMaxRejections; ++rejections) {
    const double x = env.hull().sample(rng);
    const double log_z = std::log(unif(rng));
    const double up = env.upper(x);
    if (log_z <= env.lower(x) - up) return {x, rejections};
    const double h = density(x);
    if (!std::isfinite(h)) throw ContractViolation("log-density is not finite at a proposal");
    if (h > up + 1e-8 * (1.0 + std::abs(h)))
      throw EnvelopeViolation("log-density exceeds its upper hull; target is not log-concave");
    if (log_z <= h - up) return {x, rejections};
    env.insert(x, h);
  }
  throw EnvelopeViolation("ARS rejection cap exceeded; target is probably not log-concave");
}

template <class Rng>
double sample_hull(const Envelope& env, Rng& rng) { return env.hull().sample(rng); }

/// 5th, 50th and 95th percentiles of the normalised hull, used as starting
/// abscissae for the next draw of the same coordinate.
inline std::array<double, 3> percentile_warm_start(const Envelope& env) {
  return {env.hull().quantile(0.05), env.hull().quantile(0.5), env.hull().quantile(0.95)};
}
inline std::array<double, 3> percentile_warm_start(const PiecewiseExponential& hull) {
  return {hull.quantile(0.05), hull.quantile(0.5), hull.quantile(0.95)};
}

}  // namespace bire::ars
