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
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bire {

using Index = std::int64_t;

/// Precondition or dimension check failed. Indicates a programming error on
/// the caller's side, never bad input data.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or inconsistent input data (files, id references).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure while fitting (divergence, sampler breakdown).
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, std::string_view what) {
  if (!cond) throw ContractViolation(std::string(what));
}

enum class Method { kVar, kArs, kArsId };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kVar: return "var";
    case Method::kArs: return "ars";
    case Method::kArsId: return "arsid";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "var") return Method::kVar;
  if (s == "ars") return Method::kArs;
  if (s == "arsid") return Method::kArsId;
  throw ContractViolation("unknown method '" + std::string(s) + "'");
}

/// SplitMix64 step: advances `state` and returns the next output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Deterministic child seed for stream `stream` of parent seed `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t st = seed ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  splitmix64(st);
  return splitmix64(st);
}

namespace math {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Bernoulli log-likelihood of label y under log odds s.
inline double bernoulli_loglik(int y, double s) {
  return y ? -softplus(-s) : -softplus(s);
}

inline double log_add_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace math
}  // namespace bire
