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


// Text formats:
//   triples   <user>\t<item>\t<label 0|1>[\t<event covariate>...]
//   features  <id>\t<f1>\t...\t<fn>          (intercept added on load)
//   ratings   UserID::MovieID::Rating::Timestamp
//   model     sections HEADER, THETA, ALPHA, BETA, U, V, END in that order

#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bire/model.hpp"

namespace bire::io {

inline constexpr int kModelFormatVersion = 1;

/// Relative paths resolve against $BIRE_DATA_DIR when it is set.
inline std::filesystem::path resolve_data_path(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  if (const char* dir = std::getenv("BIRE_DATA_DIR"); dir && *dir) return std::filesystem::path(dir) / p;
  return p;
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  for (std::size_t start = 0;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

class LineError {
 public:
  LineError(std::string file, Index line) : file_(std::move(file)), line_(line) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(file_ + ":" + std::to_string(line_) + ": " + what);
  }
  [[noreturn]] void fail_field(std::size_t field, std::string_view value, const std::string& what) const {
    fail("field " + std::to_string(field + 1) + " ('" + std::string(value) + "'): " + what);
  }

 private:
  std::string file_;
  Index line_;
};

inline double parse_double(std::string_view s, const LineError& err, std::size_t field) {
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    err.fail_field(field, s, "expected a finite decimal number");
  return v;
}

template <class Int>
Int parse_int(std::string_view s, const LineError& err, std::size_t field) {
  Int v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) err.fail_field(field, s, "expected an integer");
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError(p.string() + ": cannot open for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(p.string() + ": cannot open for writing");
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Triples and features.

struct RawRecord {
  std::string user;
  std::string item;
  int label = 0;
  std::vector<double> covariates;
  Index line = 0;
};

inline std::vector<RawRecord> load_triples(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<RawRecord> out;
  std::string line;
  std::optional<std::size_t> width;
  for (Index no = 1; std::getline(in, line); ++no) {
    const detail::LineError err(path.string(), no);
    const auto fields = detail::split(line, "\t");
    if (fields.size() < 3) err.fail("expected at least 3 tab-separated fields, got " + std::to_string(fields.size()));
    if (!width) width = fields.size();
    if (fields.size() != *width)
      err.fail("expected " + std::to_string(*width) + " fields like line 1, got " + std::to_string(fields.size()));
    if (fields[0].empty()) err.fail_field(0, fields[0], "empty user id");
    if (fields[1].empty()) err.fail_field(1, fields[1], "empty item id");
    if (fields[2] != "0" && fields[2] != "1") err.fail_field(2, fields[2], "label must be 0 or 1");
    RawRecord r{std::string(fields[0]), std::string(fields[1]), fields[2] == "1" ? 1 : 0, {}, no};
    for (std::size_t f = 3; f < fields.size(); ++f) r.covariates.push_back(detail::parse_double(fields[f], err, f));
    out.push_back(std::move(r));
  }
  return out;
}

inline void save_triples(const std::filesystem::path& path, const std::vector<RawRecord>& records) {
  auto out = detail::open_out(path);
  for (const auto& r : records) {
    out << r.user << '\t' << r.item << '\t' << r.label;
    for (double c : r.covariates) out << '\t' << detail::format_double(c);
    out << '\n';
  }
  if (!out) throw DataError(path.string() + ": write failed");
}

/// Bidirectional map between external string ids and dense indices.
class IdMap {
 public:
  Index add(const std::string& id) {
    auto [it, inserted] = index_.emplace(id, static_cast<Index>(ids_.size()));
    if (inserted) ids_.push_back(id);
    return it->second;
  }
  std::optional<Index> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& external(Index i) const { return ids_[static_cast<std::size_t>(i)]; }
  Index size() const { return static_cast<Index>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> index_;
};

struct FeatureTable {
  IdMap ids;
  RowMatrix x;  // one row per id, intercept in column 0
  std::string source;

  Index dim() const { return x.cols(); }
};

inline FeatureTable load_features(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  FeatureTable t;
  t.source = path.string();
  std::vector<std::vector<double>> rows;
  std::string line;
  std::optional<std::size_t> width;
  for (Index no = 1; std::getline(in, line); ++no) {
    const detail::LineError err(path.string(), no);
    const auto fields = detail::split(line, "\t");
    if (!width) width = fields.size();
    if (fields.size() != *width)
      err.fail("ragged row: expected " + std::to_string(*width) + " fields, got " + std::to_string(fields.size()));
    const std::string id(fields[0]);
    if (id.empty()) err.fail_field(0, fields[0], "empty id");
    if (t.ids.find(id)) err.fail("duplicate id '" + id + "'");
    t.ids.add(id);
    std::vector<double> row{1.0};
    for (std::size_t f = 1; f < fields.size(); ++f) row.push_back(detail::parse_double(fields[f], err, f));
    rows.push_back(std::move(row));
  }
  t.x.resize(static_cast<Index>(rows.size()), static_cast<Index>(width.value_or(1)));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) t.x(static_cast<Index>(i), static_cast<Index>(k)) = rows[i][k];
  return t;
}

/// The inverse of load_features: `x` includes the intercept column, which is
/// not written.
inline void save_features(const std::filesystem::path& path, const std::vector<std::string>& ids,
                          const RowMatrix& x) {
  require(static_cast<Index>(ids.size()) == x.rows() && x.cols() >= 1, "save_features: shape mismatch");
  auto out = detail::open_out(path);
  for (Index i = 0; i < x.rows(); ++i) {
    out << ids[static_cast<std::size_t>(i)];
    for (Index k = 1; k < x.cols(); ++k) out << '\t' << detail::format_double(x(i, k));
    out << '\n';
  }
  if (!out) throw DataError(path.string() + ": write failed");
}

/// Covariate row for an id: from the table when given, else intercept only.
inline RowVector feature_row(const FeatureTable* table, const std::string& id, const char* what) {
  if (!table) return RowVector::Ones(1);
  const auto k = table->ids.find(id);
  if (!k) throw DataError(std::string(what) + " '" + id + "' has no row in " + table->source);
  return table->x.row(*k);
}

struct Assembled {
  Dataset data;
  IdMap users;
  IdMap items;
};

/// Builds a Dataset; users and items are numbered in order of first
/// appearance. Every referenced id must exist in the feature tables given.
inline Assembled assemble(const std::vector<RawRecord>& records, const FeatureTable* user_table = nullptr,
                          const FeatureTable* item_table = nullptr) {
  Assembled a;
  std::vector<Observation> obs;
  obs.reserve(records.size());
  const std::size_t p_e = records.empty() ? 0 : records.front().covariates.size();
  RowMatrix xe(static_cast<Index>(records.size()), static_cast<Index>(p_e + 1));
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.covariates.size() != p_e)
      throw DataError("record at line " + std::to_string(r.line) + " has a different covariate count");
    obs.push_back({a.users.add(r.user), a.items.add(r.item), r.label});
    xe(static_cast<Index>(k), 0) = 1.0;
    for (std::size_t c = 0; c < p_e; ++c) xe(static_cast<Index>(k), static_cast<Index>(c + 1)) = r.covariates[c];
  }
  auto table = [](const IdMap& ids, const FeatureTable* t, const char* what) {
    RowMatrix x(ids.size(), t ? t->dim() : 1);
    for (Index i = 0; i < ids.size(); ++i) x.row(i) = feature_row(t, ids.external(i), what);
    return x;
  };
  RowMatrix xu = table(a.users, user_table, "user");
  RowMatrix xv = table(a.items, item_table, "item");
  a.data = Dataset(std::move(obs), std::move(xu), std::move(xv), std::move(xe));
  return a;
}

// ---------------------------------------------------------------------------
// MovieLens.

enum class MovieLensMode { kImbalanced, kBalanced };

inline MovieLensMode parse_movielens_mode(std::string_view s) {
  if (s == "imbalanced") return MovieLensMode::kImbalanced;
  if (s == "balanced") return MovieLensMode::kBalanced;
  throw ContractViolation("unknown MovieLens mode '" + std::string(s) + "'");
}

struct MovieLensSplit {
  std::vector<RawRecord> train;
  std::vector<RawRecord> test;
};

/// Stable sort by timestamp, first ceil(75%) to train, binarize: rating 1 in
/// imbalanced mode, rating 1..3 in balanced mode.
inline MovieLensSplit prepare_movielens(const std::filesystem::path& path, MovieLensMode mode) {
  auto in = detail::open_in(path);
  struct Rating {
    RawRecord rec;
    std::int64_t timestamp;
  };
  std::vector<Rating> all;
  std::string line;
  for (Index no = 1; std::getline(in, line); ++no) {
    const detail::LineError err(path.string(), no);
    const auto f = detail::split(line, "::");
    if (f.size() != 4) err.fail("expected UserID::MovieID::Rating::Timestamp");
    const int rating = detail::parse_int<int>(f[2], err, 2);
    if (rating < 1 || rating > 5) err.fail_field(2, f[2], "rating must be in 1..5");
    const auto ts = detail::parse_int<std::int64_t>(f[3], err, 3);
    detail::parse_int<std::int64_t>(f[0], err, 0);
    detail::parse_int<std::int64_t>(f[1], err, 1);
    const int label = mode == MovieLensMode::kImbalanced ? rating == 1 : rating <= 3;
    all.push_back({{std::string(f[0]), std::string(f[1]), label, {}, no}, ts});
  }
  std::stable_sort(all.begin(), all.end(), [](const Rating& a, const Rating& b) { return a.timestamp < b.timestamp; });
  const std::size_t boundary = (3 * all.size() + 3) / 4;
  MovieLensSplit out;
  out.train.reserve(boundary);
  out.test.reserve(all.size() - boundary);
  for (std::size_t k = 0; k < all.size(); ++k) (k < boundary ? out.train : out.test).push_back(std::move(all[k].rec));
  return out;
}

// ---------------------------------------------------------------------------
// Model files.

struct ModelFile {
  Method method = Method::kArs;
  Hyperparams theta;
  LatentState delta;
  std::vector<std::string> user_ids;  // row i of alpha / U
  std::vector<std::string> item_ids;  // row j of beta / V

  bool operator==(const ModelFile& o) const {
    return method == o.method && theta == o.theta && delta == o.delta && user_ids == o.user_ids &&
           item_ids == o.item_ids;
  }
};

inline void write_model(std::ostream& out, const ModelFile& m) {
  const Hyperparams& t = m.theta;
  const Index M = m.delta.alpha.size(), N = m.delta.beta.size(), r = t.factors();
  require(static_cast<Index>(m.user_ids.size()) == M && static_cast<Index>(m.item_ids.size()) == N &&
              m.delta.U.rows() == M && m.delta.V.rows() == N && m.delta.U.cols() == r && m.delta.V.cols() == r,
          "write_model: inconsistent model");
  auto row = [&](const char* key, auto&& values) {
    out << key;
    for (Index k = 0; k < values.size(); ++k) out << '\t' << detail::format_double(values(k));
    out << '\n';
  };
  out << "[HEADER]\n";
  out << "version\t" << kModelFormatVersion << '\n';
  out << "mode\t" << method_name(m.method) << '\n';
  out << "M\t" << M << "\nN\t" << N << "\nr\t" << r << '\n';
  out << "p_f\t" << t.f_w.size() << "\np_u\t" << t.g_w.size() << "\np_v\t" << t.h_w.size() << '\n';
  out << "diagonal_u\t" << (t.diagonal_u ? 1 : 0) << '\n';
  out << "[THETA]\n";
  row("f_w", t.f_w);
  row("g_w", t.g_w);
  row("h_w", t.h_w);
  const RowMatrix G = t.G_w, H = t.H_w;
  row("G_w", G.reshaped<Eigen::RowMajor>());
  row("H_w", H.reshaped<Eigen::RowMajor>());
  out << "sigma2_alpha\t" << detail::format_double(t.sigma2_alpha) << '\n';
  out << "sigma2_beta\t" << detail::format_double(t.sigma2_beta) << '\n';
  row("sigma2_u", t.sigma2_u);
  out << "sigma2_v\t" << detail::format_double(t.sigma2_v) << '\n';
  out << "[ALPHA]\n";
  for (Index i = 0; i < M; ++i) out << m.user_ids[i] << '\t' << detail::format_double(m.delta.alpha(i)) << '\n';
  out << "[BETA]\n";
  for (Index j = 0; j < N; ++j) out << m.item_ids[j] << '\t' << detail::format_double(m.delta.beta(j)) << '\n';
  out << "[U]\n";
  for (Index i = 0; i < M; ++i) row(m.user_ids[i].c_str(), m.delta.U.row(i));
  out << "[V]\n";
  for (Index j = 0; j < N; ++j) row(m.item_ids[j].c_str(), m.delta.V.row(j));
  out << "[END]\n";
}

inline void save_model(const std::filesystem::path& path, const ModelFile& m) {
  auto out = detail::open_out(path);
  write_model(out, m);
  if (!out) throw DataError(path.string() + ": write failed");
}

namespace detail {

class ModelReader {
 public:
  ModelReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  void expect_section(const char* section) {
    section_ = section;
    std::string line;
    if (!next(line)) fail("missing");
    if (line != "[" + section_ + "]") fail("expected header '[" + section_ + "]', found '" + line + "'");
  }

  /// Key line with exactly `count` values (count < 0: any number).
  std::vector<std::string_view> fields(const std::string& key, Index count) {
    if (!next(line_)) fail("truncated before '" + key + "'");
    auto f = split(line_, "\t");
    if (f.front() != key) fail("line " + std::to_string(line_no_) + ": expected '" + key + "'");
    f.erase(f.begin());
    if (count >= 0 && static_cast<Index>(f.size()) != count)
      fail("line " + std::to_string(line_no_) + ": '" + key + "' expects " + std::to_string(count) + " values");
    return f;
  }

  /// Id-keyed row with `count` values.
  std::pair<std::string, std::vector<double>> keyed_row(Index count, Index index, Index total) {
    if (!next(line_) || (!line_.empty() && line_.front() == '['))
      fail("truncated: expected " + std::to_string(total) + " rows, got " + std::to_string(index));
    auto f = split(line_, "\t");
    if (static_cast<Index>(f.size()) != count + 1)
      fail("line " + std::to_string(line_no_) + ": expects " + std::to_string(count) + " values");
    std::vector<double> v;
    for (std::size_t k = 1; k < f.size(); ++k) v.push_back(number(f[k]));
    return {std::string(f[0]), std::move(v)};
  }

  double number(std::string_view s) {
    double v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end)
      fail("line " + std::to_string(line_no_) + ": bad number '" + std::string(s) + "'");
    return v;
  }

  Index integer(std::string_view s) {
    Index v = 0;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end)
      fail("line " + std::to_string(line_no_) + ": bad integer '" + std::string(s) + "'");
    return v;
  }

  Vector numbers(const std::string& key, Index count) {
    const auto f = fields(key, count);
    Vector v(static_cast<Index>(f.size()));
    for (std::size_t k = 0; k < f.size(); ++k) v(static_cast<Index>(k)) = number(f[k]);
    return v;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(name_ + ": section " + section_ + ": " + what);
  }

 private:
  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    return true;
  }

  std::istream& in_;
  std::string name_;
  std::string section_ = "HEADER";
  std::string line_;
  Index line_no_ = 0;
};

}  // namespace detail

inline ModelFile read_model(std::istream& in, const std::string& name = "model") {
  detail::ModelReader rd(in, name);
  ModelFile m;
  rd.expect_section("HEADER");
  const Index version = rd.integer(rd.fields("version", 1)[0]);
  if (version != kModelFormatVersion)
    rd.fail("unsupported format version " + std::to_string(version) + " (expected " +
            std::to_string(kModelFormatVersion) + ")");
  try {
    m.method = parse_method(rd.fields("mode", 1)[0]);
  } catch (const ContractViolation& e) {
    rd.fail(e.what());
  }
  auto dim = [&](const char* key, Index min) {
    const Index v = rd.integer(rd.fields(key, 1)[0]);
    if (v < min) rd.fail(std::string(key) + " out of range");
    return v;
  };
  const Index M = dim("M", 0), N = dim("N", 0), r = dim("r", 1);
  const Index p_f = dim("p_f", 1), p_u = dim("p_u", 1), p_v = dim("p_v", 1);
  const Index diag = dim("diagonal_u", 0);
  if (diag > 1) rd.fail("diagonal_u must be 0 or 1");

  rd.expect_section("THETA");
  Hyperparams& t = m.theta;
  t.f_w = rd.numbers("f_w", p_f);
  t.g_w = rd.numbers("g_w", p_u);
  t.h_w = rd.numbers("h_w", p_v);
  t.G_w = Eigen::Map<const RowMatrix>(rd.numbers("G_w", r * p_u).data(), r, p_u);
  t.H_w = Eigen::Map<const RowMatrix>(rd.numbers("H_w", r * p_v).data(), r, p_v);
  t.sigma2_alpha = rd.numbers("sigma2_alpha", 1)(0);
  t.sigma2_beta = rd.numbers("sigma2_beta", 1)(0);
  t.sigma2_u = rd.numbers("sigma2_u", r);
  t.diagonal_u = diag == 1;
  t.sigma2_v = rd.numbers("sigma2_v", 1)(0);

  m.delta = LatentState::zeros(M, N, r);
  rd.expect_section("ALPHA");
  for (Index i = 0; i < M; ++i) {
    auto [id, v] = rd.keyed_row(1, i, M);
    m.user_ids.push_back(std::move(id));
    m.delta.alpha(i) = v[0];
  }
  rd.expect_section("BETA");
  for (Index j = 0; j < N; ++j) {
    auto [id, v] = rd.keyed_row(1, j, N);
    m.item_ids.push_back(std::move(id));
    m.delta.beta(j) = v[0];
  }
  rd.expect_section("U");
  for (Index i = 0; i < M; ++i) {
    auto [id, v] = rd.keyed_row(r, i, M);
    if (id != m.user_ids[i]) rd.fail("row " + std::to_string(i) + " id '" + id + "' differs from ALPHA");
    for (Index k = 0; k < r; ++k) m.delta.U(i, k) = v[k];
  }
  rd.expect_section("V");
  for (Index j = 0; j < N; ++j) {
    auto [id, v] = rd.keyed_row(r, j, N);
    if (id != m.item_ids[j]) rd.fail("row " + std::to_string(j) + " id '" + id + "' differs from BETA");
    for (Index k = 0; k < r; ++k) m.delta.V(j, k) = v[k];
  }
  rd.expect_section("END");
  return m;
}

inline ModelFile load_model(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return read_model(in, path.string());
}

/// Probability for each record. Ids absent from the model get the
/// regression-prior mean of their effects from their covariates.
inline std::vector<double> predict_records(const ModelFile& m, const std::vector<RawRecord>& records,
                                           const FeatureTable* user_table = nullptr,
                                           const FeatureTable* item_table = nullptr) {
  const Hyperparams& t = m.theta;
  std::unordered_map<std::string, Index> users, items;
  for (std::size_t i = 0; i < m.user_ids.size(); ++i) users.emplace(m.user_ids[i], static_cast<Index>(i));
  for (std::size_t j = 0; j < m.item_ids.size(); ++j) items.emplace(m.item_ids[j], static_cast<Index>(j));
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (static_cast<Index>(rec.covariates.size()) + 1 != t.f_w.size())
      throw DataError("record at line " + std::to_string(rec.line) + ": event covariate count does not match model");
    double s = t.f_w(0);
    for (std::size_t c = 0; c < rec.covariates.size(); ++c) s += t.f_w(static_cast<Index>(c + 1)) * rec.covariates[c];
    double a, b;
    Vector u, v;
    if (auto it = users.find(rec.user); it != users.end()) {
      a = m.delta.alpha(it->second);
      u = m.delta.U.row(it->second).transpose();
    } else {
      const RowVector x = feature_row(user_table, rec.user, "user");
      if (x.size() != t.g_w.size()) throw DataError("user features do not match the model dimension");
      a = x.dot(t.g_w);
      u = t.G_w * x.transpose();
    }
    if (auto it = items.find(rec.item); it != items.end()) {
      b = m.delta.beta(it->second);
      v = m.delta.V.row(it->second).transpose();
    } else {
      const RowVector x = feature_row(item_table, rec.item, "item");
      if (x.size() != t.h_w.size()) throw DataError("item features do not match the model dimension");
      b = x.dot(t.h_w);
      v = t.H_w * x.transpose();
    }
    out.push_back(math::logistic(s + a + b + u.dot(v)));
  }
  return out;
}

}  // namespace bire::io
