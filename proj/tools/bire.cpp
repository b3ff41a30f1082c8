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


#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "bire/bire.hpp"

namespace {

using namespace bire;
namespace fs = std::filesystem;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitFit = 4;

struct DataOptions {
  std::string train, user_features, item_features;
  std::optional<io::FeatureTable> users, items;

  void add(CLI::App* app, const char* triples_flag, const char* triples_help) {
    app->add_option(triples_flag, train, triples_help)->required();
    app->add_option("--user-features", user_features, "user covariates: <id>\\t<f1>...");
    app->add_option("--item-features", item_features, "item covariates: <id>\\t<f1>...");
  }
  void load_tables() {
    if (!user_features.empty()) users = io::load_features(io::resolve_data_path(user_features));
    if (!item_features.empty()) items = io::load_features(io::resolve_data_path(item_features));
  }
  const io::FeatureTable* user_table() const { return users ? &*users : nullptr; }
  const io::FeatureTable* item_table() const { return items ? &*items : nullptr; }
};

struct FitOptions {
  std::string method = "ars";
  Index factors = 2;
  Index iters = 30;
  std::vector<Index> samples;
  Index burn_in = 2;
  std::uint64_t seed = 1;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--method", method, "var | ars | arsid")->capture_default_str();
    app->add_option("--factors,-r", factors, "latent dimension r")->capture_default_str();
    app->add_option("--iters", iters, "EM iterations")->capture_default_str();
    app->add_option("--samples", samples,
                    "Gibbs samples per iteration: one value for all, or one per iteration "
                    "(default: 10, 50, 200 over thirds)")
        ->delimiter(',');
    app->add_option("--burn-in", burn_in, "discarded sweeps per E-step")->capture_default_str();
    app->add_option("--seed", seed, "RNG seed")->capture_default_str();
    app->add_option("--out,-o", out, "model file to write")->required();
  }

  FitSchedule schedule() const {
    const Method m = parse_method(method);
    FitSchedule s;
    if (samples.empty()) {
      const Index a = iters / 3, b = iters / 3, c = iters - a - b;
      s = FitSchedule::ramp(m, {{a, 10}, {b, 50}, {c, 200}}, seed);
    } else {
      s = FitSchedule::ramp(m, {}, seed);
      s.num_iters = iters;
      if (samples.size() == 1)
        s.sample_vector.assign(static_cast<std::size_t>(iters), samples[0]);
      else if (static_cast<Index>(samples.size()) == iters)
        s.sample_vector = samples;
      else
        throw ContractViolation("--samples needs one value or exactly --iters values");
    }
    s.burn_in = burn_in;
    s.validate();
    return s;
  }
};

Index default_threads() { return std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency())); }

io::ModelFile make_model(Method method, Hyperparams theta, LatentState delta, const io::Assembled& a) {
  return {method, std::move(theta), std::move(delta), a.users.ids(), a.items.ids()};
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(io::resolve_data_path(path));
  if (!out) throw DataError(path + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

int cmd_fit(DataOptions& data, const FitOptions& opt, const std::string& trace_path) {
  const FitSchedule schedule = opt.schedule();
  data.load_tables();
  const auto records = io::load_triples(io::resolve_data_path(data.train));
  const auto a = io::assemble(records, data.user_table(), data.item_table());
  require(a.data.size() > 0, "training file has no observations");
  auto fit = fit_single_partition(a.data, std::nullopt, schedule, opt.factors);
  io::save_model(io::resolve_data_path(opt.out), make_model(schedule.method, fit.theta, fit.delta, a));
  if (!trace_path.empty()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : fit.trace)
      j.push_back({{"iteration", t.iteration}, {"samples", t.samples}, {"log_likelihood", t.log_likelihood},
                   {"ars_draws", t.ars_draws}, {"ars_rejections", t.ars_rejections}, {"seconds", t.seconds}});
    write_json(trace_path, j);
  }
  std::cout << "fit: " << a.data.size() << " observations, " << a.data.num_users() << " users, "
            << a.data.num_items() << " items -> " << opt.out << '\n';
  return 0;
}

struct ParallelOptions {
  Index partitions = 2;
  Index runs = 1;
  std::string key = "user";
  Index threads = 0;
  Index eonly_samples = 200;
  Index sync_rounds = 0;
  std::vector<std::uint64_t> seeds;
  std::string report;

  void add(CLI::App* app) {
    app->add_option("--partitions,-m", partitions, "number of partitions m")->capture_default_str();
    app->add_option("--ensemble-runs,-n", runs, "E-step-only ensemble runs n")->capture_default_str();
    app->add_option("--partition-key", key, "user | item | event")->capture_default_str();
    app->add_option("--threads", threads, "worker pool size (default: all cores)");
    app->add_option("--estep-samples", eonly_samples, "samples in each E-step-only run")->capture_default_str();
    app->add_option("--sync-rounds", sync_rounds, "extra full MCEM rounds from the averaged Theta")
        ->capture_default_str();
    app->add_option("--partition-seeds", seeds, "one seed per run (default 1..n+1)")->delimiter(',');
    app->add_option("--report", report, "JSON run report");
  }
};

int cmd_fit_parallel(DataOptions& data, const FitOptions& opt, const ParallelOptions& par) {
  EnsembleConfig cfg;
  cfg.m = par.partitions;
  cfg.n = par.runs;
  cfg.key = parse_partition_key(par.key);
  cfg.factors = opt.factors;
  cfg.seeds = par.seeds;
  cfg.schedule_full = opt.schedule();
  cfg.schedule_eonly = FitSchedule::estep_only(cfg.schedule_full.method, par.eonly_samples, opt.seed);
  cfg.schedule_eonly.burn_in = opt.burn_in;
  cfg.sync_rounds = par.sync_rounds;
  cfg.validate();
  data.load_tables();
  const auto records = io::load_triples(io::resolve_data_path(data.train));
  const auto a = io::assemble(records, data.user_table(), data.item_table());
  require(a.data.size() > 0, "training file has no observations");
  auto res = fit_ensemble(a.data, cfg, par.threads > 0 ? par.threads : default_threads());
  io::save_model(io::resolve_data_path(opt.out), make_model(cfg.schedule_full.method, res.theta, res.delta, a));
  if (!par.report.empty()) write_json(par.report, res.report);
  std::cout << "fit-parallel: m=" << cfg.m << " n=" << cfg.n << " -> " << opt.out << '\n';
  return 0;
}

int cmd_predict(DataOptions& data, const std::string& model_path, const std::string& out_path) {
  data.load_tables();
  const auto model = io::load_model(io::resolve_data_path(model_path));
  const auto records = io::load_triples(io::resolve_data_path(data.train));
  const auto p = io::predict_records(model, records, data.user_table(), data.item_table());
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(io::resolve_data_path(out_path));
    if (!file) throw DataError(out_path + ": cannot open for writing");
  }
  std::ostream& out = out_path.empty() ? std::cout : file;
  for (std::size_t k = 0; k < records.size(); ++k)
    out << records[k].user << '\t' << records[k].item << '\t' << records[k].label << '\t'
        << io::detail::format_double(p[k]) << '\n';
  return 0;
}

int cmd_eval_auc(DataOptions& data, const std::string& model_path) {
  data.load_tables();
  const auto model = io::load_model(io::resolve_data_path(model_path));
  const auto records = io::load_triples(io::resolve_data_path(data.train));
  const auto p = io::predict_records(model, records, data.user_table(), data.item_table());
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.label);
  std::printf("auc\t%.6f\n", auc(p, labels));
  return 0;
}

// events: <epoch>\t<user>\t<clicked item>\t<item,item,...>
int cmd_replay(DataOptions& data, const std::string& model_path) {
  data.load_tables();
  const auto model = io::load_model(io::resolve_data_path(model_path));
  const fs::path path = io::resolve_data_path(data.train);
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open for reading");
  io::IdMap users, items;
  std::vector<ReplayEvent> events;
  std::string line;
  for (Index no = 1; std::getline(in, line); ++no) {
    const io::detail::LineError err(path.string(), no);
    const auto f = io::detail::split(line, "\t");
    if (f.size() != 4) err.fail("expected <epoch>\\t<user>\\t<clicked>\\t<pool>");
    ReplayEvent ev;
    ev.epoch = io::detail::parse_int<Index>(f[0], err, 0);
    if (ev.epoch < 0) err.fail_field(0, f[0], "epoch must be >= 0");
    ev.user = users.add(std::string(f[1]));
    ev.clicked = items.add(std::string(f[2]));
    for (auto id : io::detail::split(f[3], ",")) {
      if (id.empty()) err.fail_field(3, f[3], "empty item id in pool");
      ev.pool.push_back(items.add(std::string(id)));
    }
    if (std::find(ev.pool.begin(), ev.pool.end(), ev.clicked) == ev.pool.end())
      err.fail_field(2, f[2], "clicked item is not in the pool");
    events.push_back(std::move(ev));
  }
  auto predictor = [&](Index u, Index i) {
    const std::vector<io::RawRecord> rec{{users.external(u), items.external(i), 0, {}, 0}};
    return io::predict_records(model, rec, data.user_table(), data.item_table())[0];
  };
  const auto res = replay_score(predictor, events);
  std::printf("S\t%lld\nevents\t%zu\n", static_cast<long long>(res.score), events.size());
  for (std::size_t t = 0; t < res.matches.size(); ++t)
    std::printf("epoch\t%zu\t%lld\n", t, static_cast<long long>(res.matches[t]));
  return 0;
}

struct SyntheticOptions {
  SyntheticSpec spec;
  std::string out_dir = ".";
  std::string method = "ars";
  double test_fraction = 0.25;
};

int cmd_gen_synthetic(SyntheticOptions& o) {
  require(o.test_fraction >= 0 && o.test_fraction < 1, "--test-fraction must be in [0, 1)");
  const auto truth = generate_synthetic(o.spec);
  const fs::path dir = io::resolve_data_path(o.out_dir);
  fs::create_directories(dir);
  const Dataset& d = truth.dataset;
  auto uid = [](Index i) { return "u" + std::to_string(i); };
  auto iid = [](Index j) { return "i" + std::to_string(j); };
  std::vector<io::RawRecord> train, test;
  std::mt19937_64 rng(derive_seed(o.spec.seed, 99));
  std::bernoulli_distribution holdout(o.test_fraction);
  for (Index k = 0; k < d.size(); ++k) {
    io::RawRecord r{uid(d[k].user), iid(d[k].item), d[k].y, {}, k + 1};
    for (Index c = 1; c < d.event_dim(); ++c) r.covariates.push_back(d.event_features()(k, c));
    (holdout(rng) ? test : train).push_back(std::move(r));
  }
  io::save_triples(dir / "train.tsv", train);
  io::save_triples(dir / "test.tsv", test);
  std::vector<std::string> uids, iids;
  for (Index i = 0; i < d.num_users(); ++i) uids.push_back(uid(i));
  for (Index j = 0; j < d.num_items(); ++j) iids.push_back(iid(j));
  io::save_features(dir / "users.tsv", uids, d.user_features());
  io::save_features(dir / "items.tsv", iids, d.item_features());
  io::save_model(dir / "truth.model", {parse_method(o.method), truth.theta, truth.delta, uids, iids});
  std::cout << "gen-synthetic: " << train.size() << " train, " << test.size() << " test, positive rate "
            << d.positive_rate() << " -> " << dir.string() << '\n';
  return 0;
}

int cmd_prepare_movielens(const std::string& ratings, const std::string& mode, const std::string& out_dir) {
  const auto split = io::prepare_movielens(io::resolve_data_path(ratings), io::parse_movielens_mode(mode));
  const fs::path dir = io::resolve_data_path(out_dir);
  fs::create_directories(dir);
  io::save_triples(dir / "train.tsv", split.train);
  io::save_triples(dir / "test.tsv", split.test);
  auto rate = [](const std::vector<io::RawRecord>& r) {
    double pos = 0;
    for (const auto& x : r) pos += x.label;
    return r.empty() ? 0.0 : pos / static_cast<double>(r.size());
  };
  std::printf("train\t%zu\t%.4f\ntest\t%zu\t%.4f\n", split.train.size(), rate(split.train), split.test.size(),
              rate(split.test));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regression-based latent factor models for binary response"};
  app.set_config("--config", "", "key=value configuration file; flags override it");
  app.require_subcommand(1);

  DataOptions data;
  FitOptions fit_opt;
  ParallelOptions par;
  std::string trace, model_path, out_path, ratings, ml_mode = "imbalanced", ml_out = ".";
  SyntheticOptions syn;

  auto* fit = app.add_subcommand("fit", "fit one partition by MCEM");
  data.add(fit, "--train", "training triples");
  fit_opt.add(fit);
  fit->add_option("--trace", trace, "JSON per-iteration trace");

  auto* fitp = app.add_subcommand("fit-parallel", "divide-and-conquer ensemble fit");
  data.add(fitp, "--train", "training triples");
  fit_opt.add(fitp);
  par.add(fitp);

  auto* predict = app.add_subcommand("predict", "write <user> <item> <label> <probability>");
  data.add(predict, "--input", "triples to score");
  predict->add_option("--model", model_path, "model file")->required();
  predict->add_option("--out,-o", out_path, "output file (default stdout)");

  auto* eval_auc = app.add_subcommand("eval-auc", "AUC of a model on labelled triples");
  data.add(eval_auc, "--test", "test triples");
  eval_auc->add_option("--model", model_path, "model file")->required();

  auto* replay = app.add_subcommand("replay", "click-match score S on logged events");
  data.add(replay, "--events", "events: <epoch>\\t<user>\\t<clicked>\\t<item,item,...>");
  replay->add_option("--model", model_path, "model file")->required();

  auto* gen = app.add_subcommand("gen-synthetic", "simulate data from the model");
  gen->add_option("--users", syn.spec.M)->capture_default_str();
  gen->add_option("--items", syn.spec.N)->capture_default_str();
  gen->add_option("--factors,-r", syn.spec.r)->capture_default_str();
  gen->add_option("--user-dim", syn.spec.p_u, "user covariates including intercept")->capture_default_str();
  gen->add_option("--item-dim", syn.spec.p_v, "item covariates including intercept")->capture_default_str();
  gen->add_option("--event-dim", syn.spec.p_f, "event covariates including intercept")->capture_default_str();
  gen->add_option("--events-per-user", syn.spec.events_per_user)->capture_default_str();
  gen->add_option("--seed", syn.spec.seed)->capture_default_str();
  gen->add_option("--method", syn.method, "mode recorded in truth.model")->capture_default_str();
  gen->add_option("--test-fraction", syn.test_fraction)->capture_default_str();
  gen->add_option("--out-dir", syn.out_dir)->capture_default_str();

  auto* ml = app.add_subcommand("prepare-movielens", "time-ordered 75/25 split of ratings.dat");
  ml->add_option("--ratings", ratings, "UserID::MovieID::Rating::Timestamp file")->required();
  ml->add_option("--mode", ml_mode, "imbalanced | balanced")->capture_default_str();
  ml->add_option("--out-dir", ml_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*fit) return cmd_fit(data, fit_opt, trace);
    if (*fitp) return cmd_fit_parallel(data, fit_opt, par);
    if (*predict) return cmd_predict(data, model_path, out_path);
    if (*eval_auc) return cmd_eval_auc(data, model_path);
    if (*replay) return cmd_replay(data, model_path);
    if (*gen) return cmd_gen_synthetic(syn);
    if (*ml) return cmd_prepare_movielens(ratings, ml_mode, ml_out);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kExitFit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFit;
  }
  return kExitUsage;
}
