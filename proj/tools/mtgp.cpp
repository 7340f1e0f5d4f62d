// mtgp: fit once, post-process many.
//
//   mtgp fit     --data panel.csv --config model.json --out run/
//   mtgp predict --out run/        (also weights, ppc, placebo, loo, report)
//   mtgp scm     --data panel.csv --config model.json --out dir/
//
// Exit codes: 0 ok, 1 usage or input error, 2 fit flagged (divergences or R-hat).

#include "mtgp/archive.hpp"
#include "mtgp/config.hpp"
#include "mtgp/diagnostics.hpp"
#include "mtgp/effects.hpp"
#include "mtgp/pipeline.hpp"
#include "mtgp/predict.hpp"
#include "mtgp/sampler.hpp"
#include "mtgp/scm.hpp"
#include "mtgp/stats.hpp"
#include "mtgp/weights.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace mtgp;
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFlagged = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains, iters, warmup;
  int jobs = 0;
  std::string treated;
  std::optional<long> last_pre_time;
  double rhat_threshold = 1.01;
  // ppc
  std::string stat = "all";
  std::string ranks;
  // placebo
  std::optional<long> placebo_start;
  // report
  std::optional<double> budget, population;
  bool reduction = false;
  // scm
  std::string outcome;
};

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

ordered_json summary_json(const EffectSummary& s) {
  return {{"mean", json_number(s.mean)},   {"median", json_number(s.median)}, {"lo50", json_number(s.lo50)},
          {"hi50", json_number(s.hi50)},   {"lo95", json_number(s.lo95)},     {"hi95", json_number(s.hi95)},
          {"prob_negative", s.prob_negative}};
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void write_timings(const std::string& dir, const std::string& command, const ordered_json& stages) {
  const fs::path p = fs::path(dir) / "timings.json";
  ordered_json all = fs::exists(p) ? ordered_json::parse(read_text(p.string())) : ordered_json::object();
  all[command] = stages;
  write_text(p.string(), all.dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------
// Inputs.

ModelConfig effective_config(const Options& o) {
  ModelConfig cfg = o.config.empty() ? parse_config("{}") : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.chains) cfg.chains = *o.chains;
  if (o.iters) cfg.iters = *o.iters;
  if (o.warmup) cfg.warmup = *o.warmup;
  if (!o.treated.empty()) cfg.treated_unit = o.treated;
  if (o.last_pre_time) {
    cfg.last_pre_time = o.last_pre_time;
    cfg.t0.reset();
  }
  // Thread count never changes results, so it stays out of the hashed configuration.
  cfg.jobs = 1;
  if (cfg.chains < 1 || cfg.iters < 1) throw UsageError("--chains and --iters must be >= 1");
  if (cfg.warmup < 100) throw UsageError("--warmup must be >= 100");
  return cfg;
}

struct LoadedData {
  PanelDataset data;
  std::string path;
  std::string fingerprint;
};

LoadedData load_data(const std::string& path, const ModelConfig& cfg) {
  if (path.empty()) throw UsageError("--data is required");
  if (cfg.treated_unit.empty()) throw UsageError("treated unit missing: set treated_unit in the config or pass --treated");
  PanelSchema schema;
  schema.treated_unit = cfg.treated_unit;
  schema.t0 = cfg.t0;
  schema.last_pre_time = cfg.last_pre_time;
  schema.kind = cfg.value_kind;
  const std::string text = read_text(path);
  return {parse_panel(text, schema), fs::absolute(path).lexically_normal().string(), fingerprint(text)};
}

struct Run {
  std::string dir;
  RunManifest manifest;
  ModelConfig config;
  LoadedData data;
  ModelSpec spec;
  PosteriorDraws draws;
  std::uint64_t seed = 0;
};

Run open_run(const Options& o) {
  if (o.out.empty()) throw UsageError("--out (the fit run directory) is required");
  const fs::path dir(o.out);
  if (!fs::exists(dir / "manifest.json")) throw UsageError("no fit run at '" + o.out + "' (manifest.json missing)");
  RunManifest manifest = manifest_from_json(read_text((dir / "manifest.json").string()));
  if (manifest.command != "fit") {
    throw UsageError("'" + o.out + "' was written by '" + manifest.command + "', not by fit");
  }
  ModelConfig config = parse_config(read_text((dir / "config.json").string()));
  const std::string path = o.data.empty() ? manifest.data_path : o.data;
  LoadedData in = load_data(path, config);
  if (in.fingerprint != manifest.data_fingerprint) {
    throw UsageError("data file '" + path + "' does not match the fit (fingerprint " + in.fingerprint + ", expected " +
                     manifest.data_fingerprint + ")");
  }
  ModelSpec spec = build_model(config, in.data);
  PosteriorDraws draws = read_draws(o.out);
  if (draws.dim() != spec.dim) throw UsageError("draw archive does not match the model in config.json");
  const std::uint64_t seed = o.seed.value_or(manifest.seed);
  return {o.out, std::move(manifest), std::move(config), std::move(in), std::move(spec), std::move(draws), seed};
}

RunManifest new_manifest(const std::string& command, const ModelConfig& cfg, const LoadedData& in) {
  RunManifest m;
  m.command = command;
  m.config_hash = fingerprint(config_to_json(cfg));
  m.seed = cfg.seed;
  m.data_path = in.path;
  m.data_fingerprint = in.fingerprint;
  m.chains = cfg.chains;
  m.warmup = cfg.warmup;
  m.iters = cfg.iters;
  return m;
}

// ---------------------------------------------------------------------------------------
// Shared writers.

std::string cf_rows(const CounterfactualDraws& cf, const PanelDataset& data, const std::string& prefix) {
  std::string body;
  for (Eigen::Index d = 0; d < cf.n_draws(); ++d) {
    for (std::size_t k = 0; k < cf.cells.size(); ++k) {
      const Cell& c = cf.cells[k];
      body += prefix + std::to_string(d) + "," + std::to_string(data.time_ids()[static_cast<std::size_t>(c.time)]) + "," +
              data.outcome_names()[static_cast<std::size_t>(c.outcome)] + "," + full(cf.values(d, static_cast<Eigen::Index>(k))) +
              "\n";
    }
  }
  return body;
}

std::string band_row(long time, double obs, const Eigen::VectorXd& draws) {
  const Interval i50 = central_interval(draws, 0.5), i95 = central_interval(draws, 0.95);
  return std::to_string(time) + "," + num(obs) + "," + num(draws.mean()) + "," + num(i50.lo) + "," + num(i50.hi) + "," +
         num(i95.lo) + "," + num(i95.hi) + "\n";
}

constexpr const char* kBandHeader = "time,obs,mean,lo50,hi50,lo95,hi95\n";

std::string outcome_suffix(const PanelDataset& data, int outcome) {
  return data.n_outcomes() > 1 ? "_" + data.outcome_names()[static_cast<std::size_t>(outcome)] : "";
}

ordered_json refit_json(const RefitSummary& s) {
  return {{"divergences", s.divergences}, {"unreliable", s.unreliable}, {"max_rhat", json_number(s.max_rhat)}};
}

int parse_outcome(const PanelDataset& data, const std::string& name) {
  if (name.empty()) return 0;
  for (int o = 0; o < data.n_outcomes(); ++o) {
    if (data.outcome_names()[static_cast<std::size_t>(o)] == name) return o;
  }
  throw UsageError("unknown outcome '" + name + "'");
}

// ---------------------------------------------------------------------------------------
// Subcommands.

int cmd_fit(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required for fit");
  if (o.out.empty()) throw UsageError("--out is required for fit");
  Stopwatch clock;
  ordered_json stages;
  const ModelConfig cfg = effective_config(o);
  const LoadedData in = load_data(o.data, cfg);
  const ModelSpec spec = build_model(cfg, in.data);
  stages["load"] = clock.lap();
  const PosteriorDraws draws = run_chains(spec, in.data, cfg.chains, cfg.warmup, cfg.iters, cfg.seed, o.jobs);
  stages["sample"] = clock.lap();

  fs::create_directories(o.out);
  const std::string config_json = config_to_json(cfg);
  write_text((fs::path(o.out) / "config.json").string(), config_json);
  write_draws(draws, o.out);

  RunManifest m = new_manifest("fit", cfg, in);
  m.divergences = draws.n_divergent();
  for (int c = 0; c < draws.n_chains(); ++c) m.divergences_per_chain.push_back(draws.divergent_in_chain(c));
  m.unreliable = draws.unreliable;

  std::string summary = "param,mean,sd,q05,q50,q95,rhat,bulk_ess\n";
  const bool multi = draws.n_chains() >= 2 && draws.n_iters() >= 4;
  double max_rhat = 1.0, min_ess = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < draws.dim(); ++k) {
    const Eigen::MatrixXd col = draws.column(k);
    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(col.data(), col.size());
    const double mean = flat.mean();
    const double sd = flat.size() > 1 ? std::sqrt((flat.array() - mean).square().sum() / (flat.size() - 1.0)) : 0.0;
    std::string rhat_s = "NA", ess_s = "NA";
    if (multi) {
      const ConvergenceStat r = rhat(col);
      const ConvergenceStat e = bulk_ess(col);
      if (!r.degenerate) {
        max_rhat = std::max(max_rhat, r.value);
        min_ess = std::min(min_ess, e.value);
      }
      rhat_s = num(r.value);
      ess_s = num(e.value);
    }
    summary += draws.names[static_cast<std::size_t>(k)].find(',') == std::string::npos
                   ? draws.names[static_cast<std::size_t>(k)]
                   : "\"" + draws.names[static_cast<std::size_t>(k)] + "\"";
    summary += "," + num(mean) + "," + num(sd) + "," + num(quantile(flat, 0.05)) + "," + num(quantile(flat, 0.5)) + "," +
               num(quantile(flat, 0.95)) + "," + rhat_s + "," + ess_s + "\n";
  }
  write_text((fs::path(o.out) / "fit_summary.csv").string(), summary);
  if (multi) {
    m.max_rhat = max_rhat;
    m.min_bulk_ess = std::isfinite(min_ess) ? min_ess : 0.0;
  }
  m.converged = !m.unreliable && (!m.max_rhat || *m.max_rhat <= o.rhat_threshold);
  write_text((fs::path(o.out) / "manifest.json").string(), manifest_to_json(m));
  stages["summarize"] = clock.lap();
  write_timings(o.out, "fit", stages);

  std::cout << "fit: " << draws.n_chains() << " chains x " << draws.n_iters() << " draws, " << m.divergences
            << " divergent, max R-hat " << (m.max_rhat ? num(*m.max_rhat) : std::string("unavailable (single chain)"))
            << "\n";
  if (!m.converged) {
    std::cerr << "warning: fit flagged (" << (m.unreliable ? "too many divergent transitions" : "R-hat above threshold")
              << "); outputs written\n";
    return kExitFlagged;
  }
  return kExitOk;
}

int cmd_predict(const Options& o) {
  Stopwatch clock;
  const Run r = open_run(o);
  const CounterfactualDraws cf = impute_counterfactuals(r.draws, r.spec, r.data.data, r.seed, o.jobs);
  write_text((fs::path(r.dir) / "counterfactuals.csv").string(),
             "iteration,time,outcome,value\n" + cf_rows(cf, r.data.data, ""));
  const Eigen::MatrixXd rates = cf.rates(r.data.data);
  std::string summary = "time,outcome,mean,lo50,hi50,lo95,hi95\n";
  for (std::size_t k = 0; k < cf.cells.size(); ++k) {
    const Cell& c = cf.cells[k];
    const Eigen::VectorXd col = rates.col(static_cast<Eigen::Index>(k));
    const Interval i50 = central_interval(col, 0.5), i95 = central_interval(col, 0.95);
    summary += std::to_string(r.data.data.time_ids()[static_cast<std::size_t>(c.time)]) + "," +
               r.data.data.outcome_names()[static_cast<std::size_t>(c.outcome)] + "," + num(col.mean()) + "," +
               num(i50.lo) + "," + num(i50.hi) + "," + num(i95.lo) + "," + num(i95.hi) + "\n";
  }
  write_text((fs::path(r.dir) / "counterfactual_summary.csv").string(), summary);
  write_timings(r.dir, "predict", {{"predict", clock.lap()}});
  return kExitOk;
}

int cmd_weights(const Options& o) {
  Stopwatch clock;
  const Run r = open_run(o);
  if (r.spec.config.likelihood != Likelihood::gaussian) {
    throw UsageError("unit/time weights exist only for the Gaussian likelihood; refit with \"likelihood\": \"gaussian\"");
  }
  const std::vector<WeightSummary> ws = marginal_weights(r.draws, r.spec, r.data.data, o.jobs);
  const PanelDataset& d = r.data.data;
  const bool multi = d.n_outcomes() > 1;
  std::string units = multi ? "target_time,target_outcome,unit,gamma_mean,gamma_q05,gamma_q95\n"
                            : "target_time,unit,gamma_mean,gamma_q05,gamma_q95\n";
  std::string times = multi ? "target_time,target_outcome,time,lambda_mean,lambda_q05,lambda_q95\n"
                            : "target_time,time,lambda_mean,lambda_q05,lambda_q95\n";
  for (const auto& w : ws) {
    std::string key = std::to_string(d.time_ids()[static_cast<std::size_t>(w.target.time)]) + ",";
    if (multi) key += d.outcome_names()[static_cast<std::size_t>(w.target.outcome)] + ",";
    for (int i = 0; i < d.n_units(); ++i) {
      const Eigen::VectorXd col = w.unit_draws.col(i);
      units += key + d.unit_ids()[static_cast<std::size_t>(i)] + "," + num(col.mean()) + "," + num(quantile(col, 0.05)) +
               "," + num(quantile(col, 0.95)) + "\n";
    }
    for (int t = 0; t < d.n_times(); ++t) {
      const Eigen::VectorXd col = w.time_draws.col(t);
      times += key + std::to_string(d.time_ids()[static_cast<std::size_t>(t)]) + "," + num(col.mean()) + "," +
               num(quantile(col, 0.05)) + "," + num(quantile(col, 0.95)) + "\n";
    }
  }
  write_text((fs::path(r.dir) / "weights_units.csv").string(), units);
  write_text((fs::path(r.dir) / "weights_times.csv").string(), times);
  write_timings(r.dir, "weights", {{"weights", clock.lap()}});
  return kExitOk;
}

int cmd_scm(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const ModelConfig cfg = effective_config(o);
  const LoadedData in = load_data(o.data, cfg);
  const PanelDataset& d = in.data;
  const int outcome = parse_outcome(d, o.outcome);
  const SCMFit fit = fit_scm(d, outcome);
  fs::create_directories(o.out);
  std::string weights = "unit,weight\n";
  for (std::size_t k = 0; k < fit.donors.size(); ++k) {
    weights += d.unit_ids()[static_cast<std::size_t>(fit.donors[k])] + "," + full(fit.donor_weights(static_cast<Eigen::Index>(k))) + "\n";
  }
  write_text((fs::path(o.out) / "scm_weights.csv").string(), weights);
  // Observed values and gaps stop at T0; the report command fills in the post period.
  std::string gaps = "time,observed,synthetic,gap\n";
  for (int t = 0; t < d.n_times(); ++t) {
    double synthetic = fit.intercept;
    for (std::size_t k = 0; k < fit.donors.size(); ++k) {
      const int u = fit.donors[k];
      synthetic += fit.donor_weights(static_cast<Eigen::Index>(k)) *
                   (d.is_control_observed(u, t, outcome) ? d.to_rate(d.control_value(u, t, outcome), u, t)
                                                         : std::numeric_limits<double>::quiet_NaN());
    }
    double observed = std::numeric_limits<double>::quiet_NaN();
    if (t < d.t0() && d.present(d.treated_unit(), t, outcome)) {
      observed = d.to_rate(d.control_value(d.treated_unit(), t, outcome), d.treated_unit(), t);
    }
    gaps += std::to_string(d.time_ids()[static_cast<std::size_t>(t)]) + "," + num(observed) + "," + num(synthetic) + "," +
            num(observed - synthetic) + "\n";
  }
  write_text((fs::path(o.out) / "scm_gaps.csv").string(), gaps);
  ordered_json s = {{"outcome", d.outcome_names()[static_cast<std::size_t>(outcome)]},
                    {"intercept", fit.intercept},
                    {"pre_rmse", fit.pre_rmse},
                    {"objective", fit.objective},
                    {"duality_gap", fit.gap},
                    {"iterations", fit.iterations},
                    {"data_fingerprint", in.fingerprint}};
  write_text((fs::path(o.out) / "scm.json").string(), s.dump(2) + "\n");
  RunManifest m = new_manifest("scm", cfg, in);
  m.chains = m.warmup = m.iters = 0;
  write_text((fs::path(o.out) / "manifest.json").string(), manifest_to_json(m));
  std::cout << "scm: pre-period RMSE " << num(fit.pre_rmse) << "\n";
  return kExitOk;
}

std::pair<int, int> parse_ranks(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const int r = std::stoi(text);
      return {r, r};
    }
    return {std::stoi(text.substr(0, dots)), std::stoi(text.substr(dots + 2))};
  } catch (const std::exception&) {
    throw UsageError("--ranks expects A..B, got '" + text + "'");
  }
}

int cmd_ppc_ranks(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const auto [lo, hi] = parse_ranks(o.ranks);
  if (lo < 0 || hi < lo) throw UsageError("--ranks must satisfy 0 <= A <= B");
  const ModelConfig base = effective_config(o);
  const LoadedData in = load_data(o.data, base);
  fs::create_directories(o.out);
  std::string table = "rank,p_value,divergences,unreliable,max_rhat\n";
  ordered_json rows = ordered_json::array();
  bool flagged = false;
  RunManifest m = new_manifest("ppc_ranks", base, in);
  Stopwatch clock;
  ordered_json stages;
  for (int rank = lo; rank <= hi; ++rank) {
    ModelConfig cfg = base;
    cfg.rank = rank;
    const FitResult fit = fit_model(cfg, in.data, o.jobs);
    const PPCResult p = ppc_rmse(fit.draws, fit.spec, in.data, cfg.seed, o.jobs);
    const RefitSummary s = summarize_fit(fit.draws);
    flagged = flagged || s.unreliable;
    m.divergences += s.divergences;
    m.unreliable = m.unreliable || s.unreliable;
    table += std::to_string(rank) + "," + num(p.p_value) + "," + std::to_string(s.divergences) + "," +
             (s.unreliable ? "1" : "0") + "," + num(s.max_rhat) + "\n";
    ordered_json row = refit_json(s);
    row["rank"] = rank;
    row["p_value"] = p.p_value;
    rows.push_back(row);
    stages["rank_" + std::to_string(rank)] = clock.lap();
    std::cout << "rank " << rank << ": p = " << num(p.p_value) << "\n";
  }
  write_text((fs::path(o.out) / "ppc_ranks.csv").string(), table);
  write_text((fs::path(o.out) / "ppc_ranks.json").string(),
             ordered_json{{"statistic", "rmse"}, {"data_fingerprint", in.fingerprint}, {"ranks", rows}}.dump(2) + "\n");
  m.converged = !flagged;
  write_text((fs::path(o.out) / "manifest.json").string(), manifest_to_json(m));
  write_timings(o.out, "ppc_ranks", stages);
  return flagged ? kExitFlagged : kExitOk;
}

int cmd_ppc(const Options& o) {
  if (!o.ranks.empty()) return cmd_ppc_ranks(o);
  if (o.stat != "all" && o.stat != "rmse" && o.stat != "imbalance" && o.stat != "coverage") {
    throw UsageError("--stat must be rmse, imbalance, coverage or all");
  }
  Stopwatch clock;
  const Run r = open_run(o);
  const PanelDataset& d = r.data.data;
  const fs::path dir(r.dir);
  ordered_json summary;
  if (o.stat == "all" || o.stat == "rmse") {
    const PPCResult p = ppc_rmse(r.draws, r.spec, d, r.seed, o.jobs);
    std::string rows = "draw,observed,replicated\n";
    for (Eigen::Index k = 0; k < p.observed.size(); ++k) rows += std::to_string(k) + "," + full(p.observed(k)) + "," + full(p.replicated(k)) + "\n";
    write_text((dir / "ppc_rmse.csv").string(), rows);
    summary["rmse_p_value"] = p.p_value;
  }
  if (o.stat == "all" || o.stat == "imbalance") {
    const std::vector<ImbalanceYear> years = ppc_imbalance(r.draws, r.spec, d, r.seed, o.jobs);
    std::string rows = "time,outcome,posterior_mean,observed_gap,rep_mean,rep_lo50,rep_hi50,rep_lo95,rep_hi95,p_value\n";
    ordered_json ps = ordered_json::array();
    for (const auto& y : years) {
      const Eigen::VectorXd& rep = y.result.replicated;
      const Interval i50 = central_interval(rep, 0.5), i95 = central_interval(rep, 0.95);
      rows += std::to_string(y.time_id) + "," + d.outcome_names()[static_cast<std::size_t>(y.cell.outcome)] + "," +
              num(y.posterior_mean) + "," + num(y.result.observed(0)) + "," + num(rep.mean()) + "," + num(i50.lo) + "," +
              num(i50.hi) + "," + num(i95.lo) + "," + num(i95.hi) + "," + num(y.result.p_value) + "\n";
      ps.push_back({{"time", y.time_id}, {"p_value", y.result.p_value}});
    }
    write_text((dir / "ppc_imbalance.csv").string(), rows);
    summary["imbalance"] = ps;
  }
  if (o.stat == "all" || o.stat == "coverage") {
    const std::vector<double> levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
    const std::vector<double> cov = interval_coverage(r.draws, r.spec, d, levels, r.seed, o.jobs);
    std::string rows = "level,coverage\n";
    ordered_json cs = ordered_json::array();
    for (std::size_t k = 0; k < levels.size(); ++k) {
      rows += num(levels[k]) + "," + num(cov[k]) + "\n";
      cs.push_back({{"level", levels[k]}, {"coverage", cov[k]}});
    }
    write_text((dir / "ppc_coverage.csv").string(), rows);
    summary["coverage"] = cs;
  }
  const fs::path js = dir / "ppc.json";
  ordered_json merged = fs::exists(js) ? ordered_json::parse(read_text(js.string())) : ordered_json::object();
  for (auto& [k, v] : summary.items()) merged[k] = v;
  write_text(js.string(), merged.dump(2) + "\n");
  write_timings(r.dir, "ppc", {{"ppc", clock.lap()}});
  return kExitOk;
}

int cmd_placebo(const Options& o) {
  Stopwatch clock;
  const Run r = open_run(o);
  const PanelDataset& d = r.data.data;
  int placebo_t0 = d.t0() - (d.t0() + 1) / 2;
  if (o.placebo_start) {
    const auto& ids = d.time_ids();
    const auto it = std::find(ids.begin(), ids.end(), *o.placebo_start);
    if (it == ids.end()) throw UsageError("--placebo-start is not a time in the panel");
    placebo_t0 = static_cast<int>(it - ids.begin());
  }
  ModelConfig cfg = r.config;
  cfg.seed = r.seed;
  const PlaceboResult p = in_time_placebo(cfg, d, placebo_t0, o.jobs);
  const PanelDataset window = d.truncated(d.t0()).with_t0(placebo_t0);
  std::string band = kBandHeader;
  for (std::size_t k = 0; k < p.effect.periods.size(); ++k) {
    band += band_row(p.effect.time_ids[k], p.effect.observed_rate(static_cast<Eigen::Index>(k)),
                     p.effect.counterfactual.col(static_cast<Eigen::Index>(k)));
  }
  write_text((fs::path(r.dir) / "placebo_band.csv").string(), band);
  std::string effect = "time,mean,lo50,hi50,lo95,hi95,prob_negative\n";
  for (std::size_t k = 0; k < p.effect.per_period.size(); ++k) {
    const EffectSummary& s = p.effect.per_period[k];
    effect += std::to_string(p.effect.time_ids[k]) + "," + num(s.mean) + "," + num(s.lo50) + "," + num(s.hi50) + "," +
              num(s.lo95) + "," + num(s.hi95) + "," + num(s.prob_negative) + "\n";
  }
  write_text((fs::path(r.dir) / "placebo_effect.csv").string(), effect);
  ordered_json s = refit_json(p.fit);
  s["placebo_start"] = d.time_ids()[static_cast<std::size_t>(placebo_t0)];
  s["average"] = summary_json(p.effect.average);
  s["covers_zero_95"] = p.effect.average.lo95 <= 0.0 && 0.0 <= p.effect.average.hi95;
  write_text((fs::path(r.dir) / "placebo.json").string(), s.dump(2) + "\n");
  write_timings(r.dir, "placebo", {{"placebo", clock.lap()}});
  (void)window;
  return p.fit.unreliable ? kExitFlagged : kExitOk;
}

int cmd_loo(const Options& o) {
  Stopwatch clock;
  const Run r = open_run(o);
  ModelConfig cfg = r.config;
  cfg.seed = r.seed;
  const std::vector<LooRefit> refits = leave_one_out(cfg, r.data.data, std::max(1, o.jobs));
  std::string rows = "dropped_unit,iteration,time,outcome,value\n";
  ordered_json s = ordered_json::array();
  bool flagged = false;
  for (const auto& refit : refits) {
    rows += cf_rows(refit.counterfactual, r.data.data, refit.dropped_id + ",");
    ordered_json j = refit_json(refit.fit);
    j["dropped_unit"] = refit.dropped_id;
    s.push_back(j);
    flagged = flagged || refit.fit.unreliable;
  }
  write_text((fs::path(r.dir) / "loo_counterfactuals.csv").string(), rows);
  write_text((fs::path(r.dir) / "loo.json").string(), ordered_json{{"refits", s}}.dump(2) + "\n");
  write_timings(r.dir, "loo", {{"loo", clock.lap()}});
  return flagged ? kExitFlagged : kExitOk;
}

// Counterfactual draws per dropped unit, keyed on the treated cells of the full panel.
std::map<std::string, CounterfactualDraws> read_loo(const std::string& path, const PanelDataset& d, Likelihood lik) {
  std::map<std::string, std::map<int, std::map<std::size_t, double>>> raw;
  std::map<std::pair<long, std::string>, std::size_t> cell_of;
  const std::vector<Cell> cells = target_cells(d);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    cell_of[{d.time_ids()[static_cast<std::size_t>(cells[k].time)], d.outcome_names()[static_cast<std::size_t>(cells[k].outcome)]}] = k;
  }
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ArchiveError("malformed row in " + path);
    const auto it = cell_of.find({std::stol(f[2]), f[3]});
    if (it == cell_of.end()) throw ArchiveError("unknown cell in " + path + ": " + line);
    raw[f[0]][std::stoi(f[1])][it->second] = std::stod(f[4]);
  }
  std::map<std::string, CounterfactualDraws> out;
  for (const auto& [unit, by_draw] : raw) {
    CounterfactualDraws cf;
    cf.cells = cells;
    cf.likelihood = lik;
    cf.values.resize(static_cast<Eigen::Index>(by_draw.size()), static_cast<Eigen::Index>(cells.size()));
    Eigen::Index row = 0;
    for (const auto& [draw, vals] : by_draw) {
      if (vals.size() != cells.size()) throw ArchiveError("incomplete draw in " + path);
      for (const auto& [k, v] : vals) cf.values(row, static_cast<Eigen::Index>(k)) = v;
      cf.iteration.push_back(draw);
      cf.chain.push_back(0);
      ++row;
    }
    cf.latent_rate = cf.values;
    out.emplace(unit, std::move(cf));
  }
  return out;
}

int cmd_report(const Options& o) {
  Stopwatch clock;
  const Run r = open_run(o);
  const PanelDataset& d = r.data.data;
  const fs::path dir(r.dir);
  const CounterfactualDraws cf = impute_counterfactuals(r.draws, r.spec, d, r.seed, o.jobs);
  // Fitted values over the treated pre-period complete the band plot.
  std::vector<Cell> pre;
  for (int t = 0; t < d.t0(); ++t) {
    for (int l = 0; l < d.n_outcomes(); ++l) pre.push_back({d.treated_unit(), t, l});
  }
  const CounterfactualDraws fitted = predictive_draws(r.draws, r.spec, d, pre, r.seed, o.jobs);
  const Eigen::MatrixXd fitted_rates = fitted.rates(d);

  ordered_json report;
  report["manifest"] = {{"config_hash", r.manifest.config_hash},
                        {"data_fingerprint", r.manifest.data_fingerprint},
                        {"converged", r.manifest.converged}};
  ordered_json outcomes = ordered_json::array();
  const std::vector<EffectPosterior> effects =
      d.n_outcomes() > 1 ? multi_outcome_effects(cf, d) : std::vector<EffectPosterior>{effect_posterior(cf, d)};
  // With --reduction every effect summary is of -tau (events avoided per 100,000).
  const auto reported = [&](const EffectSummary& s, const Eigen::VectorXd& draws) {
    return o.reduction ? summarize(-draws) : s;
  };
  report["effect_sign"] = o.reduction ? "reduction" : "change";
  for (int l = 0; l < d.n_outcomes(); ++l) {
    const EffectPosterior& e = effects[static_cast<std::size_t>(l)];
    std::string band = kBandHeader;
    for (std::size_t k = 0; k < pre.size(); ++k) {
      const Cell& c = pre[k];
      if (c.outcome != l) continue;
      const double obs = d.present(c.unit, c.time, l) ? d.to_rate(d.control_value(c.unit, c.time, l), c.unit, c.time)
                                                      : std::numeric_limits<double>::quiet_NaN();
      band += band_row(d.time_ids()[static_cast<std::size_t>(c.time)], obs, fitted_rates.col(static_cast<Eigen::Index>(k)));
    }
    for (std::size_t k = 0; k < e.periods.size(); ++k) {
      band += band_row(e.time_ids[k], e.observed_rate(static_cast<Eigen::Index>(k)), e.counterfactual.col(static_cast<Eigen::Index>(k)));
    }
    const std::string suffix = outcome_suffix(d, l);
    write_text((dir / ("band" + suffix + ".csv")).string(), band);
    std::string effect = "time,mean,lo50,hi50,lo95,hi95,prob_negative\n";
    ordered_json per = ordered_json::array();
    for (std::size_t k = 0; k < e.per_period.size(); ++k) {
      const EffectSummary s = reported(e.per_period[k], e.tau.col(static_cast<Eigen::Index>(k)));
      effect += std::to_string(e.time_ids[k]) + "," + num(s.mean) + "," + num(s.lo50) + "," + num(s.hi50) + "," + num(s.lo95) +
                "," + num(s.hi95) + "," + num(s.prob_negative) + "\n";
      ordered_json pj = summary_json(s);
      pj["time"] = e.time_ids[k];
      per.push_back(pj);
    }
    write_text((dir / ("effect" + suffix + ".csv")).string(), effect);
    std::string avg = "draw,tau_avg\n";
    const double sign = o.reduction ? -1.0 : 1.0;
    for (Eigen::Index k = 0; k < e.tau_avg.size(); ++k) avg += std::to_string(k) + "," + full(sign * e.tau_avg(k)) + "\n";
    write_text((dir / ("effect_average_draws" + suffix + ".csv")).string(), avg);

    ordered_json oj;
    oj["outcome"] = d.outcome_names()[static_cast<std::size_t>(l)];
    oj["average"] = summary_json(reported(e.average, e.tau_avg));
    oj["per_period"] = per;
    if (o.budget) {
      double pop = 0.0;
      if (o.population) {
        pop = *o.population;
      } else {
        for (int t : e.periods) pop += d.population(d.treated_unit(), t);
        pop /= static_cast<double>(e.periods.size());
      }
      const CostPosterior c = cost_per_avoided(e, *o.budget, pop);
      oj["cost_per_avoided"] = {{"budget", *o.budget},           {"population", pop},
                                {"median", json_number(c.median)}, {"lo50", json_number(c.lo50)},
                                {"hi50", json_number(c.hi50)},     {"lo95", json_number(c.lo95)},
                                {"hi95", json_number(c.hi95)},     {"infinite_mass", c.infinite_mass}};
      std::string cost = "draw,cost\n";
      for (Eigen::Index k = 0; k < c.cost.size(); ++k) cost += std::to_string(k) + "," + (std::isinf(c.cost(k)) ? "inf" : full(c.cost(k))) + "\n";
      write_text((dir / ("cost_draws" + suffix + ".csv")).string(), cost);
    }
    outcomes.push_back(oj);
  }
  report["outcomes"] = outcomes;

  // Synthetic control gaps over the whole panel, when the donor pool allows a fit.
  try {
    const SCMFit fit = fit_scm(d, 0);
    const Eigen::VectorXd gaps = scm_gaps(fit, d);
    std::string rows = "time,gap\n";
    for (int t = 0; t < d.n_times(); ++t) rows += std::to_string(d.time_ids()[static_cast<std::size_t>(t)]) + "," + num(gaps(t)) + "\n";
    write_text((dir / "scm_gaps_full.csv").string(), rows);
    ordered_json w = ordered_json::object();
    for (std::size_t k = 0; k < fit.donors.size(); ++k) {
      if (fit.donor_weights(static_cast<Eigen::Index>(k)) >= 1e-6) {
        w[d.unit_ids()[static_cast<std::size_t>(fit.donors[k])]] = fit.donor_weights(static_cast<Eigen::Index>(k));
      }
    }
    double post = 0.0;
    int n = 0;
    for (int t = d.t0(); t < d.n_times(); ++t) {
      if (!std::isnan(gaps(t))) {
        post += gaps(t);
        ++n;
      }
    }
    report["scm"] = {{"weights", w}, {"pre_rmse", fit.pre_rmse}, {"mean_post_gap", n ? json_number(post / n) : nullptr}};
  } catch (const DataError& e) {
    report["scm"] = {{"unavailable", e.what()}};
  }

  const fs::path loo_path = dir / "loo_counterfactuals.csv";
  if (fs::exists(loo_path)) {
    ordered_json loo = ordered_json::object();
    std::string rows = "dropped_unit,time,mean,lo50,hi50,lo95,hi95\n";
    for (const auto& [unit, lcf] : read_loo(loo_path.string(), d, r.spec.config.likelihood)) {
      const EffectPosterior e = effect_posterior(lcf, d);
      loo[unit] = summary_json(e.average);
      for (std::size_t k = 0; k < e.per_period.size(); ++k) {
        const EffectSummary& s = e.per_period[k];
        rows += unit + "," + std::to_string(e.time_ids[k]) + "," + num(s.mean) + "," + num(s.lo50) + "," + num(s.hi50) + "," +
                num(s.lo95) + "," + num(s.hi95) + "\n";
      }
    }
    write_text((dir / "loo_effects.csv").string(), rows);
    report["loo_average_effects"] = loo;
  }
  write_text((dir / "report.json").string(), report.dump(2) + "\n");
  write_timings(r.dir, "report", {{"report", clock.lap()}});
  const EffectSummary a = reported(effects.front().average, effects.front().tau_avg);
  std::cout << (o.reduction ? "average reduction " : "average effect ") << num(a.mean) << " per 100,000 (95% " << num(a.lo95) << " to " << num(a.hi95)
            << "), P(< 0) = " << num(a.prob_negative) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multitask Gaussian process panel estimator"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub, bool fit_like) {
    sub->add_option("--out", o.out, "Run directory")->envname("MTGP_OUT");
    sub->add_option("--data", o.data, "Panel CSV (long format)")->envname("MTGP_DATA");
    sub->add_option("--config", o.config, "Model configuration JSON")->envname("MTGP_CONFIG");
    sub->add_option("--seed", o.seed, "Random seed")->envname("MTGP_SEED");
    sub->add_option("--jobs", o.jobs, "Worker threads (0 = one per chain)")->envname("MTGP_JOBS")->check(CLI::NonNegativeNumber);
    if (fit_like) {
      sub->add_option("--chains", o.chains, "Number of chains")->envname("MTGP_CHAINS");
      sub->add_option("--iters", o.iters, "Post-warmup draws per chain")->envname("MTGP_ITERS");
      sub->add_option("--warmup", o.warmup, "Warmup iterations per chain")->envname("MTGP_WARMUP");
      sub->add_option("--treated", o.treated, "Treated unit id (overrides the config)");
      sub->add_option("--last-pre-time", o.last_pre_time, "Last pre-treatment time id (overrides the config)");
    }
  };

  CLI::App* fit = app.add_subcommand("fit", "Sample the posterior and write a run directory");
  common(fit, true);
  fit->add_option("--rhat-threshold", o.rhat_threshold, "Flag the fit when max R-hat exceeds this");
  CLI::App* predict = app.add_subcommand("predict", "Counterfactual draws for the treated post-period");
  common(predict, false);
  CLI::App* weights = app.add_subcommand("weights", "Implied unit and time weights (Gaussian fits)");
  common(weights, false);
  CLI::App* scm = app.add_subcommand("scm", "Synthetic control baseline");
  common(scm, true);
  scm->add_option("--outcome", o.outcome, "Outcome name (default: first)");
  CLI::App* ppc = app.add_subcommand("ppc", "Posterior predictive checks");
  common(ppc, true);
  ppc->add_option("--stat", o.stat, "rmse, imbalance, coverage or all");
  ppc->add_option("--ranks", o.ranks, "Refit over ranks A..B and tabulate the RMSE p-value");
  CLI::App* placebo = app.add_subcommand("placebo", "In-time placebo refit");
  common(placebo, false);
  placebo->add_option("--placebo-start", o.placebo_start, "First placebo-treated time id");
  CLI::App* loo = app.add_subcommand("loo", "Leave-one-control-out refits");
  common(loo, false);
  CLI::App* report = app.add_subcommand("report", "Effect summaries and plot-ready CSVs");
  common(report, false);
  report->add_option("--budget", o.budget, "Annual programme cost for the cost-per-event summary");
  report->add_option("--population", o.population, "Population for the cost summary (default: treated unit)");
  report->add_flag("--reduction", o.reduction, "Report -tau, the number of events avoided per 100,000");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit) return cmd_fit(o);
    if (*predict) return cmd_predict(o);
    if (*weights) return cmd_weights(o);
    if (*scm) return cmd_scm(o);
    if (*ppc) return cmd_ppc(o);
    if (*placebo) return cmd_placebo(o);
    if (*loo) return cmd_loo(o);
    if (*report) return cmd_report(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
