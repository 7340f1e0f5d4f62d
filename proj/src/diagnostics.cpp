#include "mtgp/diagnostics.hpp"

#include "mtgp/parallel.hpp"
#include "mtgp/pipeline.hpp"
#include "mtgp/rng.hpp"
#include "mtgp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtgp {

namespace {

constexpr std::uint64_t kReplicateStream = 0x5245504c49434154ULL;

std::vector<Cell> treated_pre_cells(const PanelDataset& data) {
  std::vector<Cell> cells;
  for (int t = 0; t < data.t0(); ++t) {
    for (int o = 0; o < data.n_outcomes(); ++o) {
      if (data.present(data.treated_unit(), t, o)) cells.push_back({data.treated_unit(), t, o});
    }
  }
  return cells;
}

}  // namespace

double ppc_p_value(const Eigen::VectorXd& observed, const Eigen::VectorXd& replicated) {
  if (observed.size() != replicated.size() || observed.size() == 0) {
    throw std::invalid_argument("ppc_p_value: need matching, non-empty statistic vectors");
  }
  double above = 0.0;
  for (Eigen::Index k = 0; k < observed.size(); ++k) {
    if (replicated(k) > observed(k)) above += 1.0;
    else if (replicated(k) == observed(k)) above += 0.5;
  }
  return above / static_cast<double>(observed.size());
}

CounterfactualDraws replicate_cells(const PosteriorDraws& draws, const ModelSpec& spec,
                                    const PanelDataset& data, const std::vector<Cell>& cells,
                                    std::uint64_t seed, int jobs) {
  const ModelEvaluator ev(spec, data);
  const int total = draws.n_draws();
  const auto nc = static_cast<Eigen::Index>(cells.size());
  const bool gaussian = spec.config.likelihood == Likelihood::gaussian;
  CounterfactualDraws out;
  out.cells = cells;
  out.likelihood = spec.config.likelihood;
  out.values.resize(total, nc);
  out.latent_rate.resize(total, nc);
  out.chain.resize(static_cast<std::size_t>(total));
  out.iteration.resize(static_cast<std::size_t>(total));
  parallel_for(static_cast<std::size_t>(total), jobs, [&](std::size_t d) {
    const auto row = static_cast<Eigen::Index>(d);
    out.chain[d] = static_cast<int>(d) / draws.n_iters();
    out.iteration[d] = static_cast<int>(d) % draws.n_iters();
    CounterRng rng(mix_seed(seed, kReplicateStream), d);
    const ModelState s = unpack(spec, draws.draw(static_cast<int>(d)));
    const LatentField field = compute_latent_field(spec, s, ev.times(), ev.covariates());
    for (Eigen::Index k = 0; k < nc; ++k) {
      const Cell& c = cells[static_cast<std::size_t>(k)];
      const double lin = field.linear_predictor(
          (static_cast<Eigen::Index>(c.time) * spec.n_units + c.unit) * spec.n_outcomes + c.outcome);
      if (gaussian) {
        out.latent_rate(row, k) = lin;
        out.values(row, k) = lin + std::sqrt(ev.noise_variance(s.sigma(c.outcome), c.unit, c.time)) * rng.normal();
      } else {
        const double rate = std::exp(lin);
        out.latent_rate(row, k) = rate;
        out.values(row, k) = static_cast<double>(rng.poisson(ev.population(c.unit, c.time) * rate / kRatePer));
      }
    }
  });
  return out;
}

PPCResult ppc_rmse(const PosteriorDraws& draws, const ModelSpec& spec, const PanelDataset& data,
                   std::uint64_t seed, int jobs) {
  const std::vector<Cell> cells = treated_pre_cells(data);
  if (cells.empty()) throw DataError("ppc_rmse: treated unit has no observed pre-treatment cells");
  const CounterfactualDraws rep = replicate_cells(draws, spec, data, cells, seed, jobs);
  const Eigen::MatrixXd rep_rate = rep.rates(data);
  Eigen::VectorXd y(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Cell& c = cells[k];
    y(static_cast<Eigen::Index>(k)) = data.to_rate(data.control_value(c.unit, c.time, c.outcome), c.unit, c.time);
  }
  const double inv_t0 = 1.0 / static_cast<double>(data.t0());
  PPCResult r;
  r.observed.resize(rep.n_draws());
  r.replicated.resize(rep.n_draws());
  for (Eigen::Index d = 0; d < rep.n_draws(); ++d) {
    const Eigen::RowVectorXd f = rep.latent_rate.row(d);
    r.observed(d) = inv_t0 * std::sqrt((y.transpose() - f).squaredNorm());
    r.replicated(d) = inv_t0 * std::sqrt((rep_rate.row(d) - f).squaredNorm());
  }
  r.p_value = ppc_p_value(r.observed, r.replicated);
  return r;
}

std::vector<ImbalanceYear> ppc_imbalance(const PosteriorDraws& draws, const ModelSpec& spec,
                                         const PanelDataset& data, std::uint64_t seed, int jobs) {
  const std::vector<Cell> cells = treated_pre_cells(data);
  const CounterfactualDraws rep = replicate_cells(draws, spec, data, cells, seed, jobs);
  const Eigen::MatrixXd rep_rate = rep.rates(data);
  std::vector<ImbalanceYear> out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Cell& c = cells[k];
    const auto col = static_cast<Eigen::Index>(k);
    ImbalanceYear year;
    year.cell = c;
    year.time_id = data.time_ids()[static_cast<std::size_t>(c.time)];
    year.posterior_mean = rep.latent_rate.col(col).mean();
    const double y = data.to_rate(data.control_value(c.unit, c.time, c.outcome), c.unit, c.time);
    year.result.observed = Eigen::VectorXd::Constant(rep.n_draws(), y - year.posterior_mean);
    year.result.replicated = (rep_rate.col(col).array() - year.posterior_mean).matrix();
    year.result.p_value = ppc_p_value(year.result.observed, year.result.replicated);
    out.push_back(std::move(year));
  }
  return out;
}

std::vector<double> interval_coverage(const PosteriorDraws& draws, const ModelSpec& spec,
                                      const PanelDataset& data, const std::vector<double>& levels,
                                      std::uint64_t seed, int jobs) {
  std::vector<Cell> cells;
  std::vector<double> truth;
  for (int t = 0; t < data.t0(); ++t) {
    for (int i = 0; i < data.n_units(); ++i) {
      for (int o = 0; o < data.n_outcomes(); ++o) {
        if (!data.is_control_observed(i, t, o)) continue;
        cells.push_back({i, t, o});
        truth.push_back(data.control_value(i, t, o));
      }
    }
  }
  if (cells.empty()) throw DataError("interval_coverage: no observed pre-treatment cells");
  const CounterfactualDraws rep = replicate_cells(draws, spec, data, cells, seed, jobs);
  std::vector<double> out;
  for (double level : levels) {
    std::size_t inside = 0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (central_interval(rep.values.col(static_cast<Eigen::Index>(k)), level).contains(truth[k])) ++inside;
    }
    out.push_back(static_cast<double>(inside) / static_cast<double>(cells.size()));
  }
  return out;
}

HeldoutCoverage heldout_coverage(const PosteriorDraws& draws, const ModelSpec& spec,
                                 const PanelDataset& data, const std::vector<Cell>& cells,
                                 const Eigen::VectorXd& truth, double level, std::uint64_t seed,
                                 int jobs) {
  if (truth.size() != static_cast<Eigen::Index>(cells.size()) || cells.empty()) {
    throw std::invalid_argument("heldout_coverage: truth must align with a non-empty cell list");
  }
  const CounterfactualDraws pred = predictive_draws(draws, spec, data, cells, seed, jobs);
  HeldoutCoverage out;
  std::size_t inside = 0;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    const bool ok = central_interval(pred.values.col(col), level).contains(truth(col));
    out.covered.push_back(ok ? 1 : 0);
    if (ok) ++inside;
  }
  out.coverage = static_cast<double>(inside) / static_cast<double>(cells.size());
  return out;
}

RefitSummary summarize_fit(const PosteriorDraws& draws) {
  RefitSummary s;
  s.divergences = draws.n_divergent();
  s.unreliable = draws.unreliable;
  if (draws.n_chains() < 2 || draws.n_iters() < 4) {
    s.max_rhat = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  for (Eigen::Index k = 0; k < draws.dim(); ++k) {
    const ConvergenceStat r = rhat(draws.column(k));
    if (!r.degenerate) s.max_rhat = std::max(s.max_rhat, r.value);
  }
  return s;
}

PlaceboResult in_time_placebo(const ModelConfig& config, const PanelDataset& data, int placebo_t0,
                              int jobs) {
  if (placebo_t0 >= data.t0()) {
    throw std::invalid_argument("in_time_placebo: placebo T0 must precede the true T0");
  }
  if (placebo_t0 < 2) throw std::invalid_argument("in_time_placebo: need at least two pre-placebo periods");
  const PanelDataset placebo = data.truncated(data.t0()).with_t0(placebo_t0);
  const FitResult fit = fit_model(config, placebo, jobs);
  const CounterfactualDraws cf = impute_counterfactuals(fit.draws, fit.spec, placebo, config.seed, 1);
  PlaceboResult out;
  out.placebo_t0 = placebo_t0;
  out.effect = effect_posterior(cf, placebo);
  out.fit = summarize_fit(fit.draws);
  return out;
}

std::vector<LooRefit> leave_one_out(const ModelConfig& config, const PanelDataset& data, int jobs) {
  if (data.n_units() < 3) throw std::invalid_argument("leave_one_out: needs N >= 3");
  std::vector<int> dropped;
  for (int i = 0; i < data.n_units(); ++i) {
    if (i != data.treated_unit()) dropped.push_back(i);
  }
  std::vector<LooRefit> out(dropped.size());
  const int chain_jobs = jobs > 1 ? 1 : 0;
  parallel_for(dropped.size(), jobs, [&](std::size_t k) {
    const PanelDataset reduced = data.without_unit(dropped[k]);
    ModelConfig cfg = config;
    cfg.rank = std::min(cfg.rank, reduced.n_units());
    const FitResult fit = fit_model(cfg, reduced, chain_jobs);
    out[k].dropped_unit = dropped[k];
    out[k].dropped_id = data.unit_ids()[static_cast<std::size_t>(dropped[k])];
    out[k].counterfactual = impute_counterfactuals(fit.draws, fit.spec, reduced, config.seed, 1);
    out[k].fit = summarize_fit(fit.draws);
  });
  return out;
}

std::vector<LooEffect> loo_effects(const std::vector<LooRefit>& refits, const PanelDataset& data) {
  std::vector<LooEffect> out;
  for (const auto& r : refits) {
    CounterfactualDraws cf = r.counterfactual;
    for (auto& c : cf.cells) c.unit = data.treated_unit();
    out.push_back({r.dropped_id, effect_posterior(cf, data)});
  }
  return out;
}

}  // namespace mtgp
