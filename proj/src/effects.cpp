#include "mtgp/effects.hpp"

#include "mtgp/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtgp {

EffectSummary summarize(const Eigen::VectorXd& draws) {
  if (draws.size() == 0) throw std::invalid_argument("summarize: no draws");
  EffectSummary s;
  s.mean = draws.mean();
  s.median = quantile(draws, 0.5);
  const Interval i50 = central_interval(draws, 0.5);
  const Interval i95 = central_interval(draws, 0.95);
  s.lo50 = i50.lo;
  s.hi50 = i50.hi;
  s.lo95 = i95.lo;
  s.hi95 = i95.hi;
  double neg = 0.0;
  for (Eigen::Index k = 0; k < draws.size(); ++k) {
    if (draws(k) < 0.0) neg += 1.0;
    else if (draws(k) == 0.0) neg += 0.5;
  }
  s.prob_negative = neg / static_cast<double>(draws.size());
  return s;
}

namespace {

std::vector<Eigen::Index> columns_for(const CounterfactualDraws& cf, int outcome) {
  std::vector<Eigen::Index> cols;
  for (std::size_t k = 0; k < cf.cells.size(); ++k) {
    if (cf.cells[k].outcome == outcome) cols.push_back(static_cast<Eigen::Index>(k));
  }
  if (cols.empty()) throw std::invalid_argument("effect_posterior: no counterfactual cells for outcome");
  return cols;
}

}  // namespace

EffectPosterior effect_posterior(const CounterfactualDraws& cf, const PanelDataset& data,
                                 int outcome, const Eigen::VectorXd& observed_rate) {
  const std::vector<Eigen::Index> cols = columns_for(cf, outcome);
  if (observed_rate.size() != static_cast<Eigen::Index>(cols.size())) {
    throw std::invalid_argument("effect_posterior: observed values do not match the cells");
  }
  const Eigen::MatrixXd rates = cf.rates(data);
  EffectPosterior e;
  e.outcome = outcome;
  e.observed_rate = observed_rate;
  const Eigen::Index draws = rates.rows();
  const auto periods = static_cast<Eigen::Index>(cols.size());
  e.counterfactual.resize(draws, periods);
  e.tau.resize(draws, periods);
  for (Eigen::Index p = 0; p < periods; ++p) {
    const Cell& c = cf.cells[static_cast<std::size_t>(cols[static_cast<std::size_t>(p)])];
    e.periods.push_back(c.time);
    e.time_ids.push_back(data.time_ids()[static_cast<std::size_t>(c.time)]);
    e.counterfactual.col(p) = rates.col(cols[static_cast<std::size_t>(p)]);
    e.tau.col(p) = (observed_rate(p) - e.counterfactual.col(p).array()).matrix();
  }
  e.tau_avg = e.tau.rowwise().mean();
  for (Eigen::Index p = 0; p < periods; ++p) e.per_period.push_back(summarize(e.tau.col(p)));
  e.average = summarize(e.tau_avg);
  return e;
}

EffectPosterior effect_posterior(const CounterfactualDraws& cf, const PanelDataset& data, int outcome) {
  const std::vector<Eigen::Index> cols = columns_for(cf, outcome);
  const TreatedOutcomeReader reader(data);
  Eigen::VectorXd observed(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t p = 0; p < cols.size(); ++p) {
    const Cell& c = cf.cells[static_cast<std::size_t>(cols[p])];
    if (c.unit != data.treated_unit()) throw std::invalid_argument("effect_posterior: cell not on the treated unit");
    double y = 0.0;
    if (c.time >= data.t0()) {
      if (!reader.present(c.time, c.outcome)) {
        throw DataError("effect_posterior: treated outcome missing at time " +
                        std::to_string(data.time_ids()[static_cast<std::size_t>(c.time)]));
      }
      y = reader.value(c.time, c.outcome);
    } else {
      y = data.control_value(c.unit, c.time, c.outcome);
    }
    observed(static_cast<Eigen::Index>(p)) = data.to_rate(y, c.unit, c.time);
  }
  return effect_posterior(cf, data, outcome, observed);
}

std::vector<EffectPosterior> multi_outcome_effects(const CounterfactualDraws& cf, const PanelDataset& data) {
  if (data.n_outcomes() < 2) throw std::invalid_argument("multi_outcome_effects: needs L >= 2 outcomes");
  std::vector<EffectPosterior> out;
  for (int o = 0; o < data.n_outcomes(); ++o) out.push_back(effect_posterior(cf, data, o));
  return out;
}

double cost_per_avoided(double tau, double budget, double population) {
  if (!(budget > 0.0) || !(population > 0.0)) {
    throw std::invalid_argument("cost_per_avoided: budget and population must be positive");
  }
  if (!(tau < 0.0)) return std::numeric_limits<double>::infinity();
  const double avoided = -tau * population / kRatePer;
  return budget / avoided;
}

CostPosterior cost_per_avoided(const Eigen::VectorXd& tau_draws, double budget, double population) {
  if (tau_draws.size() == 0) throw std::invalid_argument("cost_per_avoided: no draws");
  CostPosterior c;
  c.cost.resize(tau_draws.size());
  double inf = 0.0;
  for (Eigen::Index k = 0; k < tau_draws.size(); ++k) {
    c.cost(k) = cost_per_avoided(tau_draws(k), budget, population);
    if (std::isinf(c.cost(k))) inf += 1.0;
  }
  c.infinite_mass = inf / static_cast<double>(tau_draws.size());
  c.median = quantile(c.cost, 0.5);
  const Interval i50 = central_interval(c.cost, 0.5);
  const Interval i95 = central_interval(c.cost, 0.95);
  c.lo50 = i50.lo;
  c.hi50 = i50.hi;
  c.lo95 = i95.lo;
  c.hi95 = i95.hi;
  return c;
}

CostPosterior cost_per_avoided(const EffectPosterior& effect, double budget, double population) {
  return cost_per_avoided(effect.tau_avg, budget, population);
}

}  // namespace mtgp
