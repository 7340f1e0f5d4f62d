#ifndef MTGP_EFFECTS_HPP
#define MTGP_EFFECTS_HPP

#include "mtgp/panel.hpp"
#include "mtgp/predict.hpp"

#include <Eigen/Dense>

#include <vector>

namespace mtgp {

struct EffectSummary {
  double mean = 0.0;
  double median = 0.0;
  double lo50 = 0.0, hi50 = 0.0;
  double lo95 = 0.0, hi95 = 0.0;
  /// Fraction of draws below zero, draws exactly at zero counting one half.
  double prob_negative = 0.0;
};

EffectSummary summarize(const Eigen::VectorXd& draws);

/// tau_t = Y_1t - Y*_1t(0) on the rate-per-100,000 scale, for one outcome.
struct EffectPosterior {
  int outcome = 0;
  std::vector<int> periods;        // panel time indices
  std::vector<long> time_ids;
  Eigen::VectorXd observed_rate;   // Y_1t(1) per period
  Eigen::MatrixXd counterfactual;  // draws x periods, Y*_1t(0) rates
  Eigen::MatrixXd tau;             // draws x periods
  Eigen::VectorXd tau_avg;         // row means of tau
  std::vector<EffectSummary> per_period;
  EffectSummary average;
};

/// Reads Y_1t(1) through TreatedOutcomeReader; every counterfactual cell must be observed.
EffectPosterior effect_posterior(const CounterfactualDraws& cf, const PanelDataset& data,
                                 int outcome = 0);

/// Same with observed values supplied by the caller (e.g. the true pre-period values of a
/// placebo window). observed_rate is aligned with the cf cells of `outcome`.
EffectPosterior effect_posterior(const CounterfactualDraws& cf, const PanelDataset& data,
                                 int outcome, const Eigen::VectorXd& observed_rate);

/// One effect posterior per outcome from a joint fit; draw rows stay aligned across
/// outcomes so cross-outcome correlation is preserved. Needs L >= 2.
std::vector<EffectPosterior> multi_outcome_effects(const CounterfactualDraws& cf,
                                                   const PanelDataset& data);

/// budget / (|tau| population / 1e5) for tau < 0; +inf otherwise.
double cost_per_avoided(double tau, double budget, double population);

struct CostPosterior {
  Eigen::VectorXd cost;        // per draw, +inf where tau >= 0
  double infinite_mass = 0.0;  // fraction of draws with tau >= 0
  double median = 0.0;
  double lo50 = 0.0, hi50 = 0.0;
  double lo95 = 0.0, hi95 = 0.0;
};

/// Uses the average-effect draws of `effect`.
CostPosterior cost_per_avoided(const EffectPosterior& effect, double budget, double population);
CostPosterior cost_per_avoided(const Eigen::VectorXd& tau_draws, double budget, double population);

}  // namespace mtgp

#endif  // MTGP_EFFECTS_HPP
