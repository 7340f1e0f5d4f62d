#ifndef MTGP_DIAGNOSTICS_HPP
#define MTGP_DIAGNOSTICS_HPP

#include "mtgp/effects.hpp"
#include "mtgp/model.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/predict.hpp"
#include "mtgp/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace mtgp {

struct PPCResult {
  Eigen::VectorXd observed;    // T(data_obs, theta_d) per draw
  Eigen::VectorXd replicated;  // T(data_rep_d, theta_d) per draw
  /// Fraction of draws with replicated > observed; ties count one half.
  double p_value = 0.0;
};

double ppc_p_value(const Eigen::VectorXd& observed, const Eigen::VectorXd& replicated);

/// Replicated observations at `cells` drawn from the likelihood given each draw's sampled
/// state (joint (data_rep, theta) draws). values: native scale; latent_rate: rate per 100k.
CounterfactualDraws replicate_cells(const PosteriorDraws& draws, const ModelSpec& spec,
                                    const PanelDataset& data, const std::vector<Cell>& cells,
                                    std::uint64_t seed, int jobs = 1);

/// T = (1/T0) sqrt(sum_{t<T0} (Y_1t - f_1t)^2) on the rate scale over the treated unit's
/// observed pre-treatment cells, with the 1/T0 outside the root.
PPCResult ppc_rmse(const PosteriorDraws& draws, const ModelSpec& spec, const PanelDataset& data,
                   std::uint64_t seed, int jobs = 1);

/// Per pre-treatment period (and outcome): Y_1t - mu_1t against Y*_1t - mu_1t, mu_1t the
/// posterior mean of the expected rate.
struct ImbalanceYear {
  Cell cell;
  long time_id = 0;
  double posterior_mean = 0.0;
  PPCResult result;
};
std::vector<ImbalanceYear> ppc_imbalance(const PosteriorDraws& draws, const ModelSpec& spec,
                                         const PanelDataset& data, std::uint64_t seed, int jobs = 1);

/// Fraction of observed pre-treatment cells (all units) inside the central posterior
/// predictive interval, bounds inclusive; one entry per level.
std::vector<double> interval_coverage(const PosteriorDraws& draws, const ModelSpec& spec,
                                      const PanelDataset& data, const std::vector<double>& levels,
                                      std::uint64_t seed, int jobs = 1);

struct HeldoutCoverage {
  double coverage = 0.0;
  std::vector<char> covered;
};

/// Coverage of held-out cells (masked in `data`) by central predictive intervals.
/// truth holds the held-out values on the native scale, aligned with cells.
HeldoutCoverage heldout_coverage(const PosteriorDraws& draws, const ModelSpec& spec,
                                 const PanelDataset& data, const std::vector<Cell>& cells,
                                 const Eigen::VectorXd& truth, double level, std::uint64_t seed,
                                 int jobs = 1);

struct RefitSummary {
  int divergences = 0;
  bool unreliable = false;
  double max_rhat = 1.0;
};

struct PlaceboResult {
  int placebo_t0 = 0;
  EffectPosterior effect;
  RefitSummary fit;
};

/// Refit with treatment moved to placebo_t0 on the panel truncated at the true T0, so no
/// treated post-treatment value is read. Requires placebo_t0 < T0.
PlaceboResult in_time_placebo(const ModelConfig& config, const PanelDataset& data, int placebo_t0,
                              int jobs = 0);

struct LooRefit {
  int dropped_unit = 0;          // index in the full panel
  std::string dropped_id;
  CounterfactualDraws counterfactual;
  RefitSummary fit;
};

/// N-1 refits, each without one control unit. Only counterfactual draws are produced;
/// converting them to effects (which reads Y_1t(1)) is loo_effects. Refits run on a pool
/// of `jobs` workers.
std::vector<LooRefit> leave_one_out(const ModelConfig& config, const PanelDataset& data, int jobs = 1);

struct LooEffect {
  std::string dropped_id;
  EffectPosterior effect;
};
std::vector<LooEffect> loo_effects(const std::vector<LooRefit>& refits, const PanelDataset& data);

RefitSummary summarize_fit(const PosteriorDraws& draws);

}  // namespace mtgp

#endif  // MTGP_DIAGNOSTICS_HPP
