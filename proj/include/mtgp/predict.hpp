#ifndef MTGP_PREDICT_HPP
#define MTGP_PREDICT_HPP

#include "mtgp/model.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace mtgp {

struct ConditionalGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Conditions a zero-mean Gaussian on noisy observations y (already centered):
///   mean = K_mo (K_obs + diag(noise_obs))^-1 y
///   cov  = K_mis + diag(noise_mis) - K_mo (K_obs + diag(noise_obs))^-1 K_om
/// k_obs_mis is obs x mis. Throws LinalgError when cov is not PSD after jitter.
ConditionalGaussian gaussian_conditional(const Eigen::MatrixXd& k_obs, const Eigen::MatrixXd& k_mis,
                                         const Eigen::MatrixXd& k_obs_mis,
                                         const Eigen::VectorXd& noise_obs,
                                         const Eigen::VectorXd& noise_mis,
                                         const Eigen::VectorXd& y);

/// Draws of Y(0) at a list of cells, one row per posterior draw.
struct CounterfactualDraws {
  std::vector<Cell> cells;
  /// Native modelled scale: counts for Poisson, rates per 100,000 for Gaussian.
  Eigen::MatrixXd values;
  /// Expected value of the observation given the draw, as a rate per 100,000.
  Eigen::MatrixXd latent_rate;
  std::vector<int> chain;
  std::vector<int> iteration;
  Likelihood likelihood = Likelihood::poisson;

  Eigen::Index n_draws() const { return values.rows(); }
  /// values converted to rates per 100,000 using the panel populations.
  Eigen::MatrixXd rates(const PanelDataset& data) const;
};

/// Gaussian family, one parameter draw: the latent field at `cells` conditioned on the
/// observed residuals with the draw's hyperparameters. Returns the mean of m + f and the
/// covariance of f (observation noise excluded).
ConditionalGaussian latent_conditional(const ModelEvaluator& evaluator, const Eigen::VectorXd& params,
                                       const std::vector<Cell>& cells);

/// Posterior predictive draws at arbitrary cells.
///
/// Gaussian: the latent is drawn from its exact conditional given the observed residuals,
/// then observation noise sigma^2/h(N) is added. Poisson: the latent is read off the
/// sampled whitened state, then Y ~ Poisson(N exp(eta) / 1e5).
/// Draw d uses RNG substream (seed, d), so results do not depend on `jobs`.
CounterfactualDraws predictive_draws(const PosteriorDraws& draws, const ModelSpec& spec,
                                     const PanelDataset& data, const std::vector<Cell>& cells,
                                     std::uint64_t seed, int jobs = 1);

/// Y*_1t(0) for every treated post-treatment cell (time-major, then outcome).
CounterfactualDraws impute_counterfactuals(const PosteriorDraws& draws, const ModelSpec& spec,
                                           const PanelDataset& data, std::uint64_t seed,
                                           int jobs = 1);

/// Cells of the treated unit from t0 on, all outcomes.
std::vector<Cell> target_cells(const PanelDataset& data);

}  // namespace mtgp

#endif  // MTGP_PREDICT_HPP
