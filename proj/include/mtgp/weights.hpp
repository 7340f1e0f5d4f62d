#ifndef MTGP_WEIGHTS_HPP
#define MTGP_WEIGHTS_HPP

#include "mtgp/kernels.hpp"
#include "mtgp/model.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/sampler.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace mtgp {

/// Weights w with posterior mean at `target` = sum_k w_k y_k over `control`.
struct WeightDecomposition {
  Cell target;
  std::vector<Cell> control;
  Eigen::VectorXd combined;
  /// True when the control cells form a full units x times grid for one outcome.
  bool full_grid = false;
  /// Second / first singular value of the reshaped grid weights (full grid only).
  double singular_ratio = 0.0;
  /// Full grid and singular_ratio <= separability_tolerance: gamma (x) lambda reproduces w.
  bool separable = false;
  /// Rank-1 factors, indexed by panel unit / panel time (zero off the grid). Empty unless separable.
  Eigen::VectorXd gamma;
  Eigen::VectorXd lambda;
  /// Marginal sums of w over time (per unit) and over units (per time); always available.
  Eigen::VectorXd unit_marginal;
  Eigen::VectorXd time_marginal;

  /// Reshaped units x times matrix of w (zeros off the control set).
  Eigen::MatrixXd as_matrix() const;
  double apply(const Eigen::VectorXd& y) const { return combined.dot(y); }
};

inline constexpr double kSeparabilityTolerance = 1e-8;

/// Dense closed form w = (K_obs + diag(noise))^-1 k_x from explicit kernel values.
/// n_units / n_times size the marginal vectors.
WeightDecomposition compute_weights(const Eigen::MatrixXd& k_obs, const Eigen::VectorXd& k_x,
                                    const Eigen::VectorXd& noise, std::vector<Cell> control,
                                    const Cell& target, int n_units, int n_times);

/// Same from a separable kernel with homoskedastic noise variance.
WeightDecomposition compute_weights(const SeparableKernel& kernel, std::span<const double> times,
                                    double noise_variance, const std::vector<Cell>& control,
                                    const Cell& target, int n_units);

/// Heteroskedastic noise, one variance per control cell.
WeightDecomposition compute_weights(const SeparableKernel& kernel, std::span<const double> times,
                                    const Eigen::VectorXd& noise, const std::vector<Cell>& control,
                                    const Cell& target, int n_units);

struct AugmentedEstimate {
  double estimate = 0.0;         // m* + sum w (y - m)
  double weighted_average = 0.0; // sum w y
  double bias_correction = 0.0;  // m* - sum w m
  double matching_form = 0.0;    // weighted_average + bias_correction
  double residual_form = 0.0;    // estimate, computed as the reweighted residual
};

/// mean_control: mean model at each control cell; mean_target: at the target cell.
/// Throws std::logic_error if the two arrangements disagree beyond round-off.
AugmentedEstimate augmented_estimate(const WeightDecomposition& weights,
                                     const Eigen::VectorXd& y, const Eigen::VectorXd& mean_control,
                                     double mean_target);

/// Worst-case |f(target) - sum w f(control)| over ||f||_H <= radius plus noise leverage:
/// sqrt(radius^2 (k** - k_x'w) + sum noise_k w_k^2). Round-off negatives clamp to 0.
double error_bound(double k_target, const Eigen::VectorXd& k_x, const WeightDecomposition& weights,
                   const Eigen::VectorXd& noise, double radius = 1.0);
double error_bound(const SeparableKernel& kernel, std::span<const double> times,
                   double noise_variance, const WeightDecomposition& weights, double radius = 1.0);

/// Model weights for one posterior draw via the low-rank identity
/// (Phi Phi' + D)^-1 Phi phi* = D^-1 Phi (I + Phi' D^-1 Phi)^-1 phi*.
/// Returns the control cells (the likelihood cells) and, per target, the weights and the
/// mean model (control cells in column 0 of `mean_control`, target in mean_target).
struct DrawWeights {
  std::vector<Cell> control;
  Eigen::MatrixXd weights;       // control x targets
  Eigen::VectorXd y;             // control values on the modelled scale
  Eigen::VectorXd mean_control;  // mean model at control cells
  Eigen::VectorXd mean_target;   // mean model at targets
};
DrawWeights draw_weights(const ModelEvaluator& evaluator, const Eigen::VectorXd& params,
                         const std::vector<Cell>& targets);

struct WeightSummary {
  Cell target;
  Eigen::MatrixXd unit_draws;  // draws x N
  Eigen::MatrixXd time_draws;  // draws x T
};

/// Per-draw marginal unit and time weights for every treated post-treatment cell.
/// Gaussian family only; Poisson fits raise std::invalid_argument.
std::vector<WeightSummary> marginal_weights(const PosteriorDraws& draws, const ModelSpec& spec,
                                            const PanelDataset& data, int jobs = 1);

}  // namespace mtgp

#endif  // MTGP_WEIGHTS_HPP
