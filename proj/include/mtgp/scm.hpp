#ifndef MTGP_SCM_HPP
#define MTGP_SCM_HPP

#include "mtgp/panel.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace mtgp {

/// Synthetic control with an intercept shift, fitted on pre-treatment rates per 100,000.
struct SCMFit {
  int outcome = 0;
  std::vector<int> donors;        // panel unit indices, lexicographic id order
  Eigen::VectorXd donor_weights;  // on the simplex, aligned with donors
  double intercept = 0.0;         // Ybar_1 - sum_j gamma_j Ybar_j
  double pre_rmse = 0.0;
  double objective = 0.0;         // de-meaned sum of squares at the solution
  double gap = 0.0;               // final Frank-Wolfe duality gap
  int iterations = 0;
};

struct SCMOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
};

/// Fits donor weights for the treated unit. Needs >= 2 donors and no missing
/// pre-treatment cells for the treated unit or any donor.
SCMFit fit_scm(const PanelDataset& data, int outcome = 0, const SCMOptions& options = {});

/// Warm-started variant; `start` must lie on the simplex.
SCMFit fit_scm(const PanelDataset& data, int outcome, const SCMOptions& options,
               const Eigen::VectorXd& start);

/// Pre-treatment objective at weights gamma: de-meaned form, or the intercept form
/// sum_t (Y_1t - alpha - sum_j gamma_j Y_jt)^2 with alpha = intercept.
double scm_objective(const PanelDataset& data, int outcome, const std::vector<int>& donors,
                     const Eigen::VectorXd& gamma);
double scm_objective_intercept(const PanelDataset& data, int outcome, const std::vector<int>& donors,
                               const Eigen::VectorXd& gamma, double intercept);

/// Gap series (Y_1t - Ybar_1) - sum_j gamma_j (Y_jt - Ybar_j) for every period; treated
/// post-treatment values are read through TreatedOutcomeReader. NaN where unobserved.
Eigen::VectorXd scm_gaps(const SCMFit& fit, const PanelDataset& data);

}  // namespace mtgp

#endif  // MTGP_SCM_HPP
