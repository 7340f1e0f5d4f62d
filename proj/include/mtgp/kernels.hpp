#ifndef MTGP_KERNELS_HPP
#define MTGP_KERNELS_HPP

#include "mtgp/panel.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace mtgp {

/// Squared-exponential time kernel k(t,t') = amplitude^2 exp(-(t-t')^2 / (2 lengthscale)).
///
/// The lengthscale carries squared time units (denominator 2*rho, not 2*rho^2); the
/// InvGamma(5,5) prior on it is calibrated to this form.
struct SETimeKernel {
  double lengthscale = 1.0;
  double amplitude = 1.0;
};

/// K_unit = beta beta^T with beta of shape N x J.
struct LowRankUnitKernel {
  Eigen::MatrixXd loadings;

  int rank() const { return static_cast<int>(loadings.cols()); }
  double operator()(int i, int j) const { return loadings.row(i).dot(loadings.row(j)); }
  Eigen::MatrixXd gram() const { return loadings * loadings.transpose(); }
};

/// K_outcome = Z Z^T, Z of shape L x L.
struct OutcomeKernel {
  Eigen::MatrixXd factor;

  double operator()(int a, int b) const { return factor.row(a).dot(factor.row(b)); }
  Eigen::MatrixXd gram() const { return factor * factor.transpose(); }
};

struct SeparableKernel {
  SETimeKernel time;
  LowRankUnitKernel unit;
  std::optional<OutcomeKernel> outcome;
};

double se_eval(const SETimeKernel& kernel, double t, double t_prime);

/// T x T Gram matrix over the given time positions.
Eigen::MatrixXd time_gram(const SETimeKernel& kernel, std::span<const double> times);

/// k((i,t,l),(i',t',l')) = k_unit(i,i') k_time(t,t') k_outcome(l,l').
double separable_eval(const SeparableKernel& kernel, std::span<const double> times,
                      const Cell& a, const Cell& b);

/// Gram matrix between two cell lists; with rows == cols it is K_obs or K_mis,
/// otherwise the rectangular cross-covariance.
Eigen::MatrixXd gram(const SeparableKernel& kernel, std::span<const double> times,
                     std::span<const Cell> rows, std::span<const Cell> cols);

}  // namespace mtgp

#endif  // MTGP_KERNELS_HPP
