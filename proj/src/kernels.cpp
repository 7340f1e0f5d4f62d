#include "mtgp/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace mtgp {

double se_eval(const SETimeKernel& kernel, double t, double t_prime) {
  if (!(kernel.lengthscale > 0.0)) throw std::invalid_argument("se_eval: lengthscale must be > 0");
  const double d = t - t_prime;
  return kernel.amplitude * kernel.amplitude * std::exp(-d * d / (2.0 * kernel.lengthscale));
}

Eigen::MatrixXd time_gram(const SETimeKernel& kernel, std::span<const double> times) {
  const auto n = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    k(a, a) = kernel.amplitude * kernel.amplitude;
    for (Eigen::Index b = 0; b < a; ++b) {
      k(a, b) = k(b, a) = se_eval(kernel, times[a], times[b]);
    }
  }
  return k;
}

double separable_eval(const SeparableKernel& kernel, std::span<const double> times,
                      const Cell& a, const Cell& b) {
  double v = kernel.unit(a.unit, b.unit) * se_eval(kernel.time, times[a.time], times[b.time]);
  if (kernel.outcome) v *= (*kernel.outcome)(a.outcome, b.outcome);
  else if (a.outcome != b.outcome) v = 0.0;
  return v;
}

Eigen::MatrixXd gram(const SeparableKernel& kernel, std::span<const double> times,
                     std::span<const Cell> rows, std::span<const Cell> cols) {
  const Eigen::MatrixXd kt = time_gram(kernel.time, times);
  const Eigen::MatrixXd ku = kernel.unit.gram();
  const Eigen::MatrixXd ko =
      kernel.outcome ? kernel.outcome->gram() : Eigen::MatrixXd::Identity(1, 1);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const Cell& a = rows[r];
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const Cell& b = cols[c];
      double o = 1.0;
      if (kernel.outcome) o = ko(a.outcome, b.outcome);
      else if (a.outcome != b.outcome) o = 0.0;
      out(r, c) = ku(a.unit, b.unit) * kt(a.time, b.time) * o;
    }
  }
  return out;
}

}  // namespace mtgp
