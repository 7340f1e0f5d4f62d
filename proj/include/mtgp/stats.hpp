#ifndef MTGP_STATS_HPP
#define MTGP_STATS_HPP

#include <Eigen/Dense>

#include <vector>

namespace mtgp {

/// Linear-interpolation sample quantile (type 7). Throws on empty input.
double quantile(std::vector<double> values, double p);
double quantile(const Eigen::VectorXd& values, double p);

/// Central interval [q((1-level)/2), q((1+level)/2)]; level >= 1 spans -inf..inf.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};
Interval central_interval(const Eigen::VectorXd& values, double level);

}  // namespace mtgp

#endif  // MTGP_STATS_HPP
