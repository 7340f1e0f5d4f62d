#include "mtgp/scm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mtgp {

namespace {

struct Problem {
  Eigen::VectorXd y;  // de-meaned treated pre-period series, T0
  Eigen::MatrixXd x;  // de-meaned donor series, T0 x D
  Eigen::VectorXd x_mean;
  double treated_mean = 0.0;
};

double pre_rate(const PanelDataset& data, int unit, int t, int outcome) {
  if (!data.present(unit, t, outcome)) {
    throw DataError("scm: missing pre-treatment value for unit '" + data.unit_ids()[unit] +
                    "' at time " + std::to_string(data.time_ids()[t]));
  }
  return data.to_rate(data.control_value(unit, t, outcome), unit, t);
}

Problem build(const PanelDataset& data, int outcome, const std::vector<int>& donors) {
  const int t0 = data.t0();
  if (t0 < 1) throw DataError("scm: no pre-treatment periods");
  Problem p;
  Eigen::VectorXd y(t0);
  Eigen::MatrixXd x(t0, static_cast<Eigen::Index>(donors.size()));
  for (int t = 0; t < t0; ++t) {
    y(t) = pre_rate(data, data.treated_unit(), t, outcome);
    for (std::size_t j = 0; j < donors.size(); ++j) {
      x(t, static_cast<Eigen::Index>(j)) = pre_rate(data, donors[j], t, outcome);
    }
  }
  p.treated_mean = y.mean();
  p.x_mean = x.colwise().mean().transpose();
  p.y = y.array() - p.treated_mean;
  p.x = x.rowwise() - p.x_mean.transpose();
  return p;
}

std::vector<int> donor_list(const PanelDataset& data) {
  std::vector<int> donors;
  for (int i = 0; i < data.n_units(); ++i) {
    if (i != data.treated_unit()) donors.push_back(i);
  }
  if (donors.size() < 2) throw DataError("scm: need at least 2 donor units");
  return donors;
}

// Minimizes ||y - A z||^2 subject to sum z = 1 on the columns in `support`.
Eigen::VectorXd affine_minimizer(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty,
                                 const std::vector<Eigen::Index>& support, Eigen::Index dim) {
  const auto s = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
  Eigen::VectorXd rhs(s + 1);
  for (Eigen::Index a = 0; a < s; ++a) {
    for (Eigen::Index b = 0; b < s; ++b) kkt(a, b) = gram(support[a], support[b]);
    kkt(a, s) = kkt(s, a) = 1.0;
    rhs(a) = xty(support[a]);
  }
  rhs(s) = 1.0;
  const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
  for (Eigen::Index a = 0; a < s; ++a) z(support[a]) = sol(a);
  return z;
}

}  // namespace

SCMFit fit_scm(const PanelDataset& data, int outcome, const SCMOptions& options) {
  const std::vector<int> donors = donor_list(data);
  const Problem p = build(data, outcome, donors);
  const auto d = static_cast<Eigen::Index>(donors.size());
  // Start at the best single donor; the lowest index wins ties, i.e. the smallest unit id.
  Eigen::Index best = 0;
  double best_obj = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < d; ++k) {
    const double obj = (p.y - p.x.col(k)).squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = k;
    }
  }
  return fit_scm(data, outcome, options, Eigen::VectorXd::Unit(d, best));
}

SCMFit fit_scm(const PanelDataset& data, int outcome, const SCMOptions& options,
               const Eigen::VectorXd& start) {
  if (outcome < 0 || outcome >= data.n_outcomes()) throw std::invalid_argument("scm: bad outcome index");
  const std::vector<int> donors = donor_list(data);
  const Problem p = build(data, outcome, donors);
  const auto d = static_cast<Eigen::Index>(donors.size());
  if (start.size() != d || (start.array() < 0).any() || std::abs(start.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("scm: start point must lie on the simplex");
  }
  const Eigen::MatrixXd gram = p.x.transpose() * p.x;
  const Eigen::VectorXd xty = p.x.transpose() * p.y;
  const auto objective = [&](const Eigen::VectorXd& g) { return (p.y - p.x * g).squaredNorm(); };

  Eigen::VectorXd x = start;
  SCMFit fit;
  int it = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd grad = 2.0 * (gram * x - xty);
    Eigen::Index s = 0;
    for (Eigen::Index k = 1; k < d; ++k) {
      if (grad(k) < grad(s)) s = k;
    }
    gap = grad.dot(x) - grad(s);
    if (gap <= options.tolerance) break;

    // Frank-Wolfe vertex joins the active set; the corrective phase then minimizes over the
    // face spanned by the active set, dropping vertices (away moves) whenever the affine
    // minimizer leaves the simplex.
    std::vector<Eigen::Index> support;
    for (Eigen::Index k = 0; k < d; ++k) {
      if (x(k) > 0.0 || k == s) support.push_back(k);
    }
    const double before = objective(x);
    Eigen::VectorXd trial = x;
    for (int inner = 0; inner < static_cast<int>(d) + 1; ++inner) {
      const Eigen::VectorXd z = affine_minimizer(gram, xty, support, d);
      bool feasible = true;
      double theta = 1.0;
      for (Eigen::Index k : support) {
        if (z(k) < 0.0) {
          feasible = false;
          theta = std::min(theta, trial(k) / (trial(k) - z(k)));
        }
      }
      if (feasible) {
        trial = z;
        break;
      }
      trial += theta * (z - trial);
      std::vector<Eigen::Index> kept;
      for (Eigen::Index k : support) {
        if (trial(k) > 1e-15) {
          kept.push_back(k);
        } else {
          trial(k) = 0.0;
        }
      }
      support = kept;
      if (support.empty()) break;
    }
    if (!support.empty() && std::abs(trial.sum() - 1.0) < 1e-9 && (trial.array() >= 0).all() &&
        objective(trial) < before) {
      x = trial / trial.sum();
    } else {
      // Plain Frank-Wolfe step with exact line search as a fallback.
      const Eigen::VectorXd dir = Eigen::VectorXd::Unit(d, s) - x;
      const Eigen::VectorXd xd = p.x * dir;
      const double curv = xd.squaredNorm();
      const double step = curv > 0 ? std::clamp(-0.5 * grad.dot(dir) / curv, 0.0, 1.0) : 1.0;
      x += step * dir;
    }
  }
  fit.outcome = outcome;
  fit.donors = donors;
  fit.donor_weights = x;
  fit.intercept = p.treated_mean - x.dot(p.x_mean);
  fit.objective = objective(x);
  fit.pre_rmse = std::sqrt(fit.objective / static_cast<double>(p.y.size()));
  fit.gap = gap;
  fit.iterations = it;
  return fit;
}

double scm_objective(const PanelDataset& data, int outcome, const std::vector<int>& donors,
                     const Eigen::VectorXd& gamma) {
  const Problem p = build(data, outcome, donors);
  return (p.y - p.x * gamma).squaredNorm();
}

double scm_objective_intercept(const PanelDataset& data, int outcome, const std::vector<int>& donors,
                               const Eigen::VectorXd& gamma, double intercept) {
  double sum = 0.0;
  for (int t = 0; t < data.t0(); ++t) {
    double fitted = intercept;
    for (std::size_t j = 0; j < donors.size(); ++j) {
      fitted += gamma(static_cast<Eigen::Index>(j)) * pre_rate(data, donors[j], t, outcome);
    }
    const double r = pre_rate(data, data.treated_unit(), t, outcome) - fitted;
    sum += r * r;
  }
  return sum;
}

Eigen::VectorXd scm_gaps(const SCMFit& fit, const PanelDataset& data) {
  const Problem p = build(data, fit.outcome, fit.donors);
  const int tu = data.treated_unit();
  const TreatedOutcomeReader reader(data);
  Eigen::VectorXd gaps(data.n_times());
  for (int t = 0; t < data.n_times(); ++t) {
    double treated = std::numeric_limits<double>::quiet_NaN();
    if (t < data.t0()) {
      treated = pre_rate(data, tu, t, fit.outcome);
    } else if (reader.present(t, fit.outcome)) {
      treated = data.to_rate(reader.value(t, fit.outcome), tu, t);
    }
    double synth = 0.0;
    bool ok = std::isfinite(treated);
    for (std::size_t j = 0; j < fit.donors.size() && ok; ++j) {
      const int u = fit.donors[j];
      if (!data.present(u, t, fit.outcome)) {
        ok = fit.donor_weights(static_cast<Eigen::Index>(j)) == 0.0;
        continue;
      }
      synth += fit.donor_weights(static_cast<Eigen::Index>(j)) *
               (data.to_rate(data.control_value(u, t, fit.outcome), u, t) - p.x_mean(static_cast<Eigen::Index>(j)));
    }
    gaps(t) = ok ? (treated - p.treated_mean) - synth : std::numeric_limits<double>::quiet_NaN();
  }
  return gaps;
}

}  // namespace mtgp
