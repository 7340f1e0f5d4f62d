#include "mtgp/weights.hpp"

#include "mtgp/linalg.hpp"
#include "mtgp/parallel.hpp"
#include "mtgp/predict.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>

namespace mtgp {

namespace {

void fill_marginals(WeightDecomposition& w, int n_units, int n_times) {
  w.unit_marginal = Eigen::VectorXd::Zero(n_units);
  w.time_marginal = Eigen::VectorXd::Zero(n_times);
  for (std::size_t k = 0; k < w.control.size(); ++k) {
    w.unit_marginal(w.control[k].unit) += w.combined(static_cast<Eigen::Index>(k));
    w.time_marginal(w.control[k].time) += w.combined(static_cast<Eigen::Index>(k));
  }
}

void try_rank_one(WeightDecomposition& w, int n_units, int n_times) {
  std::set<int> units, times, outcomes;
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& c : w.control) {
    units.insert(c.unit);
    times.insert(c.time);
    outcomes.insert(c.outcome);
    seen.insert({c.unit, c.time, c.outcome});
  }
  w.full_grid = outcomes.size() == 1 && seen.size() == w.control.size() &&
                w.control.size() == units.size() * times.size();
  if (!w.full_grid) return;
  const std::vector<int> uv(units.begin(), units.end()), tv(times.begin(), times.end());
  std::map<int, Eigen::Index> urow, tcol;
  for (std::size_t k = 0; k < uv.size(); ++k) urow[uv[k]] = static_cast<Eigen::Index>(k);
  for (std::size_t k = 0; k < tv.size(); ++k) tcol[tv[k]] = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(uv.size()), static_cast<Eigen::Index>(tv.size()));
  for (std::size_t k = 0; k < w.control.size(); ++k) {
    m(urow[w.control[k].unit], tcol[w.control[k].time]) = w.combined(static_cast<Eigen::Index>(k));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  if (s(0) == 0.0) {
    w.singular_ratio = 0.0;
  } else {
    w.singular_ratio = s.size() > 1 ? s(1) / s(0) : 0.0;
  }
  w.separable = w.singular_ratio <= kSeparabilityTolerance;
  if (!w.separable) return;
  Eigen::VectorXd g = std::sqrt(s(0)) * svd.matrixU().col(0);
  Eigen::VectorXd l = std::sqrt(s(0)) * svd.matrixV().col(0);
  if (l.sum() < 0.0) {
    g = -g;
    l = -l;
  }
  w.gamma = Eigen::VectorXd::Zero(n_units);
  w.lambda = Eigen::VectorXd::Zero(n_times);
  for (std::size_t k = 0; k < uv.size(); ++k) w.gamma(uv[k]) = g(static_cast<Eigen::Index>(k));
  for (std::size_t k = 0; k < tv.size(); ++k) w.lambda(tv[k]) = l(static_cast<Eigen::Index>(k));
}

Eigen::VectorXd kernel_column(const SeparableKernel& kernel, std::span<const double> times,
                              const std::vector<Cell>& control, const Cell& target) {
  const std::vector<Cell> t{target};
  return gram(kernel, times, control, t).col(0);
}

}  // namespace

Eigen::MatrixXd WeightDecomposition::as_matrix() const {
  const auto n = static_cast<Eigen::Index>(unit_marginal.size());
  const auto t = static_cast<Eigen::Index>(time_marginal.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, t);
  for (std::size_t k = 0; k < control.size(); ++k) {
    m(control[k].unit, control[k].time) += combined(static_cast<Eigen::Index>(k));
  }
  return m;
}

WeightDecomposition compute_weights(const Eigen::MatrixXd& k_obs, const Eigen::VectorXd& k_x,
                                    const Eigen::VectorXd& noise, std::vector<Cell> control,
                                    const Cell& target, int n_units, int n_times) {
  const auto n = static_cast<Eigen::Index>(control.size());
  if (k_obs.rows() != n || k_obs.cols() != n || k_x.size() != n || noise.size() != n) {
    throw std::invalid_argument("compute_weights: dimension mismatch");
  }
  Eigen::MatrixXd ky = k_obs;
  ky.diagonal() += noise;
  WeightDecomposition w;
  w.target = target;
  w.combined = solve_psd(cholesky(ky), k_x);
  w.control = std::move(control);
  fill_marginals(w, n_units, n_times);
  try_rank_one(w, n_units, n_times);
  return w;
}

WeightDecomposition compute_weights(const SeparableKernel& kernel, std::span<const double> times,
                                    const Eigen::VectorXd& noise, const std::vector<Cell>& control,
                                    const Cell& target, int n_units) {
  const Eigen::MatrixXd k_obs = gram(kernel, times, control, control);
  return compute_weights(k_obs, kernel_column(kernel, times, control, target), noise, control,
                         target, n_units, static_cast<int>(times.size()));
}

WeightDecomposition compute_weights(const SeparableKernel& kernel, std::span<const double> times,
                                    double noise_variance, const std::vector<Cell>& control,
                                    const Cell& target, int n_units) {
  const Eigen::VectorXd noise =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(control.size()), noise_variance);
  return compute_weights(kernel, times, noise, control, target, n_units);
}

AugmentedEstimate augmented_estimate(const WeightDecomposition& weights, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& mean_control, double mean_target) {
  if (y.size() != weights.combined.size() || mean_control.size() != y.size()) {
    throw std::invalid_argument("augmented_estimate: dimension mismatch");
  }
  AugmentedEstimate out;
  out.weighted_average = weights.combined.dot(y);
  out.bias_correction = mean_target - weights.combined.dot(mean_control);
  out.matching_form = out.weighted_average + out.bias_correction;
  out.residual_form = mean_target + weights.combined.dot(y - mean_control);
  out.estimate = out.residual_form;
  const double scale = 1.0 + std::abs(mean_target) + weights.combined.cwiseAbs().dot(y.cwiseAbs() + mean_control.cwiseAbs());
  if (std::abs(out.matching_form - out.residual_form) > 1e-10 * scale) {
    throw std::logic_error("augmented_estimate: matching and residual forms disagree");
  }
  return out;
}

double error_bound(double k_target, const Eigen::VectorXd& k_x, const WeightDecomposition& weights,
                   const Eigen::VectorXd& noise, double radius) {
  const Eigen::VectorXd& w = weights.combined;
  if (k_x.size() != w.size() || noise.size() != w.size()) {
    throw std::invalid_argument("error_bound: dimension mismatch");
  }
  const double power = k_target - k_x.dot(w);
  const double radicand = radius * radius * power + (noise.array() * w.array().square()).sum();
  if (radicand < 0.0) {
    if (radicand < -1e-8 * std::max(1.0, k_target)) {
      std::cerr << "warning: error_bound radicand " << radicand << " clamped to 0\n";
    }
    return 0.0;
  }
  return std::sqrt(radicand);
}

double error_bound(const SeparableKernel& kernel, std::span<const double> times,
                   double noise_variance, const WeightDecomposition& weights, double radius) {
  const Cell& t = weights.target;
  const double k_target = separable_eval(kernel, times, t, t);
  const Eigen::VectorXd noise =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(weights.control.size()), noise_variance);
  return error_bound(k_target, kernel_column(kernel, times, weights.control, t), weights, noise, radius);
}

DrawWeights draw_weights(const ModelEvaluator& ev, const Eigen::VectorXd& params,
                         const std::vector<Cell>& targets) {
  const ModelSpec& spec = ev.spec();
  if (spec.config.likelihood != Likelihood::gaussian) {
    throw std::invalid_argument("weights are defined for the Gaussian family only");
  }
  const ModelState s = unpack(spec, params);
  const LatentField field = compute_latent_field(spec, s, ev.times(), ev.covariates());
  const int n = spec.n_units, t = spec.n_times, l = spec.n_outcomes, j = spec.rank();
  const Eigen::Index q = static_cast<Eigen::Index>(t) * j * l;
  const auto phi_row = [&](const Cell& c) {
    Eigen::RowVectorXd row(q);
    for (int jj = 0; jj < j; ++jj) {
      for (int m = 0; m < l; ++m) {
        const double coef = s.alpha_time * s.loadings(c.unit, jj) * s.outcome_factor(c.outcome, m);
        row.segment(static_cast<Eigen::Index>(jj * l + m) * t, t) = coef * field.time_factor.row(c.time);
      }
    }
    return row;
  };
  const auto mean_at = [&](const Cell& c) {
    const Eigen::Index k = (static_cast<Eigen::Index>(c.time) * n + c.unit) * l + c.outcome;
    return field.linear_predictor(k) - field.f[static_cast<std::size_t>(c.outcome)](c.unit, c.time);
  };

  DrawWeights out;
  std::vector<double> y, inv_noise, mean;
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < l; ++o) {
        const double v = ev.modelled_value(i, ti, o);
        if (std::isnan(v)) continue;
        const Cell c{i, ti, o};
        out.control.push_back(c);
        y.push_back(v);
        inv_noise.push_back(1.0 / ev.noise_variance(s.sigma(o), i, ti));
        mean.push_back(mean_at(c));
      }
    }
  }
  const auto nobs = static_cast<Eigen::Index>(out.control.size());
  const auto ntar = static_cast<Eigen::Index>(targets.size());
  out.y = Eigen::Map<const Eigen::VectorXd>(y.data(), nobs);
  out.mean_control = Eigen::Map<const Eigen::VectorXd>(mean.data(), nobs);
  out.mean_target.resize(ntar);
  for (Eigen::Index k = 0; k < ntar; ++k) out.mean_target(k) = mean_at(targets[static_cast<std::size_t>(k)]);
  if (!spec.has_latent()) {
    out.weights = Eigen::MatrixXd::Zero(nobs, ntar);
    return out;
  }
  Eigen::MatrixXd phi_o(nobs, q);
  for (Eigen::Index k = 0; k < nobs; ++k) phi_o.row(k) = phi_row(out.control[static_cast<std::size_t>(k)]);
  const Eigen::VectorXd dinv = Eigen::Map<const Eigen::VectorXd>(inv_noise.data(), nobs);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(q, q);
  a.noalias() += phi_o.transpose() * dinv.asDiagonal() * phi_o;
  Eigen::MatrixXd phi_t(q, ntar);
  for (Eigen::Index k = 0; k < ntar; ++k) phi_t.col(k) = phi_row(targets[static_cast<std::size_t>(k)]).transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw LinalgError("draw_weights: precision not PD");
  out.weights = dinv.asDiagonal() * (phi_o * llt.solve(phi_t));
  return out;
}

std::vector<WeightSummary> marginal_weights(const PosteriorDraws& draws, const ModelSpec& spec,
                                            const PanelDataset& data, int jobs) {
  if (spec.config.likelihood != Likelihood::gaussian) {
    throw std::invalid_argument(
        "marginal_weights: unit/time weights exist only for the Gaussian family; refit with "
        "likelihood gaussian");
  }
  const ModelEvaluator ev(spec, data);
  const std::vector<Cell> targets = target_cells(data);
  const int total = draws.n_draws();
  std::vector<WeightSummary> out(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k) {
    out[k].target = targets[k];
    out[k].unit_draws.resize(total, spec.n_units);
    out[k].time_draws.resize(total, spec.n_times);
  }
  parallel_for(static_cast<std::size_t>(total), jobs, [&](std::size_t d) {
    const DrawWeights dw = draw_weights(ev, draws.draw(static_cast<int>(d)), targets);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      Eigen::RowVectorXd units = Eigen::RowVectorXd::Zero(spec.n_units);
      Eigen::RowVectorXd times = Eigen::RowVectorXd::Zero(spec.n_times);
      for (std::size_t c = 0; c < dw.control.size(); ++c) {
        const double w = dw.weights(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
        units(dw.control[c].unit) += w;
        times(dw.control[c].time) += w;
      }
      out[k].unit_draws.row(static_cast<Eigen::Index>(d)) = units;
      out[k].time_draws.row(static_cast<Eigen::Index>(d)) = times;
    }
  });
  return out;
}

}  // namespace mtgp
