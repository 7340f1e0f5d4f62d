#include "mtgp/predict.hpp"

#include "mtgp/linalg.hpp"
#include "mtgp/parallel.hpp"
#include "mtgp/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mtgp {

namespace {

constexpr std::uint64_t kPredictStream = 0x5052454449435400ULL;

// Low-rank view of the latent field: f(cells) = Phi z with z = vec(z_latent).
struct LowRankPosterior {
  Eigen::MatrixXd phi_target;        // cells x TJL
  Eigen::VectorXd z_mean;            // TJL
  Eigen::LLT<Eigen::MatrixXd> prec;  // I + Phi_o' D^-1 Phi_o
  Eigen::VectorXd mean_model;        // m at the target cells
};

Eigen::RowVectorXd phi_row(const ModelSpec& spec, const ModelState& s, const LatentField& field,
                           const Cell& c) {
  const int t = spec.n_times, j = spec.rank(), l = spec.n_outcomes;
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(t) * j * l);
  for (int jj = 0; jj < j; ++jj) {
    for (int m = 0; m < l; ++m) {
      const double coef = s.alpha_time * s.loadings(c.unit, jj) * s.outcome_factor(c.outcome, m);
      row.segment(static_cast<Eigen::Index>(jj * l + m) * t, t) = coef * field.time_factor.row(c.time);
    }
  }
  return row;
}

double mean_model_at(const ModelSpec& spec, const LatentField& field, const Cell& c) {
  const Eigen::Index k = (static_cast<Eigen::Index>(c.time) * spec.n_units + c.unit) * spec.n_outcomes + c.outcome;
  return field.linear_predictor(k) - field.f[static_cast<std::size_t>(c.outcome)](c.unit, c.time);
}

LowRankPosterior low_rank_posterior(const ModelEvaluator& ev, const ModelState& s,
                                    const LatentField& field, const std::vector<Cell>& cells) {
  const ModelSpec& spec = ev.spec();
  const int n = spec.n_units, t = spec.n_times, l = spec.n_outcomes;
  const Eigen::Index q = static_cast<Eigen::Index>(t) * spec.rank() * l;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(q, q);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(q);
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> weights;
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < l; ++o) {
        const double y = ev.modelled_value(i, ti, o);
        if (std::isnan(y)) continue;
        const Cell c{i, ti, o};
        const Eigen::RowVectorXd row = phi_row(spec, s, field, c);
        const double inv_noise = 1.0 / ev.noise_variance(s.sigma(o), i, ti);
        a.noalias() += inv_noise * row.transpose() * row;
        b += inv_noise * (y - mean_model_at(spec, field, c)) * row.transpose();
      }
    }
  }
  LowRankPosterior out;
  out.prec.compute(a);
  if (out.prec.info() != Eigen::Success) throw LinalgError("latent posterior precision not PD");
  out.z_mean = out.prec.solve(b);
  out.phi_target.resize(static_cast<Eigen::Index>(cells.size()), q);
  out.mean_model.resize(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    out.phi_target.row(static_cast<Eigen::Index>(k)) = phi_row(spec, s, field, cells[k]);
    out.mean_model(static_cast<Eigen::Index>(k)) = mean_model_at(spec, field, cells[k]);
  }
  return out;
}

void check_cells(const ModelSpec& spec, const std::vector<Cell>& cells) {
  for (const auto& c : cells) {
    if (c.unit < 0 || c.unit >= spec.n_units || c.time < 0 || c.time >= spec.n_times ||
        c.outcome < 0 || c.outcome >= spec.n_outcomes) {
      throw std::invalid_argument("prediction cell outside the panel grid");
    }
  }
}

}  // namespace

ConditionalGaussian gaussian_conditional(const Eigen::MatrixXd& k_obs, const Eigen::MatrixXd& k_mis,
                                         const Eigen::MatrixXd& k_obs_mis,
                                         const Eigen::VectorXd& noise_obs,
                                         const Eigen::VectorXd& noise_mis,
                                         const Eigen::VectorXd& y) {
  const Eigen::Index no = k_obs.rows(), nm = k_mis.rows();
  if (k_obs.cols() != no || k_mis.cols() != nm || k_obs_mis.rows() != no || k_obs_mis.cols() != nm ||
      noise_obs.size() != no || noise_mis.size() != nm || y.size() != no) {
    throw std::invalid_argument("gaussian_conditional: dimension mismatch");
  }
  Eigen::MatrixXd ky = k_obs;
  ky.diagonal() += noise_obs;
  const CholeskyFactor f = cholesky(ky);
  ConditionalGaussian out;
  out.mean = k_obs_mis.transpose() * solve_psd(f, y);
  const Eigen::MatrixXd v = f.lower.triangularView<Eigen::Lower>().solve(k_obs_mis);
  out.cov = k_mis - v.transpose() * v;
  out.cov.diagonal() += noise_mis;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  // Validates positive semi-definiteness (throws LinalgError after the jitter ladder).
  if (nm > 0) cholesky(out.cov, 1e-12 * std::max(1.0, out.cov.diagonal().cwiseAbs().maxCoeff()));
  return out;
}

Eigen::MatrixXd CounterfactualDraws::rates(const PanelDataset& data) const {
  Eigen::MatrixXd out = values;
  if (likelihood == Likelihood::poisson) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      out.col(static_cast<Eigen::Index>(k)) *= kRatePer / data.population(cells[k].unit, cells[k].time);
    }
  }
  return out;
}

ConditionalGaussian latent_conditional(const ModelEvaluator& ev, const Eigen::VectorXd& params,
                                       const std::vector<Cell>& cells) {
  const ModelSpec& spec = ev.spec();
  if (spec.config.likelihood != Likelihood::gaussian) {
    throw std::invalid_argument("latent_conditional: Gaussian family only");
  }
  check_cells(spec, cells);
  const ModelState s = unpack(spec, params);
  const LatentField field = compute_latent_field(spec, s, ev.times(), ev.covariates());
  ConditionalGaussian out;
  const auto nc = static_cast<Eigen::Index>(cells.size());
  if (!spec.has_latent()) {
    out.mean.resize(nc);
    for (Eigen::Index k = 0; k < nc; ++k) out.mean(k) = mean_model_at(spec, field, cells[static_cast<std::size_t>(k)]);
    out.cov = Eigen::MatrixXd::Zero(nc, nc);
    return out;
  }
  const LowRankPosterior post = low_rank_posterior(ev, s, field, cells);
  out.mean = post.mean_model + post.phi_target * post.z_mean;
  out.cov = post.phi_target * post.prec.solve(post.phi_target.transpose());
  return out;
}

CounterfactualDraws predictive_draws(const PosteriorDraws& draws, const ModelSpec& spec,
                                     const PanelDataset& data, const std::vector<Cell>& cells,
                                     std::uint64_t seed, int jobs) {
  check_cells(spec, cells);
  if (draws.dim() != spec.dim) throw std::invalid_argument("predictive_draws: draws do not match the model");
  const ModelEvaluator ev(spec, data);
  const int total = draws.n_draws();
  const auto nc = static_cast<Eigen::Index>(cells.size());
  CounterfactualDraws out;
  out.cells = cells;
  out.likelihood = spec.config.likelihood;
  out.values.resize(total, nc);
  out.latent_rate.resize(total, nc);
  out.chain.resize(static_cast<std::size_t>(total));
  out.iteration.resize(static_cast<std::size_t>(total));
  const bool gaussian = spec.config.likelihood == Likelihood::gaussian;

  parallel_for(static_cast<std::size_t>(total), jobs, [&](std::size_t d) {
    const auto row = static_cast<Eigen::Index>(d);
    out.chain[d] = static_cast<int>(d) / draws.n_iters();
    out.iteration[d] = static_cast<int>(d) % draws.n_iters();
    CounterRng rng(mix_seed(seed, kPredictStream), d);
    const Eigen::VectorXd x = draws.draw(static_cast<int>(d));
    const ModelState s = unpack(spec, x);
    const LatentField field = compute_latent_field(spec, s, ev.times(), ev.covariates());
    Eigen::VectorXd latent(nc);
    if (gaussian && spec.has_latent()) {
      const LowRankPosterior post = low_rank_posterior(ev, s, field, cells);
      Eigen::VectorXd eps(post.z_mean.size());
      for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
      const Eigen::VectorXd z = post.z_mean + post.prec.matrixU().solve(eps);
      latent = post.mean_model + post.phi_target * z;
    } else {
      for (Eigen::Index k = 0; k < nc; ++k) {
        const Cell& c = cells[static_cast<std::size_t>(k)];
        latent(k) = field.linear_predictor(
            (static_cast<Eigen::Index>(c.time) * spec.n_units + c.unit) * spec.n_outcomes + c.outcome);
      }
    }
    for (Eigen::Index k = 0; k < nc; ++k) {
      const Cell& c = cells[static_cast<std::size_t>(k)];
      if (gaussian) {
        out.latent_rate(row, k) = latent(k);
        out.values(row, k) = latent(k) + std::sqrt(ev.noise_variance(s.sigma(c.outcome), c.unit, c.time)) * rng.normal();
      } else {
        const double rate = std::exp(latent(k));
        out.latent_rate(row, k) = rate;
        out.values(row, k) = static_cast<double>(rng.poisson(ev.population(c.unit, c.time) * rate / kRatePer));
      }
    }
  });
  return out;
}

std::vector<Cell> target_cells(const PanelDataset& data) {
  std::vector<Cell> cells;
  for (int t = data.t0(); t < data.n_times(); ++t) {
    for (int o = 0; o < data.n_outcomes(); ++o) cells.push_back({data.treated_unit(), t, o});
  }
  return cells;
}

CounterfactualDraws impute_counterfactuals(const PosteriorDraws& draws, const ModelSpec& spec,
                                           const PanelDataset& data, std::uint64_t seed, int jobs) {
  return predictive_draws(draws, spec, data, target_cells(data), seed, jobs);
}

}  // namespace mtgp
