#ifndef MTGP_TEST_SUPPORT_HPP
#define MTGP_TEST_SUPPORT_HPP

#include "mtgp/model.hpp"
#include "mtgp/sampler.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/rng.hpp"

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace mtgp::testing {

inline std::vector<std::string> unit_names(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "u%02d", i);
    ids.emplace_back(buf);
  }
  return ids;
}

inline std::vector<std::string> outcome_names(int l) {
  std::vector<std::string> out;
  for (int o = 0; o < l; ++o) out.push_back("y" + std::to_string(o));
  return out;
}

/// Panel with populations in [2e5, 2e6] and unstructured values around rate 5 per 100k.
inline PanelDataset random_panel(int n, int t, int l, int t0, ValueKind kind, std::uint64_t seed,
                                 int p = 0, int treated = 0) {
  CounterRng rng(seed, 99);
  std::vector<long> times;
  for (int k = 0; k < t; ++k) times.push_back(2000 + k);
  std::vector<double> pops(static_cast<std::size_t>(n) * t);
  std::vector<double> base(n);
  for (int i = 0; i < n; ++i) base[i] = rng.uniform(2e5, 2e6);
  for (int k = 0; k < t; ++k) {
    for (int i = 0; i < n; ++i) pops[static_cast<std::size_t>(k) * n + i] = std::round(base[i] * (1.0 + 0.01 * k));
  }
  std::vector<double> values(static_cast<std::size_t>(n) * t * l);
  for (int k = 0; k < t; ++k) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < l; ++o) {
        const double rate = 5.0 * std::exp(0.3 * rng.normal());
        const double pop = pops[static_cast<std::size_t>(k) * n + i];
        values[(static_cast<std::size_t>(k) * n + i) * l + o] =
            kind == ValueKind::count ? static_cast<double>(rng.poisson(rate * pop / kRatePer)) : rate;
      }
    }
  }
  Eigen::MatrixXd cov(n, p);
  std::vector<std::string> cov_names;
  for (int c = 0; c < p; ++c) {
    cov_names.push_back("cov_x" + std::to_string(c));
    for (int i = 0; i < n; ++i) cov(i, c) = rng.normal();
  }
  return PanelDataset(unit_names(n), times, outcome_names(l), values, pops, cov, cov_names, treated,
                      t0, kind);
}

/// Random point in the unconstrained space with moderate magnitudes.
inline Eigen::VectorXd random_point(const ModelSpec& spec, std::uint64_t seed, double scale = 0.5) {
  CounterRng rng(seed, 7);
  Eigen::VectorXd x(spec.dim);
  for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = scale * rng.normal();
  return x;
}


/// Dense reference for the Gaussian family at one parameter draw: latent covariance between
/// arbitrary cells, plus the observed cells with their residuals and noise variances.
struct DenseGaussian {
  ModelSpec spec;
  ModelState state;
  LatentField field;
  std::vector<Cell> observed;
  Eigen::VectorXd residual;
  Eigen::VectorXd noise;

  DenseGaussian(const ModelEvaluator& ev, const Eigen::VectorXd& params)
      : spec(ev.spec()), state(unpack(spec, params)),
        field(compute_latent_field(spec, state, ev.times(), ev.covariates())) {
    std::vector<double> r, nv;
    for (int t = 0; t < spec.n_times; ++t) {
      for (int i = 0; i < spec.n_units; ++i) {
        for (int o = 0; o < spec.n_outcomes; ++o) {
          const double y = ev.modelled_value(i, t, o);
          if (std::isnan(y)) continue;
          observed.push_back({i, t, o});
          r.push_back(y - mean(observed.back()));
          nv.push_back(ev.noise_variance(state.sigma(o), i, t));
        }
      }
    }
    residual = Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    noise = Eigen::Map<Eigen::VectorXd>(nv.data(), static_cast<Eigen::Index>(nv.size()));
  }

  double mean(const Cell& c) const {
    const Eigen::Index k = (static_cast<Eigen::Index>(c.time) * spec.n_units + c.unit) * spec.n_outcomes + c.outcome;
    return field.linear_predictor(k) - field.f[static_cast<std::size_t>(c.outcome)](c.unit, c.time);
  }

  double k(const Cell& a, const Cell& b) const {
    const double kt = field.time_factor.row(a.time).dot(field.time_factor.row(b.time));
    const double ku = state.loadings.row(a.unit).dot(state.loadings.row(b.unit));
    const double ko = state.outcome_factor.row(a.outcome).dot(state.outcome_factor.row(b.outcome));
    return state.alpha_time * state.alpha_time * kt * ku * ko;
  }

  Eigen::MatrixXd gram(const std::vector<Cell>& rows, const std::vector<Cell>& cols) const {
    Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < cols.size(); ++b) {
        g(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = k(rows[a], cols[b]);
      }
    }
    return g;
  }
};

/// Draws object holding explicit points, one chain per entry of `chains`.
inline PosteriorDraws fake_draws(const ModelSpec& spec, const std::vector<Eigen::MatrixXd>& chains) {
  PosteriorDraws d;
  d.names = spec.coordinate_names();
  d.chains = chains;
  for (const auto& c : chains) {
    d.log_density.push_back(Eigen::VectorXd::Zero(c.rows()));
    d.accept_stat.push_back(Eigen::VectorXd::Ones(c.rows()));
    d.divergent.emplace_back(static_cast<std::size_t>(c.rows()), 0);
    d.step_size.push_back(0.1);
    d.mass_diag.push_back(Eigen::VectorXd::Ones(c.cols()));
  }
  return d;
}

}  // namespace mtgp::testing

#endif  // MTGP_TEST_SUPPORT_HPP
