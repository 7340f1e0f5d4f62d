#include "mtgp/model.hpp"

#include "mtgp/kernels.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace mtgp;
using mtgp::testing::random_panel;
using mtgp::testing::random_point;

namespace {

ModelConfig config(Likelihood lik, int rank, bool covariates = false) {
  ModelConfig c;
  c.likelihood = lik;
  c.rank = rank;
  c.mean_model.covariates = covariates;
  return c;
}

double max_rel_fd_error(const ModelEvaluator& ev, const Eigen::VectorXd& x) {
  Eigen::VectorXd grad;
  ev.log_joint_gradient(x, grad);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    const double fd = (ev.log_joint(xp) - ev.log_joint(xm)) / (2 * h);
    worst = std::max(worst, std::abs(grad(k) - fd) / std::max({1.0, std::abs(fd), std::abs(grad(k))}));
  }
  return worst;
}

}  // namespace

TEST(ModelGradient, GaussianRank2MatchesFiniteDifferences) {
  const PanelDataset data = random_panel(4, 6, 1, 4, ValueKind::count, 1, 2);
  const ModelEvaluator ev(build_model(config(Likelihood::gaussian, 2, true), data), data);
  for (std::uint64_t s = 0; s < 3; ++s) EXPECT_LT(max_rel_fd_error(ev, random_point(ev.spec(), s)), 1e-5);
}

TEST(ModelGradient, PoissonRank2MatchesFiniteDifferences) {
  const PanelDataset data = random_panel(4, 6, 1, 4, ValueKind::count, 2, 1);
  const ModelEvaluator ev(build_model(config(Likelihood::poisson, 2, true), data), data);
  for (std::uint64_t s = 0; s < 3; ++s) {
    Eigen::VectorXd x = random_point(ev.spec(), s);
    x(ev.spec().mu.offset) = 1.6;  // near log 5 keeps the Poisson terms moderate
    EXPECT_LT(max_rel_fd_error(ev, x), 1e-5);
  }
}

TEST(ModelGradient, MultiOutcomeWithMaskedCells) {
  PanelDataset data = random_panel(4, 6, 2, 4, ValueKind::count, 3);
  data = data.with_masked({{1, 2, 0}, {2, 0, 1}});
  for (Likelihood lik : {Likelihood::gaussian, Likelihood::poisson}) {
    const ModelEvaluator ev(build_model(config(lik, 2), data), data);
    ASSERT_TRUE(ev.spec().outcome_factor.present());
    Eigen::VectorXd x = random_point(ev.spec(), 11);
    if (lik == Likelihood::poisson) x.segment(ev.spec().mu.offset, 2).setConstant(1.6);
    EXPECT_LT(max_rel_fd_error(ev, x), 1e-5);
  }
}

TEST(ModelGradient, AbsentBlocksAreExcluded) {
  const PanelDataset data = random_panel(4, 6, 1, 4, ValueKind::count, 4);
  const ModelSpec spec = build_model(config(Likelihood::poisson, 2, true), data);
  EXPECT_FALSE(spec.eta.present());
  EXPECT_FALSE(spec.log_sigma.present());
  EXPECT_FALSE(spec.outcome_factor.present());
  const Eigen::VectorXd g = grad_log_joint(random_point(spec, 1), data, spec);
  EXPECT_EQ(g.size(), spec.dim);
  // log_rho, log_alpha (x2), beta 8, mu 1, nu 4, z_global 6, z_latent 12
  EXPECT_EQ(spec.dim, 4 + 8 + 1 + 4 + 6 + 12);
}

TEST(ModelLogJoint, PoissonTermAtItsMode) {
  // One observed cell with rate equal to its count: the likelihood term is k log k - k - log k!.
  const PanelDataset base = random_panel(2, 3, 1, 2, ValueKind::count, 5);
  std::vector<Cell> mask;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 2; ++i) {
      if (!(i == 1 && t == 0) && !base.is_target(i, t)) mask.push_back({i, t, 0});
    }
  }
  const PanelDataset data = base.with_masked(mask);
  ModelConfig c = config(Likelihood::poisson, 0);
  c.mean_model.global_trend = false;
  c.mean_model.unit_intercepts = false;
  const ModelEvaluator ev(build_model(c, data), data);
  const double k = data.control_value(1, 0, 0);
  Eigen::VectorXd x(1);
  x(0) = std::log(k * kRatePer / data.population(1, 0));
  EXPECT_NEAR(ev.log_likelihood(x), k * std::log(k) - k - std::lgamma(k + 1), 1e-9);
}

TEST(ModelLogJoint, MaskingRemovesExactlyOneTerm) {
  const PanelDataset data = random_panel(4, 6, 1, 4, ValueKind::count, 6);
  for (Likelihood lik : {Likelihood::gaussian, Likelihood::poisson}) {
    const ModelSpec spec = build_model(config(lik, 2), data);
    const ModelEvaluator full(spec, data);
    const PanelDataset masked = data.with_masked({{2, 3, 0}});
    const ModelEvaluator part(spec, masked);
    const Eigen::VectorXd x = random_point(spec, 3, 0.3);
    EXPECT_NEAR(full.log_joint(x) - part.log_joint(x), full.cell_log_likelihood(x, 2, 3, 0), 1e-9);
  }
}

TEST(ModelLogJoint, ScalarOracleGaussianZeroLatents) {
  // N=2, T=3, rank 1, zero latents: only priors and the Gaussian residual terms remain.
  const PanelDataset data = random_panel(2, 3, 1, 2, ValueKind::rate, 7);
  ModelConfig c = config(Likelihood::gaussian, 1);
  const ModelSpec spec = build_model(c, data);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(spec.dim);
  double ybar = 0.0;
  int n = 0;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 2; ++i) {
      if (data.is_control_observed(i, t, 0)) {
        ybar += data.control_value(i, t, 0);
        ++n;
      }
    }
  }
  ybar /= n;
  x(spec.mu.offset) = ybar;
  const double log_sigma = 0.2;
  x(spec.log_sigma.offset) = log_sigma;

  const double pi = std::numbers::pi;
  const auto norm = [&](double v, double m, double sd) {
    return -0.5 * std::log(2 * pi) - std::log(sd) - 0.5 * (v - m) * (v - m) / (sd * sd);
  };
  const auto half_norm_log = [&](double lv, double sd) {
    const double v = std::exp(lv);
    return std::log(2.0) + norm(v, 0, sd) + lv;
  };
  const auto inv_gamma_log = [&](double lv) {
    const double v = std::exp(lv);
    return 5 * std::log(5.0) - std::lgamma(5.0) - 6 * std::log(v) - 5 / v + lv;
  };
  double expected = 2 * inv_gamma_log(0.0) + 2 * half_norm_log(0.0, 1.0) + half_norm_log(log_sigma, 1.0);
  expected += 2 * norm(0, 0, 1);       // beta
  expected += norm(ybar, 0, 10);       // mu
  expected += 2 * norm(0, 0, 1);       // nu
  expected += 3 * norm(0, 0, 1);       // z_global
  expected += 3 * norm(0, 0, 1);       // z_latent
  const double sigma = std::exp(log_sigma);
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 2; ++i) {
      if (!data.is_control_observed(i, t, 0)) continue;
      const double h = std::sqrt(data.population(i, t) / 1e5);
      expected += norm(data.control_value(i, t, 0), ybar, sigma / std::sqrt(h));
    }
  }
  EXPECT_NEAR(log_joint(x, data, spec), expected, 1e-9);
}

TEST(ModelLogJoint, RotationInvarianceRank1) {
  const PanelDataset data = random_panel(3, 5, 1, 3, ValueKind::count, 8);
  const ModelSpec spec = build_model(config(Likelihood::poisson, 1), data);
  const ModelEvaluator ev(spec, data);
  Eigen::VectorXd x = random_point(spec, 4, 0.4);
  x(spec.mu.offset) = 1.6;
  const ModelState s = unpack(spec, x);
  const LatentField field = compute_latent_field(spec, s, ev.times(), ev.covariates());
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                                Eigen::MatrixXd::Random(5, 5)).householderQ();
  ModelState rotated = s;
  rotated.z_latent = q.transpose() * s.z_latent;
  const Eigen::VectorXd xr = pack(spec, rotated);
  // z' z is unchanged, and C Q Q' z = C z, so the joint density is identical.
  EXPECT_NEAR(ev.log_joint_with_time_factor(xr, field.time_factor * q), ev.log_joint(x), 1e-9);
}

TEST(ModelLogJoint, StationaryPointOfConvexModel) {
  // Rank 0, no trend, fixed sigma: the log joint is quadratic in (mu, nu); one Newton step
  // with the finite-difference Hessian of the analytic gradient lands on the optimum.
  const PanelDataset data = random_panel(3, 4, 1, 3, ValueKind::rate, 9);
  ModelConfig c = config(Likelihood::gaussian, 0);
  c.mean_model.global_trend = false;
  c.fixed.sigma = Eigen::VectorXd::Constant(1, 0.7);
  const ModelSpec spec = build_model(c, data);
  const ModelEvaluator ev(spec, data);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(spec.dim);
  for (int iter = 0; iter < 3; ++iter) {
    Eigen::VectorXd g;
    ev.log_joint_gradient(x, g);
    Eigen::MatrixXd hess(spec.dim, spec.dim);
    for (Eigen::Index k = 0; k < spec.dim; ++k) {
      Eigen::VectorXd gp, gm, xp = x, xm = x;
      xp(k) += 1e-4;
      xm(k) -= 1e-4;
      ev.log_joint_gradient(xp, gp);
      ev.log_joint_gradient(xm, gm);
      hess.col(k) = (gp - gm) / 2e-4;
    }
    x -= hess.ldlt().solve(g);
  }
  Eigen::VectorXd g;
  ev.log_joint_gradient(x, g);
  EXPECT_LE(g.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ModelLogJoint, TargetCellsNeverEnter) {
  const PanelDataset data = random_panel(3, 5, 1, 3, ValueKind::count, 10);
  const ModelSpec spec = build_model(config(Likelihood::poisson, 1), data);
  const ModelEvaluator ev(spec, data);
  for (int t = data.t0(); t < data.n_times(); ++t) {
    EXPECT_TRUE(std::isnan(ev.modelled_value(data.treated_unit(), t, 0)));
  }
  EXPECT_EQ(data.treated_post_reads(), 0u);
}

TEST(BuildModel, ShapesAndErrors) {
  ModelConfig c = config(Likelihood::poisson, 5);
  const ModelSpec spec = build_model(c, 50, 20, 1, 0);
  EXPECT_EQ(spec.beta.size, 250);
  EXPECT_EQ(spec.z_latent.size, 100);
  c.rank = 0;
  const ModelSpec r0 = build_model(c, 50, 20, 1, 0);
  EXPECT_FALSE(r0.beta.present());
  EXPECT_FALSE(r0.z_latent.present());
  EXPECT_FALSE(r0.log_rho_time.present());
  EXPECT_TRUE(r0.z_global.present());
  c.rank = 4;
  EXPECT_THROW(build_model(c, 3, 20, 1, 0), std::invalid_argument);
  EXPECT_THROW(parse_likelihood("student_t"), std::invalid_argument);
  EXPECT_EQ(parse_likelihood("gaussian_hetero"), Likelihood::gaussian);
}

TEST(BuildModel, PoissonRejectsRates) {
  const PanelDataset data = random_panel(3, 5, 1, 3, ValueKind::rate, 11);
  EXPECT_THROW(build_model(config(Likelihood::poisson, 1), data), std::invalid_argument);
}

TEST(BuildModel, PackUnpackRoundTrip) {
  const PanelDataset data = random_panel(4, 6, 2, 4, ValueKind::count, 12, 1);
  const ModelSpec spec = build_model(config(Likelihood::gaussian, 2, true), data);
  const Eigen::VectorXd x = random_point(spec, 5);
  EXPECT_LT((pack(spec, unpack(spec, x)) - x).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(spec.coordinate_names().size(), static_cast<std::size_t>(spec.dim));
}

TEST(Prior, IdentityLoadingsDecoupleUnits) {
  SeparableKernel k{SETimeKernel{2.0, 1.0}, LowRankUnitKernel{Eigen::MatrixXd::Identity(3, 3)}, {}};
  const std::vector<double> times{0, 1, 2};
  EXPECT_EQ(separable_eval(k, times, {0, 0, 0}, {1, 1, 0}), 0.0);
  EXPECT_GT(separable_eval(k, times, {0, 0, 0}, {0, 1, 0}), 0.0);
}

TEST(Prior, PredictiveDrawsHaveTheRightSupport) {
  const PanelDataset data = random_panel(5, 8, 1, 6, ValueKind::count, 13);
  for (Likelihood lik : {Likelihood::poisson, Likelihood::gaussian}) {
    const ModelSpec spec = build_model(config(lik, 2), data);
    CounterRng rng(3, 0);
    for (int rep = 0; rep < 5; ++rep) {
      Eigen::VectorXd x = sample_prior(spec, rng);
      x(spec.mu.offset) = lik == Likelihood::poisson ? 1.6 : 5.0;
      const PanelDataset sim = simulate_outcomes(spec, data, x, rng);
      EXPECT_EQ(sim.kind(), lik == Likelihood::poisson ? ValueKind::count : ValueKind::rate);
      const TreatedOutcomeReader reader(sim);
      for (int t = 0; t < sim.n_times(); ++t) {
        for (int i = 0; i < sim.n_units(); ++i) {
          const double v = sim.is_target(i, t) ? reader.value(t, 0) : sim.control_value(i, t, 0);
          if (lik == Likelihood::poisson) {
            EXPECT_GE(v, 0.0);
            EXPECT_EQ(v, std::floor(v));
          } else {
            EXPECT_TRUE(std::isfinite(v));
          }
        }
      }
    }
  }
}
