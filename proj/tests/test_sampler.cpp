#include "mtgp/sampler.hpp"

#include "mtgp/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mtgp;

namespace {

class Gaussian final : public LogDensity {
 public:
  Gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov)
      : mean_(std::move(mean)), precision_(cov.inverse()) {}
  Eigen::Index dim() const override { return mean_.size(); }
  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const override {
    const Eigen::VectorXd d = x - mean_;
    grad = -precision_ * d;
    return -0.5 * d.dot(precision_ * d);
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd precision_;
};

std::vector<std::string> names(int d) {
  std::vector<std::string> out;
  for (int k = 0; k < d; ++k) out.push_back("x" + std::to_string(k));
  return out;
}

HmcSettings settings(int warmup, int iters) {
  HmcSettings s;
  s.warmup = warmup;
  s.iters = iters;
  s.leapfrog_steps = 8;
  return s;
}

Eigen::MatrixXd iid_normal(int iters, int chains, std::uint64_t seed, double offset_per_chain = 0.0) {
  Eigen::MatrixXd m(iters, chains);
  for (int c = 0; c < chains; ++c) {
    CounterRng rng(seed, static_cast<std::uint64_t>(c));
    for (int i = 0; i < iters; ++i) m(i, c) = rng.normal() + offset_per_chain * c;
  }
  return m;
}

}  // namespace

TEST(Hmc, StandardNormalMomentsWithinMcse) {
  const int d = 5;
  const Gaussian target(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
  const PosteriorDraws draws =
      run_chains(target, Eigen::VectorXd::Zero(d), names(d), 4, settings(500, 1000), 11, 1);
  EXPECT_EQ(draws.n_draws(), 4000);
  EXPECT_FALSE(draws.unreliable);
  for (int k = 0; k < d; ++k) {
    const Eigen::MatrixXd col = draws.column(k);
    EXPECT_LT(std::abs(col.mean()), 4.0 * mcse_mean(col)) << "coordinate " << k;
    const Eigen::MatrixXd sq = col.array().square().matrix();
    EXPECT_LT(std::abs(sq.mean() - 1.0), 4.0 * mcse_mean(sq)) << "coordinate " << k;
    EXPECT_LT(rhat(col).value, 1.01);
  }
}

TEST(Hmc, CorrelatedTargetCovariance) {
  Eigen::Matrix2d cov;
  cov << 4.0, 1.8, 1.8, 1.0;
  Eigen::Vector2d mean(1.0, -2.0);
  const Gaussian target(mean, cov);
  const PosteriorDraws draws = run_chains(target, Eigen::VectorXd::Zero(2), names(2), 4,
                                          settings(1000, 2000), 5, 1);
  Eigen::MatrixXd all(draws.n_draws(), 2);
  for (int d = 0; d < draws.n_draws(); ++d) all.row(d) = draws.draw(d).transpose();
  const Eigen::RowVector2d m = all.colwise().mean();
  EXPECT_NEAR(m(0), 1.0, 0.15);
  EXPECT_NEAR(m(1), -2.0, 0.05);
  const Eigen::MatrixXd centered = all.rowwise() - m;
  const Eigen::Matrix2d s = centered.transpose() * centered / (all.rows() - 1.0);
  EXPECT_NEAR(s(0, 0), 4.0, 0.4);
  EXPECT_NEAR(s(1, 1), 1.0, 0.1);
  EXPECT_NEAR(s(0, 1) / std::sqrt(s(0, 0) * s(1, 1)), 0.9, 0.03);
}

TEST(Hmc, DeterministicGivenSeed) {
  const Gaussian target(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  const PosteriorDraws a = run_chains(target, Eigen::VectorXd::Zero(3), names(3), 2, settings(150, 50), 9, 1);
  const PosteriorDraws b = run_chains(target, Eigen::VectorXd::Zero(3), names(3), 2, settings(150, 50), 9, 2);
  const PosteriorDraws c = run_chains(target, Eigen::VectorXd::Zero(3), names(3), 2, settings(150, 50), 10, 1);
  for (int k = 0; k < 2; ++k) EXPECT_EQ(a.chains[k], b.chains[k]);
  EXPECT_NE(a.chains[0], c.chains[0]);
  EXPECT_NE(a.chains[0], a.chains[1]);
}

TEST(Hmc, RejectsShortWarmup) {
  const Gaussian target(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
  EXPECT_THROW(run_chains(target, Eigen::VectorXd::Zero(1), names(1), 2, settings(50, 10), 1, 1),
               std::invalid_argument);
}

TEST(Hmc, AdaptationIsScaleInvariant) {
  // Rescaling the target by 0.1 should rescale the adapted metric, not the step size.
  const Gaussian wide(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const Gaussian narrow(Eigen::VectorXd::Zero(2), 0.01 * Eigen::MatrixXd::Identity(2, 2));
  const ChainResult w = run_hmc(wide, Eigen::VectorXd::Zero(2), settings(400, 200), 3, 0);
  const ChainResult n = run_hmc(narrow, Eigen::VectorXd::Zero(2), settings(400, 200), 3, 0);
  EXPECT_NEAR(n.final_state.mass_diag.mean() / w.final_state.mass_diag.mean(), 0.01, 0.004);
  const double ratio = n.final_state.step_size / w.final_state.step_size;
  EXPECT_GT(ratio, 0.6);
  EXPECT_LT(ratio, 1.6);
  EXPECT_GT(n.accept_stat.mean(), 0.6);
}

TEST(Convergence, ConstantDrawsAreDegenerate) {
  const Eigen::MatrixXd m = Eigen::MatrixXd::Constant(100, 4, 2.5);
  const ConvergenceStat r = rhat(m);
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  const ConvergenceStat e = bulk_ess(m);
  EXPECT_TRUE(e.degenerate);
  EXPECT_DOUBLE_EQ(e.value, 0.0);
}

TEST(Convergence, RhatSeparatesMixedFromOffsetChains) {
  EXPECT_LT(rhat(iid_normal(1000, 4, 1)).value, 1.01);
  EXPECT_GT(rhat(iid_normal(1000, 4, 2, 3.0)).value, 2.0);
}

TEST(Convergence, IidEssNearDrawCount) {
  const double ess = bulk_ess(iid_normal(1000, 4, 3)).value;
  EXPECT_GT(ess, 3000.0);
  EXPECT_LT(ess, 5000.0);
  const double ess_m = ess_mean(iid_normal(1000, 4, 3)).value;
  EXPECT_GT(ess_m, 3000.0);
  EXPECT_LT(ess_m, 5000.0);
}

TEST(Convergence, Ar1EssMatchesTheory) {
  const double phi = 0.8;
  const int iters = 5000, chains = 4;
  Eigen::MatrixXd m(iters, chains);
  for (int c = 0; c < chains; ++c) {
    CounterRng rng(17, static_cast<std::uint64_t>(c));
    double x = rng.normal() / std::sqrt(1 - phi * phi);
    for (int i = 0; i < iters; ++i) {
      x = phi * x + rng.normal();
      m(i, c) = x;
    }
  }
  const double expected = iters * chains * (1 - phi) / (1 + phi);
  EXPECT_NEAR(bulk_ess(m).value / expected, 1.0, 0.3);
  EXPECT_NEAR(ess_mean(m).value / expected, 1.0, 0.3);
}

TEST(Convergence, NeedsTwoChains) {
  EXPECT_THROW(rhat(iid_normal(100, 1, 4)), ConvergenceError);
  EXPECT_THROW(bulk_ess(iid_normal(3, 2, 4)), ConvergenceError);
}
