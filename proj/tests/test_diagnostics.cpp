#include "mtgp/diagnostics.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mtgp;

namespace {

ModelConfig small_config(Likelihood lik) {
  ModelConfig cfg;
  cfg.likelihood = lik;
  cfg.rank = 1;
  cfg.chains = 2;
  cfg.warmup = 100;
  cfg.iters = 20;
  cfg.leapfrog_steps = 8;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST(PpcPValue, CountsTiesAsHalf) {
  const Eigen::VectorXd obs = Eigen::VectorXd::Constant(4, 1.0);
  const Eigen::VectorXd rep = (Eigen::VectorXd(4) << 0.0, 1.0, 2.0, 3.0).finished();
  EXPECT_DOUBLE_EQ(ppc_p_value(obs, rep), 2.5 / 4.0);
  EXPECT_DOUBLE_EQ(ppc_p_value(obs, obs), 0.5);
  EXPECT_THROW(ppc_p_value(obs, rep.head(2)), std::invalid_argument);
}

TEST(IntervalCoverage, MonotoneInLevelAndCompleteAtOne) {
  const PanelDataset data = mtgp::testing::random_panel(4, 6, 1, 4, ValueKind::count, 1);
  ModelConfig cfg = small_config(Likelihood::poisson);
  const ModelSpec spec = build_model(cfg, data);
  Eigen::MatrixXd chain(200, spec.dim);
  for (int r = 0; r < 200; ++r) {
    Eigen::VectorXd x = mtgp::testing::random_point(spec, 10 + r, 0.2);
    x(spec.mu.offset) = 1.6;
    chain.row(r) = x.transpose();
  }
  const PosteriorDraws draws = mtgp::testing::fake_draws(spec, {chain});
  const std::vector<double> cov = interval_coverage(draws, spec, data, {0.1, 0.2, 0.5, 0.8, 0.95, 1.0}, 3);
  for (std::size_t k = 1; k < cov.size(); ++k) EXPECT_GE(cov[k], cov[k - 1]);
  EXPECT_DOUBLE_EQ(cov.back(), 1.0);
  const PPCResult ppc = ppc_rmse(draws, spec, data, 3);
  EXPECT_GE(ppc.p_value, 0.0);
  EXPECT_LE(ppc.p_value, 1.0);
  EXPECT_EQ(ppc.observed.size(), 200);
  const std::vector<ImbalanceYear> years = ppc_imbalance(draws, spec, data, 3);
  ASSERT_EQ(years.size(), 4u);
  EXPECT_EQ(years[2].time_id, 2002);
  EXPECT_EQ(data.treated_post_reads(), 0u);
}

TEST(Refits, PlaceboRequiresAnEarlierWindow) {
  const PanelDataset data = mtgp::testing::random_panel(4, 6, 1, 4, ValueKind::rate, 2);
  const ModelConfig cfg = small_config(Likelihood::gaussian);
  EXPECT_THROW(in_time_placebo(cfg, data, 4), std::invalid_argument);
  EXPECT_THROW(in_time_placebo(cfg, data, 1), std::invalid_argument);
  const PlaceboResult p = in_time_placebo(cfg, data, 2, 1);
  EXPECT_EQ(p.effect.tau.cols(), 2);
  EXPECT_EQ(p.effect.tau.rows(), 40);
  EXPECT_EQ(p.effect.time_ids.front(), 2002);
  EXPECT_EQ(data.treated_post_reads(), 0u);
}

TEST(Refits, LeaveOneOutShapes) {
  const PanelDataset data = mtgp::testing::random_panel(4, 6, 1, 4, ValueKind::rate, 3, 0, 1);
  const ModelConfig cfg = small_config(Likelihood::gaussian);
  const std::vector<LooRefit> refits = leave_one_out(cfg, data, 1);
  ASSERT_EQ(refits.size(), 3u);
  EXPECT_EQ(refits[0].dropped_id, "u00");
  EXPECT_EQ(refits[1].dropped_id, "u02");
  EXPECT_EQ(data.treated_post_reads(), 0u);
  for (const auto& r : refits) {
    EXPECT_EQ(r.counterfactual.cells.size(), 2u);
    EXPECT_EQ(r.counterfactual.n_draws(), 40);
  }
  const std::vector<LooEffect> effects = loo_effects(refits, data);
  ASSERT_EQ(effects.size(), 3u);
  EXPECT_EQ(effects[2].effect.per_period.size(), 2u);
  EXPECT_GT(data.treated_post_reads(), 0u);
}

TEST(Refits, SummaryWithOneChainHasNoRhat) {
  const PanelDataset data = mtgp::testing::random_panel(3, 5, 1, 3, ValueKind::rate, 4);
  const ModelSpec spec = build_model(small_config(Likelihood::gaussian), data);
  const Eigen::MatrixXd chain = Eigen::MatrixXd::Zero(10, spec.dim);
  EXPECT_TRUE(std::isnan(summarize_fit(mtgp::testing::fake_draws(spec, {chain})).max_rhat));
}
