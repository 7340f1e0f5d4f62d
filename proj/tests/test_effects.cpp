#include "mtgp/effects.hpp"

#include "mtgp/rng.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mtgp;

namespace {

// Counterfactual draws on the treated unit's post cells, values given as rates.
CounterfactualDraws rate_draws(const PanelDataset& data, const Eigen::MatrixXd& values) {
  CounterfactualDraws cf;
  cf.cells = target_cells(data);
  cf.likelihood = Likelihood::gaussian;
  cf.values = values;
  cf.latent_rate = values;
  cf.chain.assign(static_cast<std::size_t>(values.rows()), 0);
  for (Eigen::Index d = 0; d < values.rows(); ++d) cf.iteration.push_back(static_cast<int>(d));
  return cf;
}

Eigen::VectorXd observed_post(const PanelDataset& data) {
  const TreatedOutcomeReader reader(data);
  Eigen::VectorXd y(data.n_times() - data.t0());
  for (int t = data.t0(); t < data.n_times(); ++t) y(t - data.t0()) = reader.value(t, 0);
  return y;
}

}  // namespace

TEST(Summarize, TiesCountHalf) {
  const EffectSummary s = summarize((Eigen::VectorXd(4) << -1.0, 0.0, 0.0, 2.0).finished());
  EXPECT_DOUBLE_EQ(s.prob_negative, 0.5);
  EXPECT_DOUBLE_EQ(s.mean, 0.25);
  EXPECT_DOUBLE_EQ(s.median, 0.0);
  EXPECT_THROW(summarize(Eigen::VectorXd()), std::invalid_argument);
}

TEST(EffectPosterior, NullEffectIsCentered) {
  // Symmetric counterfactual draws around the observed values give P(tau < 0) = 1/2.
  const PanelDataset data = mtgp::testing::random_panel(4, 6, 1, 4, ValueKind::rate, 1);
  const Eigen::VectorXd y = observed_post(data);
  Eigen::MatrixXd v(200, 2);
  for (int d = 0; d < 100; ++d) {
    const double e = 0.01 * (d + 1);
    v.row(2 * d) = y.transpose().array() + e;
    v.row(2 * d + 1) = y.transpose().array() - e;
  }
  const EffectPosterior e = effect_posterior(rate_draws(data, v), data);
  EXPECT_DOUBLE_EQ(e.average.prob_negative, 0.5);
  EXPECT_NEAR(e.average.mean, 0.0, 1e-12);
  EXPECT_EQ(e.time_ids.back(), 2005);
}

TEST(EffectPosterior, ShiftsTranslateTheEffect) {
  const PanelDataset data = mtgp::testing::random_panel(4, 6, 1, 4, ValueKind::rate, 2);
  CounterRng rng(3, 0);
  Eigen::MatrixXd v(50, 2);
  for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = 5.0 + rng.normal();
  const EffectPosterior a = effect_posterior(rate_draws(data, v), data);
  const EffectPosterior b = effect_posterior(rate_draws(data, (v.array() + 1.5).matrix()), data);
  EXPECT_LT((a.tau.array() - 1.5 - b.tau.array()).abs().maxCoeff(), 1e-12);
  EXPECT_NEAR(a.average.median - 1.5, b.average.median, 1e-12);
  EXPECT_NEAR(a.average.lo95 - 1.5, b.average.lo95, 1e-12);
  // The average effect is linear in the per-period effects.
  EXPECT_LT((a.tau_avg - a.tau.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EffectPosterior, CountsAreConvertedToRates) {
  const PanelDataset data = mtgp::testing::random_panel(3, 5, 1, 3, ValueKind::count, 4);
  CounterfactualDraws cf = rate_draws(data, Eigen::MatrixXd::Constant(3, 2, 10.0));
  cf.likelihood = Likelihood::poisson;
  const EffectPosterior e = effect_posterior(cf, data);
  const double expected = 10.0 * kRatePer / data.population(0, 3);
  EXPECT_NEAR(e.counterfactual(0, 0), expected, 1e-12);
  EXPECT_EQ(data.treated_post_reads(), 2u);
}

TEST(EffectPosterior, MultiOutcomeNeedsTwoOutcomes) {
  const PanelDataset one = mtgp::testing::random_panel(3, 5, 1, 3, ValueKind::rate, 5);
  EXPECT_THROW(multi_outcome_effects(rate_draws(one, Eigen::MatrixXd::Zero(2, 2)), one), std::invalid_argument);
  const PanelDataset two = mtgp::testing::random_panel(3, 5, 2, 3, ValueKind::rate, 5);
  const auto effects = multi_outcome_effects(rate_draws(two, Eigen::MatrixXd::Ones(2, 4)), two);
  ASSERT_EQ(effects.size(), 2u);
  EXPECT_EQ(effects[1].outcome, 1);
  EXPECT_EQ(effects[1].tau.cols(), 2);
}

TEST(Cost, WorkedExample) {
  // 0.32 fewer per 100k in a population of 39.6 million is 126.72 events avoided.
  const double cost = cost_per_avoided(-0.32, 11.3e6, 39.6e6);
  EXPECT_NEAR(11.3e6 / cost, 126.72, 1e-9);
  EXPECT_NEAR(cost, 89173.0, 1.0);
  EXPECT_TRUE(std::isinf(cost_per_avoided(0.0, 1.0, 1.0)));
  EXPECT_TRUE(std::isinf(cost_per_avoided(0.4, 1.0, 1.0)));
  EXPECT_THROW(cost_per_avoided(-1.0, 0.0, 1.0), std::invalid_argument);
}

TEST(Cost, PosteriorTracksInfiniteMass) {
  const Eigen::VectorXd tau = (Eigen::VectorXd(4) << -1.0, -2.0, 0.5, -0.5).finished();
  const CostPosterior c = cost_per_avoided(tau, 1e6, 1e5);
  EXPECT_DOUBLE_EQ(c.infinite_mass, 0.25);
  EXPECT_TRUE(std::isinf(c.hi95));
  EXPECT_DOUBLE_EQ(c.cost(1), 5e5);
  // Cost is monotone in |tau|, so the median maps through.
  EXPECT_NEAR(c.median, (1e6 + 2e6) / 2.0, 1e-6);
}
