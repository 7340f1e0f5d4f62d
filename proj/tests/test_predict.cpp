#include "mtgp/predict.hpp"

#include "mtgp/kernels.hpp"
#include "mtgp/weights.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mtgp;
using mtgp::testing::DenseGaussian;

namespace {

struct GaussianCase {
  PanelDataset data;
  ModelSpec spec;
  Eigen::VectorXd params;
};

GaussianCase gaussian_case(int rank, int outcomes, std::uint64_t seed) {
  PanelDataset data = mtgp::testing::random_panel(5, 6, outcomes, 4, ValueKind::rate, seed);
  if (outcomes > 1) data = data.with_masked({{2, 1, 1}});
  ModelConfig cfg;
  cfg.likelihood = Likelihood::gaussian;
  cfg.rank = rank;
  ModelSpec spec = build_model(cfg, data);
  Eigen::VectorXd x = mtgp::testing::random_point(spec, seed + 1, 0.4);
  return {std::move(data), std::move(spec), std::move(x)};
}

std::vector<Cell> prediction_cells(const PanelDataset& data) {
  std::vector<Cell> cells = target_cells(data);
  cells.push_back({1, 2, 0});  // observed control cell
  if (data.n_outcomes() > 1) cells.push_back({2, 1, 1});  // masked cell
  return cells;
}

}  // namespace

TEST(GaussianConditional, NoiselessInterpolation) {
  const std::vector<double> times{0, 1, 2, 3, 4};
  const Eigen::MatrixXd k = time_gram(SETimeKernel{1.0, 1.0}, times);
  const Eigen::VectorXd y = (Eigen::VectorXd(5) << 0.3, -1.0, 0.5, 2.0, 0.1).finished();
  const ConditionalGaussian c = gaussian_conditional(k, k.block(2, 2, 1, 1), k.col(2),
                                                     Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(1), y);
  EXPECT_NEAR(c.mean(0), 0.5, 1e-6);
  EXPECT_NEAR(c.cov(0, 0), 0.0, 1e-6);
}

TEST(GaussianConditional, VarianceShrinksWithMoreObservations) {
  const std::vector<double> times{0, 1, 2, 3, 4, 5, 6};
  const Eigen::MatrixXd k = time_gram(SETimeKernel{2.0, 1.3}, times);
  double previous = k(6, 6) + 0.1;
  for (int n = 1; n <= 6; ++n) {
    const ConditionalGaussian c = gaussian_conditional(
        k.topLeftCorner(n, n), k.block(6, 6, 1, 1), k.block(0, 6, n, 1), Eigen::VectorXd::Constant(n, 0.1),
        Eigen::VectorXd::Constant(1, 0.1), Eigen::VectorXd::Zero(n));
    EXPECT_LE(c.cov(0, 0), previous + 1e-12);
    EXPECT_GE(c.cov(0, 0), 0.1 - 1e-12);
    previous = c.cov(0, 0);
  }
  EXPECT_THROW(gaussian_conditional(k, k, k, Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(7),
                                    Eigen::VectorXd::Zero(7)),
               std::invalid_argument);
}

TEST(LatentConditional, LowRankMatchesDense) {
  for (int outcomes : {1, 2}) {
    const GaussianCase gc = gaussian_case(2, outcomes, 21 + outcomes);
    const ModelEvaluator ev(gc.spec, gc.data);
    const DenseGaussian dense(ev, gc.params);
    const std::vector<Cell> cells = prediction_cells(gc.data);
    const ConditionalGaussian low = latent_conditional(ev, gc.params, cells);
    const ConditionalGaussian ref = gaussian_conditional(
        dense.gram(dense.observed, dense.observed), dense.gram(cells, cells), dense.gram(dense.observed, cells),
        dense.noise, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cells.size())), dense.residual);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(k);
      EXPECT_NEAR(low.mean(c), dense.mean(cells[k]) + ref.mean(c), 1e-7) << "cell " << k;
    }
    EXPECT_LT((low.cov - ref.cov).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(LatentConditional, RankZeroIsTheMeanModel) {
  const GaussianCase gc = gaussian_case(0, 1, 5);
  const ModelEvaluator ev(gc.spec, gc.data);
  const DenseGaussian dense(ev, gc.params);
  const std::vector<Cell> cells = target_cells(gc.data);
  const ConditionalGaussian c = latent_conditional(ev, gc.params, cells);
  for (std::size_t k = 0; k < cells.size(); ++k) EXPECT_DOUBLE_EQ(c.mean(static_cast<Eigen::Index>(k)), dense.mean(cells[k]));
  EXPECT_EQ(c.cov.cwiseAbs().maxCoeff(), 0.0);
}

TEST(DrawWeights, MatchDenseClosedFormAndReproduceTheMean) {
  const GaussianCase gc = gaussian_case(2, 2, 31);
  const ModelEvaluator ev(gc.spec, gc.data);
  const DenseGaussian dense(ev, gc.params);
  const std::vector<Cell> targets = target_cells(gc.data);
  const DrawWeights w = draw_weights(ev, gc.params, targets);
  ASSERT_EQ(w.control.size(), dense.observed.size());
  Eigen::MatrixXd ky = dense.gram(dense.observed, dense.observed);
  ky.diagonal() += dense.noise;
  const Eigen::MatrixXd ref = ky.ldlt().solve(dense.gram(dense.observed, targets));
  EXPECT_LT((w.weights - ref).cwiseAbs().maxCoeff(), 1e-6);
  const ConditionalGaussian post = latent_conditional(ev, gc.params, targets);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    const double via_weights = w.mean_target(c) + w.weights.col(c).dot(w.y - w.mean_control);
    EXPECT_NEAR(via_weights, post.mean(c), 1e-7);
  }
}

TEST(PredictiveDraws, GaussianMomentsMatchConditional) {
  const GaussianCase gc = gaussian_case(2, 1, 41);
  const ModelEvaluator ev(gc.spec, gc.data);
  const Eigen::MatrixXd chain = gc.params.transpose().replicate(3000, 1);
  const PosteriorDraws draws = mtgp::testing::fake_draws(gc.spec, {chain});
  const std::vector<Cell> cells = target_cells(gc.data);
  const CounterfactualDraws cf = predictive_draws(draws, gc.spec, gc.data, cells, 3, 1);
  const ConditionalGaussian post = latent_conditional(ev, gc.params, cells);
  const ModelState s = unpack(gc.spec, gc.params);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    const double var = post.cov(c, c) + ev.noise_variance(s.sigma(0), cells[k].unit, cells[k].time);
    const Eigen::VectorXd col = cf.values.col(c);
    EXPECT_NEAR(col.mean(), post.mean(c), 4.0 * std::sqrt(var / col.size()));
    const double sample_var = (col.array() - col.mean()).square().sum() / (col.size() - 1.0);
    EXPECT_NEAR(sample_var / var, 1.0, 0.1);
  }
}

TEST(PredictiveDraws, PoissonDrawsAreCountsAndJobIndependent) {
  const PanelDataset data = mtgp::testing::random_panel(4, 5, 1, 3, ValueKind::count, 51);
  ModelConfig cfg;
  cfg.rank = 1;
  const ModelSpec spec = build_model(cfg, data);
  Eigen::MatrixXd chain(20, spec.dim);
  for (int r = 0; r < 20; ++r) {
    Eigen::VectorXd x = mtgp::testing::random_point(spec, 100 + r, 0.3);
    x(spec.mu.offset) = 1.6;
    chain.row(r) = x.transpose();
  }
  const PosteriorDraws draws = mtgp::testing::fake_draws(spec, {chain, chain});
  const CounterfactualDraws a = impute_counterfactuals(draws, spec, data, 8, 1);
  const CounterfactualDraws b = impute_counterfactuals(draws, spec, data, 8, 3);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.cells.size(), 2u);
  EXPECT_EQ(a.n_draws(), 40);
  for (Eigen::Index k = 0; k < a.values.size(); ++k) {
    const double v = a.values.data()[k];
    EXPECT_GE(v, 0.0);
    EXPECT_EQ(v, std::floor(v));
  }
  EXPECT_EQ(data.treated_post_reads(), 0u);
  EXPECT_EQ(a.chain[25], 1);
  EXPECT_EQ(a.iteration[25], 5);
}

TEST(PredictiveDraws, RejectsCellsOffTheGrid) {
  const GaussianCase gc = gaussian_case(1, 1, 61);
  const ModelEvaluator ev(gc.spec, gc.data);
  EXPECT_THROW(latent_conditional(ev, gc.params, {{9, 0, 0}}), std::invalid_argument);
}
