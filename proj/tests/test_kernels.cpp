#include "mtgp/kernels.hpp"

#include "mtgp/linalg.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mtgp;

TEST(SEKernel, ValuesUseTwoRhoDenominator) {
  const SETimeKernel k{2.0, 1.5};
  EXPECT_DOUBLE_EQ(se_eval(k, 3.0, 3.0), 2.25);
  EXPECT_NEAR(se_eval(k, 0.0, 2.0), 2.25 * std::exp(-4.0 / 4.0), 1e-15);
  EXPECT_THROW(se_eval(SETimeKernel{0.0, 1.0}, 0, 1), std::invalid_argument);
}

TEST(SEKernel, GramIsSymmetricPositiveDefinite) {
  const std::vector<double> times{0, 1, 2, 3, 4, 5};
  const Eigen::MatrixXd k = time_gram(SETimeKernel{1.0, 1.0}, times);
  EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NO_THROW(cholesky(k));
}

TEST(SeparableKernel, GramMatchesKronecker) {
  const std::vector<double> times{0, 1, 2};
  Eigen::MatrixXd beta(2, 1);
  beta << 1.0, -0.5;
  const SeparableKernel k{SETimeKernel{1.3, 0.8}, LowRankUnitKernel{beta}, {}};
  std::vector<Cell> cells;
  for (int t = 0; t < 3; ++t) {
    for (int i = 0; i < 2; ++i) cells.push_back({i, t, 0});
  }
  const Eigen::MatrixXd g = gram(k, times, cells, cells);
  const Eigen::MatrixXd expected = kron(time_gram(k.time, times), k.unit.gram());
  EXPECT_LT((g - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(separable_eval(k, times, cells[1], cells[4]), expected(1, 4), 1e-15);
}

TEST(SeparableKernel, OutcomeBlock) {
  const std::vector<double> times{0, 1};
  Eigen::MatrixXd z(2, 2);
  z << 1.0, 0.0, 0.6, 0.8;
  SeparableKernel k{SETimeKernel{1.0, 1.0}, LowRankUnitKernel{Eigen::MatrixXd::Identity(2, 2)}, OutcomeKernel{z}};
  EXPECT_NEAR(separable_eval(k, times, {0, 0, 0}, {0, 0, 1}), 0.6, 1e-15);
  k.outcome.reset();
  EXPECT_EQ(separable_eval(k, times, {0, 0, 0}, {0, 0, 1}), 0.0);
}

TEST(SeparableKernel, IdentityTimeKernelMakesLatentsIndependentAcrossTime) {
  // With a vanishing lengthscale the time Gram tends to the identity (linear factor model).
  const std::vector<double> times{0, 1, 2, 3};
  const Eigen::MatrixXd kt = time_gram(SETimeKernel{1e-4, 1.0}, times);
  EXPECT_LT((kt - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-100);
}
