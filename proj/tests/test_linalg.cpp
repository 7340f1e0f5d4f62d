#include "mtgp/linalg.hpp"

#include "mtgp/kernels.hpp"
#include "mtgp/rng.hpp"

#include <gtest/gtest.h>

using namespace mtgp;

namespace {

Eigen::MatrixXd random_spd(int n, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  }
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vec(int n, std::uint64_t seed) {
  CounterRng rng(seed, 2);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

}  // namespace

TEST(Cholesky, FactorsAndSolves) {
  const Eigen::MatrixXd k = random_spd(6, 1);
  const CholeskyFactor f = cholesky(k);
  EXPECT_EQ(f.jitter, 0.0);
  EXPECT_LT((f.lower * f.lower.transpose() - k).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd b = random_vec(6, 3);
  EXPECT_LT((k * solve_psd(f, b) - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Cholesky, JitterLadderRescuesSemidefinite) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Ones(4, 4);  // rank 1
  const CholeskyFactor f = cholesky(k);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_LE(f.jitter, 1e-4);
}

TEST(Cholesky, IndefiniteNamesSmallestEigenvalue) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Identity(3, 3);
  k(2, 2) = -1.0;
  try {
    cholesky(k);
    FAIL();
  } catch (const LinalgError& e) {
    EXPECT_NE(std::string(e.what()).find("smallest eigenvalue"), std::string::npos);
  }
  Eigen::MatrixXd asym = Eigen::MatrixXd::Identity(2, 2);
  asym(0, 1) = 0.5;
  EXPECT_THROW(cholesky(asym), LinalgError);
}

TEST(Kron, MatvecMatchesExplicitProduct) {
  for (int rep = 0; rep < 10; ++rep) {
    const int m = 2 + rep % 3, n = 3 + rep % 4;
    const Eigen::MatrixXd a = random_spd(m, 10 + rep), b = random_spd(n, 20 + rep);
    const Eigen::VectorXd x = random_vec(m * n, 30 + rep);
    EXPECT_LT((kron_matvec(a, b, x) - kron(a, b) * x).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_THROW(kron_matvec(random_spd(2, 1), random_spd(3, 1), random_vec(5, 1)), LinalgError);
}

TEST(Kron, CholSampleHasKroneckerCovariance) {
  // Cov(vec f) = C_t C_t^T (x) beta beta^T exactly, checked through the linear map.
  const std::vector<double> times{0, 1, 2, 3};
  const Eigen::MatrixXd kt = time_gram(SETimeKernel{1.5, 1.2}, times);
  const CholeskyFactor ct = cholesky(kt);
  Eigen::MatrixXd beta(3, 2);
  beta << 1, 0.5, -0.3, 1, 0.2, 0.2;
  Eigen::MatrixXd map(12, 8);
  for (int k = 0; k < 8; ++k) map.col(k) = kron_chol_sample(ct, beta, Eigen::VectorXd::Unit(8, k));
  const Eigen::MatrixXd cov = map * map.transpose();
  EXPECT_LT((cov - kron(kt, beta * beta.transpose())).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Cholesky, DerivativeMatchesFiniteDifference) {
  const Eigen::MatrixXd k = random_spd(5, 7);
  Eigen::MatrixXd dk = random_spd(5, 8);
  const Eigen::MatrixXd dl = cholesky_derivative(cholesky(k).lower, dk);
  const double h = 1e-6;
  const Eigen::MatrixXd fd = (cholesky(k + h * dk).lower - cholesky(k - h * dk).lower) / (2 * h);
  EXPECT_LT((dl - fd).cwiseAbs().maxCoeff(), 1e-6);
}
