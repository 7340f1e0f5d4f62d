#ifndef MTGP_LINALG_HPP
#define MTGP_LINALG_HPP

#include <Eigen/Dense>

#include <stdexcept>

namespace mtgp {

/// Dense symmetric matrix. Symmetry is checked where it matters (cholesky).
using SymmetricMatrix = Eigen::MatrixXd;

class LinalgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lower factor C with C*C^T = K + jitter*I.
struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;

  Eigen::Index order() const { return lower.rows(); }
};

/// Factor K, retrying with jitter base_jitter*10^k, k = 0..6, when K is not numerically PD.
/// The first attempt uses no jitter. Throws LinalgError naming the smallest eigenvalue
/// estimate when every rung fails.
CholeskyFactor cholesky(const SymmetricMatrix& k, double base_jitter = 1e-10);

/// Solves (K + jitter*I) x = b with two triangular solves.
Eigen::VectorXd solve_psd(const CholeskyFactor& factor, const Eigen::VectorXd& b);
Eigen::MatrixXd solve_psd(const CholeskyFactor& factor, const Eigen::MatrixXd& b);

/// (A (x) B) x without forming the Kronecker product.
///
/// vec is column stacking throughout the library: x = vec(X) with X of shape n x m
/// (n = rows of B, m = rows of A), and (A (x) B) vec(X) = vec(B X A^T).
Eigen::VectorXd kron_matvec(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const Eigen::VectorXd& x);

/// Explicit Kronecker product; for tests and small problems only.
Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Draw vec(f) ~ N(0, K_time (x) beta beta^T) from whitened z.
///
/// z holds T*J standard normals, column j (length T) driving latent u_j = C_time z_j.
/// Returns vec(f) of length N*T with f_it = sum_j beta_ij u_jt (unit index fastest).
Eigen::VectorXd kron_chol_sample(const CholeskyFactor& time_factor,
                                 const Eigen::MatrixXd& loadings, const Eigen::VectorXd& z);

/// Derivative of the Cholesky factor L of K along direction dK:
/// dL = L * Phi(L^{-1} dK L^{-T}), Phi taking the lower triangle with halved diagonal.
Eigen::MatrixXd cholesky_derivative(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& dk);

}  // namespace mtgp

#endif  // MTGP_LINALG_HPP
