#include "mtgp/linalg.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace mtgp {

CholeskyFactor cholesky(const SymmetricMatrix& k, double base_jitter) {
  if (k.rows() != k.cols() || k.rows() < 1) {
    throw LinalgError("cholesky: matrix must be square with order >= 1");
  }
  if (!k.allFinite()) throw LinalgError("cholesky: matrix has non-finite entries");
  const double scale = std::max(k.cwiseAbs().maxCoeff(), 1e-300);
  if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw LinalgError("cholesky: matrix is not symmetric");
  }
  const Eigen::Index n = k.rows();
  Eigen::MatrixXd work = k;
  for (int rung = -1; rung <= 6; ++rung) {
    const double jitter = rung < 0 ? 0.0 : base_jitter * std::pow(10.0, rung);
    if (rung >= 0) work.diagonal() = k.diagonal().array() + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd lower = llt.matrixL();
      if ((lower.diagonal().array() > 0.0).all() && lower.allFinite()) {
        return {std::move(lower), jitter};
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "cholesky: failed at jitter " << base_jitter * 1e6 << " on order-" << n
      << " matrix; smallest eigenvalue estimate " << eig.eigenvalues()(0);
  throw LinalgError(msg.str());
}

Eigen::VectorXd solve_psd(const CholeskyFactor& factor, const Eigen::VectorXd& b) {
  if (b.size() != factor.order()) throw LinalgError("solve_psd: dimension mismatch");
  const auto lower = factor.lower.triangularView<Eigen::Lower>();
  Eigen::VectorXd y = lower.solve(b);
  return lower.transpose().solve(y);
}

Eigen::MatrixXd solve_psd(const CholeskyFactor& factor, const Eigen::MatrixXd& b) {
  if (b.rows() != factor.order()) throw LinalgError("solve_psd: dimension mismatch");
  const auto lower = factor.lower.triangularView<Eigen::Lower>();
  Eigen::MatrixXd y = lower.solve(b);
  return lower.transpose().solve(y);
}

Eigen::VectorXd kron_matvec(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const Eigen::VectorXd& x) {
  if (a.rows() != a.cols() || b.rows() != b.cols()) {
    throw LinalgError("kron_matvec: factors must be square");
  }
  const Eigen::Index m = a.rows();
  const Eigen::Index n = b.rows();
  if (x.size() != m * n) throw LinalgError("kron_matvec: dimension mismatch");
  const Eigen::Map<const Eigen::MatrixXd> xm(x.data(), n, m);
  Eigen::MatrixXd out = b * xm * a.transpose();
  return Eigen::Map<Eigen::VectorXd>(out.data(), out.size());
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Eigen::VectorXd kron_chol_sample(const CholeskyFactor& time_factor,
                                 const Eigen::MatrixXd& loadings, const Eigen::VectorXd& z) {
  const Eigen::Index t = time_factor.order();
  const Eigen::Index j = loadings.cols();
  if (z.size() != t * j) throw LinalgError("kron_chol_sample: z must have length T*J");
  const Eigen::Map<const Eigen::MatrixXd> zm(z.data(), t, j);
  // U is T x J with columns u_j; f = beta U^T is N x T.
  const Eigen::MatrixXd u = time_factor.lower.triangularView<Eigen::Lower>() * zm;
  Eigen::MatrixXd f = loadings * u.transpose();
  return Eigen::Map<Eigen::VectorXd>(f.data(), f.size());
}

Eigen::MatrixXd cholesky_derivative(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& dk) {
  const auto l = lower.triangularView<Eigen::Lower>();
  Eigen::MatrixXd tmp = l.solve(dk);
  Eigen::MatrixXd inner = l.solve(tmp.transpose()).transpose();
  Eigen::MatrixXd phi = inner.triangularView<Eigen::StrictlyLower>();
  phi.diagonal() = 0.5 * inner.diagonal();
  return lower * phi;
}

}  // namespace mtgp
