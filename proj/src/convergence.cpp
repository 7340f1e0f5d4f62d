#include "mtgp/sampler.hpp"

#include <boost/math/distributions/normal.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

namespace mtgp {

namespace {

void check_shape(const Eigen::MatrixXd& draws) {
  if (draws.cols() < 2) throw ConvergenceError("R-hat/ESS need at least two chains");
  if (draws.rows() < 4) throw ConvergenceError("R-hat/ESS need at least four draws per chain");
}

bool all_identical(const Eigen::MatrixXd& draws) {
  return (draws.array() == draws(0, 0)).all();
}

// Halves of every chain as separate columns; the middle draw of an odd chain is dropped.
Eigen::MatrixXd split_chains(const Eigen::MatrixXd& draws) {
  const Eigen::Index half = draws.rows() / 2;
  Eigen::MatrixXd out(half, 2 * draws.cols());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    out.col(2 * c) = draws.col(c).head(half);
    out.col(2 * c + 1) = draws.col(c).tail(half);
  }
  return out;
}

// Normal scores of the pooled average ranks: Phi^-1((r - 3/8) / (S + 1/4)).
Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& draws) {
  const Eigen::Index s = draws.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  const double* v = draws.data();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::MatrixXd out(draws.rows(), draws.cols());
  const boost::math::normal_distribution<double> normal;
  Eigen::Index k = 0;
  while (k < s) {
    Eigen::Index e = k;
    while (e + 1 < s && v[order[e + 1]] == v[order[k]]) ++e;
    const double rank = 0.5 * static_cast<double>(k + e) + 1.0;
    const double z = boost::math::quantile(normal, (rank - 0.375) / (static_cast<double>(s) + 0.25));
    for (Eigen::Index q = k; q <= e; ++q) out.data()[order[q]] = z;
    k = e + 1;
  }
  return out;
}

double split_rhat_raw(const Eigen::MatrixXd& chains) {
  const double n = static_cast<double>(chains.rows());
  const Eigen::VectorXd means = chains.colwise().mean();
  Eigen::VectorXd vars(chains.cols());
  for (Eigen::Index c = 0; c < chains.cols(); ++c) {
    vars(c) = (chains.col(c).array() - means(c)).square().sum() / (n - 1.0);
  }
  const double w = vars.mean();
  const double b = n * (means.array() - means.mean()).square().sum() / (static_cast<double>(chains.cols()) - 1.0);
  if (w <= 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

// Biased autocovariance of one chain via FFT, lags 0..n-1.
Eigen::VectorXd autocovariance(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::Index m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<double> padded(static_cast<std::size_t>(m), 0.0);
  const double mean = x.mean();
  for (Eigen::Index k = 0; k < n; ++k) padded[static_cast<std::size_t>(k)] = x(k) - mean;
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> back;
  fft.inv(back, freq);
  Eigen::VectorXd acov(n);
  for (Eigen::Index k = 0; k < n; ++k) acov(k) = back[static_cast<std::size_t>(k)] / static_cast<double>(n);
  return acov;
}

// Multi-chain ESS with Geyer's initial positive/monotone sequence, as in Stan.
double ess_of_chains(const Eigen::MatrixXd& chains) {
  const Eigen::Index n = chains.rows();
  const Eigen::Index m = chains.cols();
  const double nd = static_cast<double>(n);
  Eigen::MatrixXd acov(n, m);
  Eigen::VectorXd chain_mean(m), chain_var(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    acov.col(c) = autocovariance(chains.col(c));
    chain_mean(c) = chains.col(c).mean();
    chain_var(c) = acov(0, c) * nd / (nd - 1.0);
  }
  const double mean_var = chain_var.mean();
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) var_plus += (chain_mean.array() - chain_mean.mean()).square().sum() / (static_cast<double>(m) - 1.0);
  if (!(var_plus > 0.0)) return 0.0;

  Eigen::VectorXd rho = Eigen::VectorXd::Zero(n);
  const auto rho_at = [&](Eigen::Index t) { return 1.0 - (mean_var - acov.row(t).mean()) / var_plus; };
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho(0) = 1.0;
  rho(1) = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 5 && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(t + 1);
    rho_odd = rho_at(t + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho(t + 1) = rho_even;
      rho(t + 2) = rho_odd;
    }
    t += 2;
  }
  const Eigen::Index max_t = t;
  if (rho_even > 0.0 && max_t + 1 < n) rho(max_t + 1) = rho_even;
  for (Eigen::Index k = 1; k <= max_t - 3; k += 2) {
    if (rho(k + 1) + rho(k + 2) > rho(k - 1) + rho(k)) {
      rho(k + 1) = 0.5 * (rho(k - 1) + rho(k));
      rho(k + 2) = rho(k + 1);
    }
  }
  const double total = static_cast<double>(m) * nd;
  double tau = -1.0 + 2.0 * rho.head(std::min(max_t + 1, n)).sum();
  if (max_t + 1 < n) tau += rho(max_t + 1);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

}  // namespace

ConvergenceStat rhat(const Eigen::MatrixXd& draws) {
  check_shape(draws);
  if (all_identical(draws)) return {1.0, true};
  const Eigen::MatrixXd split = split_chains(draws);
  const double bulk = split_rhat_raw(rank_normalize(split));
  double median = 0.0;
  {
    std::vector<double> v(split.data(), split.data() + split.size());
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    median = v[v.size() / 2];
    if (v.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2)));
    }
  }
  const Eigen::MatrixXd folded = (split.array() - median).abs().matrix();
  const double tail = split_rhat_raw(rank_normalize(folded));
  return {std::max(bulk, tail), false};
}

ConvergenceStat bulk_ess(const Eigen::MatrixXd& draws) {
  check_shape(draws);
  if (all_identical(draws)) return {0.0, true};
  return {ess_of_chains(rank_normalize(split_chains(draws))), false};
}

ConvergenceStat ess_mean(const Eigen::MatrixXd& draws) {
  check_shape(draws);
  if (all_identical(draws)) return {0.0, true};
  return {ess_of_chains(split_chains(draws)), false};
}

double mcse_mean(const Eigen::MatrixXd& draws) {
  const ConvergenceStat ess = ess_mean(draws);
  if (ess.degenerate) return 0.0;
  const double mean = draws.mean();
  const double sd = std::sqrt((draws.array() - mean).square().sum() / (static_cast<double>(draws.size()) - 1.0));
  return sd / std::sqrt(ess.value);
}

ConvergenceStat rhat(const PosteriorDraws& draws, const std::string& param) {
  return rhat(draws.column(param));
}

ConvergenceStat bulk_ess(const PosteriorDraws& draws, const std::string& param) {
  return bulk_ess(draws.column(param));
}

}  // namespace mtgp
