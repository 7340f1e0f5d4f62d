#ifndef MTGP_SAMPLER_HPP
#define MTGP_SAMPLER_HPP

#include "mtgp/model.hpp"
#include "mtgp/panel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtgp {

/// Target density for HMC: log density up to a constant and its gradient.
class LogDensity {
 public:
  virtual ~LogDensity() = default;
  virtual Eigen::Index dim() const = 0;
  /// Returns log p(x) and writes the gradient; a non-finite value rejects the proposal.
  virtual double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const = 0;
};

class ModelDensity final : public LogDensity {
 public:
  explicit ModelDensity(const ModelEvaluator& evaluator) : evaluator_(evaluator) {}
  Eigen::Index dim() const override { return evaluator_.dim(); }
  double log_density_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const override {
    return evaluator_.log_joint_gradient(x, grad);
  }

 private:
  const ModelEvaluator& evaluator_;
};

struct HmcSettings {
  int warmup = 1000;
  int iters = 1000;
  /// Nominal path length; each transition draws its step count uniformly from [L/2, 3L/2].
  int leapfrog_steps = 32;
  double target_accept = 0.8;
  /// Initial points are center + Uniform(-radius, radius) per coordinate.
  double init_radius = 2.0;
  /// Hamiltonian error (nats) beyond which a transition counts as divergent.
  double divergence_threshold = 1000.0;
  /// Fraction of post-warmup divergent transitions that flags the fit.
  double max_divergence_fraction = 0.1;
};

/// Adaptation state a chain carries between transitions.
struct ChainState {
  Eigen::VectorXd position;
  double step_size = 1.0;
  Eigen::VectorXd mass_diag;  // inverse metric (variance scale) per coordinate
  std::uint64_t seed = 0;
  int chain = 0;
  long iteration = 0;
};

struct ChainResult {
  Eigen::MatrixXd draws;  // iters x dim
  Eigen::VectorXd log_density;
  Eigen::VectorXd accept_stat;
  std::vector<char> divergent;
  ChainState final_state;
  int n_divergent() const;
};

/// One chain of adaptive HMC. Deterministic given (seed, chain).
ChainResult run_hmc(const LogDensity& target, const Eigen::VectorXd& init_center,
                    const HmcSettings& settings, std::uint64_t seed, int chain);

/// Post-warmup draws of all chains with provenance.
struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;  // per chain: iters x dim
  std::vector<Eigen::VectorXd> log_density;
  std::vector<Eigen::VectorXd> accept_stat;
  std::vector<std::vector<char>> divergent;
  std::vector<double> step_size;
  std::vector<Eigen::VectorXd> mass_diag;
  std::uint64_t seed = 0;
  int warmup = 0;
  bool unreliable = false;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_iters() const { return chains.empty() ? 0 : static_cast<int>(chains.front().rows()); }
  Eigen::Index dim() const { return chains.empty() ? 0 : chains.front().cols(); }
  int n_draws() const { return n_chains() * n_iters(); }
  int n_divergent() const;
  int divergent_in_chain(int chain) const;
  Eigen::Index index_of(const std::string& name) const;
  /// iters x chains matrix of one coordinate.
  Eigen::MatrixXd column(Eigen::Index coordinate) const;
  Eigen::MatrixXd column(const std::string& name) const { return column(index_of(name)); }
  /// Draw d in chain-major order (chain d / iters, iteration d % iters).
  Eigen::VectorXd draw(int d) const;
};

/// Runs n_chains chains in parallel (up to `jobs` threads). Requires warmup >= 100, iters >= 1.
PosteriorDraws run_chains(const LogDensity& target, const Eigen::VectorXd& init_center,
                          std::vector<std::string> names, int n_chains,
                          const HmcSettings& settings, std::uint64_t seed, int jobs);

/// Fits the model to the control cells of data.
PosteriorDraws run_chains(const ModelSpec& model, const PanelDataset& data, int n_chains,
                          int warmup, int iters, std::uint64_t seed, int jobs = 0);

class ConvergenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConvergenceStat {
  double value = 0.0;
  /// Set when every draw is identical: R-hat is then reported as 1 and ESS as 0.
  bool degenerate = false;
};

/// Rank-normalized split R-hat (max of bulk and folded) of an iters x chains matrix.
/// Needs at least two chains of at least four draws.
ConvergenceStat rhat(const Eigen::MatrixXd& draws);
ConvergenceStat rhat(const PosteriorDraws& draws, const std::string& param);
/// Rank-normalized bulk ESS with Geyer's initial monotone sequence truncation.
ConvergenceStat bulk_ess(const Eigen::MatrixXd& draws);
ConvergenceStat bulk_ess(const PosteriorDraws& draws, const std::string& param);

/// ESS of the raw (not rank-normalized) draws; the one that governs the error of a mean.
ConvergenceStat ess_mean(const Eigen::MatrixXd& draws);
/// sd / sqrt(ess_mean).
double mcse_mean(const Eigen::MatrixXd& draws);

}  // namespace mtgp

#endif  // MTGP_SAMPLER_HPP
