#ifndef MTGP_MODEL_HPP
#define MTGP_MODEL_HPP

#include "mtgp/panel.hpp"
#include "mtgp/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mtgp {

enum class Likelihood { gaussian, poisson };

/// Gaussian noise variance at (i,t) is sigma^2 / h(N_it) with N in population_unit persons.
enum class Heteroskedasticity { sqrt_population, population, none };

struct InvGammaPrior {
  double shape = 5.0;
  double scale = 5.0;
};

struct PriorSpec {
  InvGammaPrior rho_time;
  InvGammaPrior rho_global;
  double alpha_time_sd = 1.0;    // half-normal
  double alpha_global_sd = 1.0;  // half-normal
  double sigma_sd = 1.0;         // half-normal
  double beta_sd = 1.0;
  double nu_sd = 1.0;
  double eta_sd = 1.0;
  double outcome_factor_sd = 1.0;
  double mu_mean = 0.0;
  double mu_sd = 10.0;
};

struct MeanModelFlags {
  bool unit_intercepts = true;
  bool global_trend = true;
  bool covariates = false;
};

/// Hyperparameters held at known values; a fixed block leaves the sampled state.
struct FixedParameters {
  std::optional<double> rho_time;
  std::optional<double> alpha_time;
  std::optional<double> rho_global;
  std::optional<double> alpha_global;
  std::optional<Eigen::VectorXd> sigma;     // per outcome
  std::optional<Eigen::MatrixXd> loadings;  // N x J
  std::optional<Eigen::VectorXd> mu;        // per outcome
  std::optional<Eigen::MatrixXd> nu;        // N x L
};

struct ModelConfig {
  Likelihood likelihood = Likelihood::poisson;
  int rank = 5;
  MeanModelFlags mean_model;
  Heteroskedasticity heteroskedasticity = Heteroskedasticity::sqrt_population;
  double population_unit = kRatePer;
  PriorSpec priors;
  FixedParameters fixed;

  std::uint64_t seed = 1;
  int chains = 4;
  int warmup = 1000;
  int iters = 1000;
  int leapfrog_steps = 32;
  double target_accept = 0.8;
  double init_radius = 2.0;
  int jobs = 1;

  // Panel selection; used by the CLI when loading data.
  std::string treated_unit;
  std::optional<int> t0;
  std::optional<long> last_pre_time;
  std::optional<ValueKind> value_kind;
};

/// One contiguous block of the unconstrained parameter vector.
struct ParameterBlock {
  std::string name;
  Eigen::Index offset = -1;
  Eigen::Index size = 0;

  bool present() const { return offset >= 0; }
};

/// Validated model shape and the layout of the unconstrained state.
///
/// Layout: log_rho_time, log_alpha_time, log_rho_global, log_alpha_global, log_sigma[L],
/// beta[N*J], outcome_factor[L*L], mu[L], nu[N*L], eta[p*L], z_global[T*L], z_latent[T*J*L].
/// Matrices are column-major; z_latent is T x (J*L) with column j*L + m.
struct ModelSpec {
  ModelConfig config;
  int n_units = 0;
  int n_times = 0;
  int n_outcomes = 1;
  int n_covariates = 0;

  ParameterBlock log_rho_time, log_alpha_time, log_rho_global, log_alpha_global, log_sigma;
  ParameterBlock beta, outcome_factor, mu, nu, eta, z_global, z_latent;
  Eigen::Index dim = 0;

  int rank() const { return config.rank; }
  bool has_latent() const { return config.rank > 0; }
  bool has_global() const { return config.mean_model.global_trend; }
  bool has_eta() const { return config.mean_model.covariates && n_covariates > 0; }
  bool has_outcome_factor() const { return has_latent() && n_outcomes >= 2; }
  std::vector<ParameterBlock> blocks() const;
  std::vector<std::string> coordinate_names() const;
};

/// Unknown likelihood names and J > N are rejected here.
ModelSpec build_model(const ModelConfig& config, int n_units, int n_times, int n_outcomes,
                      int n_covariates);
ModelSpec build_model(const ModelConfig& config, const PanelDataset& data);

Likelihood parse_likelihood(const std::string& name);
std::string to_string(Likelihood likelihood);

/// Constrained view of a parameter vector (fixed values filled in).
struct ModelState {
  double rho_time = 1.0;
  double alpha_time = 1.0;
  double rho_global = 1.0;
  double alpha_global = 1.0;
  Eigen::VectorXd sigma;           // L
  Eigen::MatrixXd loadings;        // N x J
  Eigen::MatrixXd outcome_factor;  // L x L (identity when L == 1)
  Eigen::VectorXd mu;              // L
  Eigen::MatrixXd nu;              // N x L
  Eigen::MatrixXd eta;             // p x L
  Eigen::MatrixXd z_global;        // T x L
  Eigen::MatrixXd z_latent;        // T x (J*L)
};

ModelState unpack(const ModelSpec& spec, const Eigen::VectorXd& params);
/// Inverse of unpack for the sampled blocks.
Eigen::VectorXd pack(const ModelSpec& spec, const ModelState& state);

/// Deterministic functions of the state on the full T grid.
struct LatentField {
  Eigen::MatrixXd time_factor;    // C~_time, unit amplitude
  Eigen::MatrixXd global_factor;  // C~_global, unit amplitude
  Eigen::MatrixXd u;              // T x (J*L), alpha_time C~ z
  Eigen::MatrixXd g;              // T x L
  std::vector<Eigen::MatrixXd> f; // per outcome, N x T
  /// mu + nu + g + eta'X + f, flat in panel order (t*N + i)*L + l.
  Eigen::VectorXd linear_predictor;
};

/// Unit-amplitude jitter added to the SE Gram matrices inside the model.
inline constexpr double kLatentJitter = 1e-6;

LatentField compute_latent_field(const ModelSpec& spec, const ModelState& state,
                                 std::span<const double> times, const Eigen::MatrixXd& covariates);

/// Evaluates log prior + log likelihood over the control cells, with Jacobians.
/// Never touches treated post-treatment outcomes.
class ModelEvaluator {
 public:
  ModelEvaluator(ModelSpec spec, const PanelDataset& data);

  const ModelSpec& spec() const { return spec_; }
  Eigen::Index dim() const { return spec_.dim; }

  double log_joint(const Eigen::VectorXd& params) const;
  /// Returns the log joint and fills grad; non-finite values signal a divergence.
  double log_joint_gradient(const Eigen::VectorXd& params, Eigen::VectorXd& grad) const;
  /// Same density with an externally supplied unit-amplitude time factor.
  double log_joint_with_time_factor(const Eigen::VectorXd& params,
                                    const Eigen::MatrixXd& time_factor) const;

  double log_prior(const Eigen::VectorXd& params) const;
  double log_likelihood(const Eigen::VectorXd& params) const;
  double cell_log_likelihood(const Eigen::VectorXd& params, int unit, int time, int outcome) const;

  /// Point around which chains are initialized: zeros, with mu at the empirical center.
  Eigen::VectorXd initial_center() const;

  /// Observation on the modelled scale (rate per 100k for Gaussian, count for Poisson).
  double modelled_value(int unit, int time, int outcome) const;
  /// Gaussian noise variance at (i,t) for outcome l given sigma.
  double noise_variance(double sigma, int unit, int time) const;
  double population(int unit, int time) const { return population_[time * spec_.n_units + unit]; }
  const std::vector<double>& times() const { return times_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }

 private:
  double evaluate(const Eigen::VectorXd& params, Eigen::VectorXd* grad,
                  const Eigen::MatrixXd* time_factor) const;

  ModelSpec spec_;
  std::vector<double> times_;
  Eigen::MatrixXd covariates_;
  std::vector<double> population_;  // t*N + i
  std::vector<double> y_;           // panel order, modelled scale, NaN when not in likelihood
  std::vector<double> precision_weight_;  // h(N_it), t*N + i
  std::vector<double> log_exposure_;      // log(N_it / 1e5), t*N + i
};

double log_joint(const Eigen::VectorXd& params, const PanelDataset& data, const ModelSpec& spec);
Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& params, const PanelDataset& data,
                               const ModelSpec& spec);

/// Draws every sampled block from its prior (fixed blocks keep their values).
Eigen::VectorXd sample_prior(const ModelSpec& spec, CounterRng& rng);

/// Replaces all outcomes of a panel template (including treated post-treatment cells)
/// with a prior predictive draw at params. Counts for Poisson, rates for Gaussian.
PanelDataset simulate_outcomes(const ModelSpec& spec, const PanelDataset& shape,
                               const Eigen::VectorXd& params, CounterRng& rng);

}  // namespace mtgp

#endif  // MTGP_MODEL_HPP
