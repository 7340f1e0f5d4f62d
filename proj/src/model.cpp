#include "mtgp/model.hpp"

#include "mtgp/kernels.hpp"
#include "mtgp/linalg.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mtgp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double normal_lpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

// log density of a log-transformed half-normal scale, Jacobian included; d/d(log x) in *grad.
double log_half_normal_lpdf(double log_x, double sd, double* grad) {
  const double x = std::exp(log_x);
  if (grad) *grad = -x * x / (sd * sd) + 1.0;
  return std::log(2.0) - kLogSqrt2Pi - std::log(sd) - 0.5 * x * x / (sd * sd) + log_x;
}

double log_inv_gamma_lpdf(double log_x, const InvGammaPrior& p, double* grad) {
  const double x = std::exp(log_x);
  if (grad) *grad = -p.shape + p.scale / x;
  return p.shape * std::log(p.scale) - std::lgamma(p.shape) - (p.shape + 1.0) * log_x -
         p.scale / x + log_x;
}

// Unit-amplitude SE Gram with model jitter and its derivative in the lengthscale.
Eigen::MatrixXd unit_se_gram(std::span<const double> times, double rho) {
  Eigen::MatrixXd k = time_gram(SETimeKernel{rho, 1.0}, times);
  k.diagonal().array() += kLatentJitter;
  return k;
}

Eigen::MatrixXd unit_se_gram_drho(std::span<const double> times, double rho) {
  const auto n = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      const double d2 = (times[a] - times[b]) * (times[a] - times[b]);
      dk(a, b) = dk(b, a) = std::exp(-d2 / (2.0 * rho)) * d2 / (2.0 * rho * rho);
    }
  }
  return dk;
}

bool factor(const Eigen::MatrixXd& k, Eigen::MatrixXd& lower) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  return lower.allFinite();
}

void add_block(ModelSpec& spec, ParameterBlock& block, const char* name, Eigen::Index size) {
  block.name = name;
  block.offset = spec.dim;
  block.size = size;
  spec.dim += size;
}

}  // namespace

Likelihood parse_likelihood(const std::string& name) {
  if (name == "gaussian" || name == "gaussian_hetero" || name == "normal") return Likelihood::gaussian;
  if (name == "poisson") return Likelihood::poisson;
  throw std::invalid_argument("unknown likelihood '" + name + "' (expected gaussian or poisson)");
}

std::string to_string(Likelihood likelihood) {
  return likelihood == Likelihood::gaussian ? "gaussian" : "poisson";
}

ModelSpec build_model(const ModelConfig& config, int n_units, int n_times, int n_outcomes,
                      int n_covariates) {
  if (n_units < 2 || n_times < 2 || n_outcomes < 1) {
    throw std::invalid_argument("build_model: panel must have N >= 2, T >= 2, L >= 1");
  }
  if (config.rank < 0) throw std::invalid_argument("build_model: rank must be >= 0");
  if (config.rank > n_units) {
    throw std::invalid_argument("build_model: rank J=" + std::to_string(config.rank) +
                                " exceeds the number of units N=" + std::to_string(n_units));
  }
  const auto& fx = config.fixed;
  if (fx.loadings && (fx.loadings->rows() != n_units || fx.loadings->cols() != config.rank)) {
    throw std::invalid_argument("build_model: fixed loadings must be N x J");
  }
  if (fx.sigma && fx.sigma->size() != n_outcomes) {
    throw std::invalid_argument("build_model: fixed sigma must have one entry per outcome");
  }
  if (fx.mu && fx.mu->size() != n_outcomes) {
    throw std::invalid_argument("build_model: fixed mu must have one entry per outcome");
  }
  if (fx.nu && (fx.nu->rows() != n_units || fx.nu->cols() != n_outcomes)) {
    throw std::invalid_argument("build_model: fixed nu must be N x L");
  }
  if (config.warmup < 0 || config.iters < 0 || config.chains < 0) {
    throw std::invalid_argument("build_model: negative sampler settings");
  }

  ModelSpec spec;
  spec.config = config;
  spec.n_units = n_units;
  spec.n_times = n_times;
  spec.n_outcomes = n_outcomes;
  spec.n_covariates = n_covariates;
  const int n = n_units, t = n_times, l = n_outcomes, j = config.rank;

  if (spec.has_latent()) {
    if (!fx.rho_time) add_block(spec, spec.log_rho_time, "log_rho_time", 1);
    if (!fx.alpha_time) add_block(spec, spec.log_alpha_time, "log_alpha_time", 1);
  }
  if (spec.has_global()) {
    if (!fx.rho_global) add_block(spec, spec.log_rho_global, "log_rho_global", 1);
    if (!fx.alpha_global) add_block(spec, spec.log_alpha_global, "log_alpha_global", 1);
  }
  if (config.likelihood == Likelihood::gaussian && !fx.sigma) {
    add_block(spec, spec.log_sigma, "log_sigma", l);
  }
  if (spec.has_latent() && !fx.loadings) add_block(spec, spec.beta, "beta", n * j);
  if (spec.has_outcome_factor()) add_block(spec, spec.outcome_factor, "outcome_factor", l * l);
  if (!fx.mu) add_block(spec, spec.mu, "mu", l);
  if (config.mean_model.unit_intercepts && !fx.nu) add_block(spec, spec.nu, "nu", n * l);
  if (spec.has_eta()) add_block(spec, spec.eta, "eta", n_covariates * l);
  if (spec.has_global()) add_block(spec, spec.z_global, "z_global", t * l);
  if (spec.has_latent()) add_block(spec, spec.z_latent, "z_latent", t * j * l);
  return spec;
}

ModelSpec build_model(const ModelConfig& config, const PanelDataset& data) {
  if (config.likelihood == Likelihood::poisson && data.kind() != ValueKind::count) {
    throw std::invalid_argument("poisson likelihood requires count outcomes");
  }
  return build_model(config, data.n_units(), data.n_times(), data.n_outcomes(),
                     data.n_covariates());
}

std::vector<ParameterBlock> ModelSpec::blocks() const {
  std::vector<ParameterBlock> out;
  for (const auto* b : {&log_rho_time, &log_alpha_time, &log_rho_global, &log_alpha_global,
                        &log_sigma, &beta, &outcome_factor, &mu, &nu, &eta, &z_global,
                        &z_latent}) {
    if (b->present()) out.push_back(*b);
  }
  return out;
}

std::vector<std::string> ModelSpec::coordinate_names() const {
  std::vector<std::string> names(static_cast<std::size_t>(dim));
  const auto two = [](const std::string& b, Eigen::Index k, Eigen::Index rows) {
    return b + "[" + std::to_string(k % rows) + "," + std::to_string(k / rows) + "]";
  };
  for (const auto& b : blocks()) {
    for (Eigen::Index k = 0; k < b.size; ++k) {
      std::string name;
      if (b.name == "beta" || b.name == "nu") name = two(b.name, k, n_units);
      else if (b.name == "outcome_factor") name = two(b.name, k, n_outcomes);
      else if (b.name == "eta") name = two(b.name, k, n_covariates);
      else if (b.name == "z_global" || b.name == "z_latent") name = two(b.name, k, n_times);
      else if (b.size == 1) name = b.name;
      else name = b.name + "[" + std::to_string(k) + "]";
      names[static_cast<std::size_t>(b.offset + k)] = name;
    }
  }
  return names;
}

ModelState unpack(const ModelSpec& spec, const Eigen::VectorXd& x) {
  if (x.size() != spec.dim) throw std::invalid_argument("unpack: parameter vector has wrong size");
  const auto& fx = spec.config.fixed;
  const int n = spec.n_units, t = spec.n_times, l = spec.n_outcomes, j = spec.rank();
  const int p = spec.has_eta() ? spec.n_covariates : 0;
  const auto mat = [&](const ParameterBlock& b, int rows, int cols) {
    return Eigen::Map<const Eigen::MatrixXd>(x.data() + b.offset, rows, cols).eval();
  };
  ModelState s;
  s.rho_time = spec.log_rho_time.present() ? std::exp(x(spec.log_rho_time.offset))
                                           : fx.rho_time.value_or(1.0);
  s.alpha_time = spec.log_alpha_time.present() ? std::exp(x(spec.log_alpha_time.offset))
                                               : fx.alpha_time.value_or(1.0);
  s.rho_global = spec.log_rho_global.present() ? std::exp(x(spec.log_rho_global.offset))
                                               : fx.rho_global.value_or(1.0);
  s.alpha_global = spec.log_alpha_global.present() ? std::exp(x(spec.log_alpha_global.offset))
                                                   : fx.alpha_global.value_or(1.0);
  if (spec.log_sigma.present()) s.sigma = mat(spec.log_sigma, l, 1).array().exp();
  else s.sigma = fx.sigma.value_or(Eigen::VectorXd::Ones(l));
  if (spec.beta.present()) s.loadings = mat(spec.beta, n, j);
  else s.loadings = fx.loadings.value_or(Eigen::MatrixXd::Zero(n, j));
  s.outcome_factor = spec.outcome_factor.present() ? mat(spec.outcome_factor, l, l)
                                                   : Eigen::MatrixXd::Identity(l, l);
  if (spec.mu.present()) s.mu = mat(spec.mu, l, 1);
  else s.mu = fx.mu.value_or(Eigen::VectorXd::Zero(l));
  if (spec.nu.present()) s.nu = mat(spec.nu, n, l);
  else if (spec.config.mean_model.unit_intercepts && fx.nu) s.nu = *fx.nu;
  else s.nu = Eigen::MatrixXd::Zero(n, l);
  s.eta = spec.eta.present() ? mat(spec.eta, p, l) : Eigen::MatrixXd::Zero(p, l);
  s.z_global = spec.z_global.present() ? mat(spec.z_global, t, l) : Eigen::MatrixXd::Zero(t, l);
  s.z_latent =
      spec.z_latent.present() ? mat(spec.z_latent, t, j * l) : Eigen::MatrixXd::Zero(t, j * l);
  return s;
}

Eigen::VectorXd pack(const ModelSpec& spec, const ModelState& s) {
  Eigen::VectorXd x(spec.dim);
  const auto put = [&](const ParameterBlock& b, const Eigen::MatrixXd& m) {
    if (!b.present()) return;
    if (m.size() != b.size) throw std::invalid_argument("pack: block '" + b.name + "' size");
    x.segment(b.offset, b.size) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  };
  const auto put1 = [&](const ParameterBlock& b, double v) {
    if (b.present()) x(b.offset) = std::log(v);
  };
  put1(spec.log_rho_time, s.rho_time);
  put1(spec.log_alpha_time, s.alpha_time);
  put1(spec.log_rho_global, s.rho_global);
  put1(spec.log_alpha_global, s.alpha_global);
  if (spec.log_sigma.present()) put(spec.log_sigma, s.sigma.array().log().matrix());
  put(spec.beta, s.loadings);
  put(spec.outcome_factor, s.outcome_factor);
  put(spec.mu, s.mu);
  put(spec.nu, s.nu);
  put(spec.eta, s.eta);
  put(spec.z_global, s.z_global);
  put(spec.z_latent, s.z_latent);
  return x;
}

LatentField compute_latent_field(const ModelSpec& spec, const ModelState& s,
                                 std::span<const double> times,
                                 const Eigen::MatrixXd& covariates) {
  const int n = spec.n_units, t = spec.n_times, l = spec.n_outcomes, j = spec.rank();
  LatentField field;
  field.u = Eigen::MatrixXd::Zero(t, j * l);
  field.g = Eigen::MatrixXd::Zero(t, l);
  if (spec.has_latent()) {
    if (!factor(unit_se_gram(times, s.rho_time), field.time_factor)) {
      throw std::runtime_error("time kernel not positive definite");
    }
    field.u = s.alpha_time * field.time_factor * s.z_latent;
  }
  if (spec.has_global()) {
    if (!factor(unit_se_gram(times, s.rho_global), field.global_factor)) {
      throw std::runtime_error("global kernel not positive definite");
    }
    field.g = s.alpha_global * field.global_factor * s.z_global;
  }
  const Eigen::MatrixXd xeta = spec.has_eta() ? (covariates * s.eta).eval()
                                              : Eigen::MatrixXd::Zero(n, l);
  field.f.assign(l, Eigen::MatrixXd::Zero(n, t));
  for (int o = 0; o < l; ++o) {
    if (!spec.has_latent()) continue;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(t, j);
    for (int jj = 0; jj < j; ++jj) {
      for (int m = 0; m < l; ++m) w.col(jj) += s.outcome_factor(o, m) * field.u.col(jj * l + m);
    }
    field.f[o] = s.loadings * w.transpose();
  }
  field.linear_predictor.resize(static_cast<Eigen::Index>(n) * t * l);
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      for (int o = 0; o < l; ++o) {
        field.linear_predictor((static_cast<Eigen::Index>(ti) * n + i) * l + o) =
            s.mu(o) + s.nu(i, o) + field.g(ti, o) + xeta(i, o) + field.f[o](i, ti);
      }
    }
  }
  return field;
}

ModelEvaluator::ModelEvaluator(ModelSpec spec, const PanelDataset& data)
    : spec_(std::move(spec)), times_(data.time_positions()), covariates_(data.covariates()) {
  if (data.n_units() != spec_.n_units || data.n_times() != spec_.n_times ||
      data.n_outcomes() != spec_.n_outcomes || data.n_covariates() != spec_.n_covariates) {
    throw std::invalid_argument("ModelEvaluator: spec does not match the panel shape");
  }
  if (spec_.config.likelihood == Likelihood::poisson && data.kind() != ValueKind::count) {
    throw std::invalid_argument("poisson likelihood requires count outcomes");
  }
  const int n = spec_.n_units, t = spec_.n_times, l = spec_.n_outcomes;
  population_.resize(static_cast<std::size_t>(n) * t);
  precision_weight_.resize(population_.size());
  log_exposure_.resize(population_.size());
  y_.assign(static_cast<std::size_t>(n) * t * l, std::numeric_limits<double>::quiet_NaN());
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(ti) * n + i;
      const double pop = data.population(i, ti);
      population_[k] = pop;
      const double scaled = pop / spec_.config.population_unit;
      switch (spec_.config.heteroskedasticity) {
        case Heteroskedasticity::sqrt_population: precision_weight_[k] = std::sqrt(scaled); break;
        case Heteroskedasticity::population: precision_weight_[k] = scaled; break;
        case Heteroskedasticity::none: precision_weight_[k] = 1.0; break;
      }
      log_exposure_[k] = std::log(pop / kRatePer);
      for (int o = 0; o < l; ++o) {
        if (!data.is_control_observed(i, ti, o)) continue;
        const double v = data.control_value(i, ti, o);
        y_[data.index(i, ti, o)] =
            spec_.config.likelihood == Likelihood::gaussian ? data.to_rate(v, i, ti) : v;
      }
    }
  }
}

double ModelEvaluator::modelled_value(int unit, int time, int outcome) const {
  return y_[(static_cast<std::size_t>(time) * spec_.n_units + unit) * spec_.n_outcomes + outcome];
}

double ModelEvaluator::noise_variance(double sigma, int unit, int time) const {
  return sigma * sigma / precision_weight_[static_cast<std::size_t>(time) * spec_.n_units + unit];
}

Eigen::VectorXd ModelEvaluator::initial_center() const {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(spec_.dim);
  if (!spec_.mu.present()) return x;
  const int n = spec_.n_units, t = spec_.n_times, l = spec_.n_outcomes;
  for (int o = 0; o < l; ++o) {
    double num = 0.0, den = 0.0;
    for (int ti = 0; ti < t; ++ti) {
      for (int i = 0; i < n; ++i) {
        const double y = modelled_value(i, ti, o);
        if (std::isnan(y)) continue;
        if (spec_.config.likelihood == Likelihood::poisson) {
          num += y;
          den += std::exp(log_exposure_[static_cast<std::size_t>(ti) * n + i]);
        } else {
          num += y;
          den += 1.0;
        }
      }
    }
    double center = den > 0 ? num / den : 0.0;
    if (spec_.config.likelihood == Likelihood::poisson) center = std::log(std::max(center, 1e-3));
    x(spec_.mu.offset + o) = center;
  }
  return x;
}

double ModelEvaluator::log_prior(const Eigen::VectorXd& x) const {
  const auto& pr = spec_.config.priors;
  double lp = 0.0;
  if (spec_.log_rho_time.present()) lp += log_inv_gamma_lpdf(x(spec_.log_rho_time.offset), pr.rho_time, nullptr);
  if (spec_.log_alpha_time.present()) lp += log_half_normal_lpdf(x(spec_.log_alpha_time.offset), pr.alpha_time_sd, nullptr);
  if (spec_.log_rho_global.present()) lp += log_inv_gamma_lpdf(x(spec_.log_rho_global.offset), pr.rho_global, nullptr);
  if (spec_.log_alpha_global.present()) lp += log_half_normal_lpdf(x(spec_.log_alpha_global.offset), pr.alpha_global_sd, nullptr);
  if (spec_.log_sigma.present()) {
    for (Eigen::Index k = 0; k < spec_.log_sigma.size; ++k) {
      lp += log_half_normal_lpdf(x(spec_.log_sigma.offset + k), pr.sigma_sd, nullptr);
    }
  }
  const auto normal_block = [&](const ParameterBlock& b, double mean, double sd) {
    if (!b.present()) return;
    for (Eigen::Index k = 0; k < b.size; ++k) lp += normal_lpdf(x(b.offset + k), mean, sd);
  };
  normal_block(spec_.beta, 0.0, pr.beta_sd);
  normal_block(spec_.outcome_factor, 0.0, pr.outcome_factor_sd);
  normal_block(spec_.mu, pr.mu_mean, pr.mu_sd);
  normal_block(spec_.nu, 0.0, pr.nu_sd);
  normal_block(spec_.eta, 0.0, pr.eta_sd);
  normal_block(spec_.z_global, 0.0, 1.0);
  normal_block(spec_.z_latent, 0.0, 1.0);
  return lp;
}

double ModelEvaluator::cell_log_likelihood(const Eigen::VectorXd& x, int unit, int time,
                                           int outcome) const {
  const double y = modelled_value(unit, time, outcome);
  if (std::isnan(y)) return 0.0;
  const ModelState s = unpack(spec_, x);
  const LatentField field = compute_latent_field(spec_, s, times_, covariates_);
  const std::size_t k = static_cast<std::size_t>(time) * spec_.n_units + unit;
  const double lin = field.linear_predictor(
      (static_cast<Eigen::Index>(time) * spec_.n_units + unit) * spec_.n_outcomes + outcome);
  if (spec_.config.likelihood == Likelihood::gaussian) {
    const double var = noise_variance(s.sigma(outcome), unit, time);
    return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * (y - lin) * (y - lin) / var;
  }
  const double log_rate = log_exposure_[k] + lin;
  return y * log_rate - std::exp(log_rate) - std::lgamma(y + 1.0);
}

double ModelEvaluator::log_likelihood(const Eigen::VectorXd& x) const {
  return evaluate(x, nullptr, nullptr) - log_prior(x);
}

double ModelEvaluator::log_joint(const Eigen::VectorXd& x) const {
  return evaluate(x, nullptr, nullptr);
}

double ModelEvaluator::log_joint_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
  grad.setZero(spec_.dim);
  return evaluate(x, &grad, nullptr);
}

double ModelEvaluator::log_joint_with_time_factor(const Eigen::VectorXd& x,
                                                  const Eigen::MatrixXd& time_factor) const {
  return evaluate(x, nullptr, &time_factor);
}

double ModelEvaluator::evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                                const Eigen::MatrixXd* time_factor_override) const {
  if (x.size() != spec_.dim) throw std::invalid_argument("log_joint: parameter vector has wrong size");
  if (!x.allFinite()) return kNegInf;
  const auto& pr = spec_.config.priors;
  const int n = spec_.n_units, t = spec_.n_times, l = spec_.n_outcomes, j = spec_.rank();
  const ModelState s = unpack(spec_, x);
  // exp() of an extreme leapfrog position under- or overflows; treat as a rejected proposal.
  const auto usable = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!usable(s.rho_time) || !usable(s.alpha_time) || !usable(s.rho_global) ||
      !usable(s.alpha_global) || !s.sigma.unaryExpr(usable).all()) {
    return kNegInf;
  }

  Eigen::MatrixXd ct, cg;
  if (spec_.has_latent()) {
    if (time_factor_override) ct = *time_factor_override;
    else if (!factor(unit_se_gram(times_, s.rho_time), ct)) return kNegInf;
  }
  if (spec_.has_global() && !factor(unit_se_gram(times_, s.rho_global), cg)) return kNegInf;

  const Eigen::MatrixXd cz = spec_.has_latent() ? (ct * s.z_latent).eval() : Eigen::MatrixXd();
  const Eigen::MatrixXd u = spec_.has_latent() ? (s.alpha_time * cz).eval() : Eigen::MatrixXd();
  const Eigen::MatrixXd cgz = spec_.has_global() ? (cg * s.z_global).eval() : Eigen::MatrixXd();
  const Eigen::MatrixXd g = spec_.has_global() ? (s.alpha_global * cgz).eval()
                                               : Eigen::MatrixXd::Zero(t, l);
  const Eigen::MatrixXd xeta = spec_.has_eta() ? (covariates_ * s.eta).eval()
                                               : Eigen::MatrixXd::Zero(n, l);

  std::vector<Eigen::MatrixXd> w(l);  // T x J per outcome
  std::vector<Eigen::MatrixXd> f(l);  // N x T
  for (int o = 0; o < l; ++o) {
    if (!spec_.has_latent()) continue;
    w[o] = Eigen::MatrixXd::Zero(t, j);
    for (int jj = 0; jj < j; ++jj) {
      for (int m = 0; m < l; ++m) w[o].col(jj) += s.outcome_factor(o, m) * u.col(jj * l + m);
    }
    f[o] = s.loadings * w[o].transpose();
  }

  // Likelihood and its derivative in the linear predictor.
  const bool gaussian = spec_.config.likelihood == Likelihood::gaussian;
  double ll = 0.0;
  std::vector<Eigen::MatrixXd> resid(l, Eigen::MatrixXd::Zero(n, t));
  Eigen::VectorXd dlog_sigma = Eigen::VectorXd::Zero(l);
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      const std::size_t k = static_cast<std::size_t>(ti) * n + i;
      for (int o = 0; o < l; ++o) {
        const double y = y_[k * l + o];
        if (std::isnan(y)) continue;
        double lin = s.mu(o) + s.nu(i, o) + g(ti, o) + xeta(i, o);
        if (spec_.has_latent()) lin += f[o](i, ti);
        if (gaussian) {
          const double prec = precision_weight_[k] / (s.sigma(o) * s.sigma(o));
          const double r = y - lin;
          ll += -kLogSqrt2Pi + 0.5 * std::log(prec) - 0.5 * prec * r * r;
          resid[o](i, ti) = prec * r;
          dlog_sigma(o) += -1.0 + prec * r * r;
        } else {
          const double log_rate = log_exposure_[k] + lin;
          const double rate = std::exp(log_rate);
          ll += y * log_rate - rate - std::lgamma(y + 1.0);
          resid[o](i, ti) = y - rate;
        }
      }
    }
  }
  const double lp = log_prior(x);
  const double total = ll + lp;
  if (!grad || !std::isfinite(total)) return total;

  Eigen::VectorXd& gr = *grad;
  // Prior gradients.
  double d = 0.0;
  if (spec_.log_rho_time.present()) {
    log_inv_gamma_lpdf(x(spec_.log_rho_time.offset), pr.rho_time, &d);
    gr(spec_.log_rho_time.offset) += d;
  }
  if (spec_.log_alpha_time.present()) {
    log_half_normal_lpdf(x(spec_.log_alpha_time.offset), pr.alpha_time_sd, &d);
    gr(spec_.log_alpha_time.offset) += d;
  }
  if (spec_.log_rho_global.present()) {
    log_inv_gamma_lpdf(x(spec_.log_rho_global.offset), pr.rho_global, &d);
    gr(spec_.log_rho_global.offset) += d;
  }
  if (spec_.log_alpha_global.present()) {
    log_half_normal_lpdf(x(spec_.log_alpha_global.offset), pr.alpha_global_sd, &d);
    gr(spec_.log_alpha_global.offset) += d;
  }
  if (spec_.log_sigma.present()) {
    for (int o = 0; o < l; ++o) {
      log_half_normal_lpdf(x(spec_.log_sigma.offset + o), pr.sigma_sd, &d);
      gr(spec_.log_sigma.offset + o) += d + dlog_sigma(o);
    }
  }
  const auto normal_grad = [&](const ParameterBlock& b, double mean, double sd) {
    if (!b.present()) return;
    gr.segment(b.offset, b.size).array() -= (x.segment(b.offset, b.size).array() - mean) / (sd * sd);
  };
  normal_grad(spec_.beta, 0.0, pr.beta_sd);
  normal_grad(spec_.outcome_factor, 0.0, pr.outcome_factor_sd);
  normal_grad(spec_.mu, pr.mu_mean, pr.mu_sd);
  normal_grad(spec_.nu, 0.0, pr.nu_sd);
  normal_grad(spec_.eta, 0.0, pr.eta_sd);
  normal_grad(spec_.z_global, 0.0, 1.0);
  normal_grad(spec_.z_latent, 0.0, 1.0);

  // Mean-model blocks.
  for (int o = 0; o < l; ++o) {
    const Eigen::VectorXd by_unit = resid[o].rowwise().sum();
    if (spec_.mu.present()) gr(spec_.mu.offset + o) += by_unit.sum();
    if (spec_.nu.present()) gr.segment(spec_.nu.offset + static_cast<Eigen::Index>(o) * n, n) += by_unit;
    if (spec_.has_eta()) {
      const int p = spec_.n_covariates;
      gr.segment(spec_.eta.offset + static_cast<Eigen::Index>(o) * p, p) +=
          covariates_.transpose() * by_unit;
    }
  }

  // Global trend: g = alpha_g C~_g z_g.
  if (spec_.has_global()) {
    Eigen::MatrixXd dg(t, l);
    for (int o = 0; o < l; ++o) dg.col(o) = resid[o].colwise().sum().transpose();
    if (spec_.z_global.present()) {
      const Eigen::MatrixXd dz = s.alpha_global * cg.transpose() * dg;
      gr.segment(spec_.z_global.offset, spec_.z_global.size) +=
          Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size());
    }
    if (spec_.log_alpha_global.present()) {
      gr(spec_.log_alpha_global.offset) += s.alpha_global * (cgz.array() * dg.array()).sum();
    }
    if (spec_.log_rho_global.present()) {
      const Eigen::MatrixXd dc = s.alpha_global * dg * s.z_global.transpose();
      const Eigen::MatrixXd dl = cholesky_derivative(cg, unit_se_gram_drho(times_, s.rho_global));
      gr(spec_.log_rho_global.offset) += s.rho_global * (dc.array() * dl.array()).sum();
    }
  }

  // Latent factors: f_o = beta W_o^T, W_o[:,j] = sum_m Z(o,m) U[:, j*L+m], U = alpha C~ Z_u.
  if (spec_.has_latent()) {
    Eigen::MatrixXd dbeta = Eigen::MatrixXd::Zero(n, j);
    Eigen::MatrixXd du = Eigen::MatrixXd::Zero(t, j * l);
    Eigen::MatrixXd dzf = Eigen::MatrixXd::Zero(l, l);
    for (int o = 0; o < l; ++o) {
      dbeta += resid[o] * w[o];
      const Eigen::MatrixXd dw = resid[o].transpose() * s.loadings;  // T x J
      for (int jj = 0; jj < j; ++jj) {
        for (int m = 0; m < l; ++m) {
          dzf(o, m) += dw.col(jj).dot(u.col(jj * l + m));
          du.col(jj * l + m) += s.outcome_factor(o, m) * dw.col(jj);
        }
      }
    }
    if (spec_.beta.present()) {
      gr.segment(spec_.beta.offset, spec_.beta.size) +=
          Eigen::Map<const Eigen::VectorXd>(dbeta.data(), dbeta.size());
    }
    if (spec_.outcome_factor.present()) {
      gr.segment(spec_.outcome_factor.offset, spec_.outcome_factor.size) +=
          Eigen::Map<const Eigen::VectorXd>(dzf.data(), dzf.size());
    }
    const Eigen::MatrixXd dz = s.alpha_time * ct.transpose() * du;
    gr.segment(spec_.z_latent.offset, spec_.z_latent.size) +=
        Eigen::Map<const Eigen::VectorXd>(dz.data(), dz.size());
    if (spec_.log_alpha_time.present()) {
      gr(spec_.log_alpha_time.offset) += s.alpha_time * (cz.array() * du.array()).sum();
    }
    if (spec_.log_rho_time.present()) {
      const Eigen::MatrixXd dc = s.alpha_time * du * s.z_latent.transpose();
      const Eigen::MatrixXd dl = cholesky_derivative(ct, unit_se_gram_drho(times_, s.rho_time));
      gr(spec_.log_rho_time.offset) += s.rho_time * (dc.array() * dl.array()).sum();
    }
  }
  return total;
}

double log_joint(const Eigen::VectorXd& params, const PanelDataset& data, const ModelSpec& spec) {
  return ModelEvaluator(spec, data).log_joint(params);
}

Eigen::VectorXd grad_log_joint(const Eigen::VectorXd& params, const PanelDataset& data,
                               const ModelSpec& spec) {
  Eigen::VectorXd grad;
  const double v = ModelEvaluator(spec, data).log_joint_gradient(params, grad);
  if (!std::isfinite(v) || !grad.allFinite()) {
    throw std::runtime_error("grad_log_joint: non-finite log joint or gradient");
  }
  return grad;
}

Eigen::VectorXd sample_prior(const ModelSpec& spec, CounterRng& rng) {
  const auto& pr = spec.config.priors;
  Eigen::VectorXd x(spec.dim);
  const auto inv_gamma = [&](const InvGammaPrior& p) { return p.scale / rng.gamma(p.shape); };
  const auto half_normal = [&](double sd) { return std::fabs(sd * rng.normal()); };
  if (spec.log_rho_time.present()) x(spec.log_rho_time.offset) = std::log(inv_gamma(pr.rho_time));
  if (spec.log_alpha_time.present()) x(spec.log_alpha_time.offset) = std::log(half_normal(pr.alpha_time_sd));
  if (spec.log_rho_global.present()) x(spec.log_rho_global.offset) = std::log(inv_gamma(pr.rho_global));
  if (spec.log_alpha_global.present()) x(spec.log_alpha_global.offset) = std::log(half_normal(pr.alpha_global_sd));
  if (spec.log_sigma.present()) {
    for (Eigen::Index k = 0; k < spec.log_sigma.size; ++k) {
      x(spec.log_sigma.offset + k) = std::log(half_normal(pr.sigma_sd));
    }
  }
  const auto normal_block = [&](const ParameterBlock& b, double mean, double sd) {
    if (!b.present()) return;
    for (Eigen::Index k = 0; k < b.size; ++k) x(b.offset + k) = mean + sd * rng.normal();
  };
  normal_block(spec.beta, 0.0, pr.beta_sd);
  normal_block(spec.outcome_factor, 0.0, pr.outcome_factor_sd);
  normal_block(spec.mu, pr.mu_mean, pr.mu_sd);
  normal_block(spec.nu, 0.0, pr.nu_sd);
  normal_block(spec.eta, 0.0, pr.eta_sd);
  normal_block(spec.z_global, 0.0, 1.0);
  normal_block(spec.z_latent, 0.0, 1.0);
  return x;
}

PanelDataset simulate_outcomes(const ModelSpec& spec, const PanelDataset& shape,
                               const Eigen::VectorXd& params, CounterRng& rng) {
  const ModelState s = unpack(spec, params);
  const auto times = shape.time_positions();
  const LatentField field = compute_latent_field(spec, s, times, shape.covariates());
  const int n = shape.n_units(), t = shape.n_times(), l = shape.n_outcomes();
  const bool gaussian = spec.config.likelihood == Likelihood::gaussian;
  std::vector<double> values(static_cast<std::size_t>(n) * t * l);
  std::vector<double> pops(static_cast<std::size_t>(n) * t);
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      const double pop = shape.population(i, ti);
      pops[static_cast<std::size_t>(ti) * n + i] = pop;
      double h = 1.0;
      const double scaled = pop / spec.config.population_unit;
      if (spec.config.heteroskedasticity == Heteroskedasticity::sqrt_population) h = std::sqrt(scaled);
      else if (spec.config.heteroskedasticity == Heteroskedasticity::population) h = scaled;
      for (int o = 0; o < l; ++o) {
        const std::size_t idx = shape.index(i, ti, o);
        const double lin = field.linear_predictor(static_cast<Eigen::Index>(idx));
        if (gaussian) {
          values[idx] = lin + s.sigma(o) / std::sqrt(h) * rng.normal();
        } else {
          values[idx] = static_cast<double>(rng.poisson(pop * std::exp(lin) / kRatePer));
        }
      }
    }
  }
  std::vector<std::string> units = shape.unit_ids();
  std::vector<long> time_ids = shape.time_ids();
  std::vector<std::string> outcomes = shape.outcome_names();
  std::vector<std::string> cov_names = shape.covariate_names();
  return PanelDataset(std::move(units), std::move(time_ids), std::move(outcomes),
                      std::move(values), std::move(pops), shape.covariates(),
                      std::move(cov_names), shape.treated_unit(), shape.t0(),
                      gaussian ? ValueKind::rate : ValueKind::count);
}

}  // namespace mtgp
