#include "mtgp/sampler.hpp"

#include "mtgp/parallel.hpp"
#include "mtgp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtgp {

namespace {

struct Point {
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
  double logp = -std::numeric_limits<double>::infinity();
};

bool evaluate(const LogDensity& target, Point& p) {
  p.grad.resize(p.x.size());
  p.logp = target.log_density_gradient(p.x, p.grad);
  return std::isfinite(p.logp) && p.grad.allFinite();
}

double kinetic(const Eigen::VectorXd& momentum, const Eigen::VectorXd& mass_diag) {
  return 0.5 * (momentum.array().square() * mass_diag.array()).sum();
}

Eigen::VectorXd draw_momentum(CounterRng& rng, const Eigen::VectorXd& mass_diag) {
  Eigen::VectorXd p(mass_diag.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = rng.normal() / std::sqrt(mass_diag(k));
  return p;
}

// Leapfrog integration; returns false as soon as the state leaves the finite region.
bool leapfrog(const LogDensity& target, Point& p, Eigen::VectorXd& momentum,
              const Eigen::VectorXd& mass_diag, double eps, int steps) {
  for (int s = 0; s < steps; ++s) {
    momentum += 0.5 * eps * p.grad;
    p.x += eps * (mass_diag.array() * momentum.array()).matrix();
    if (!evaluate(target, p)) return false;
    momentum += 0.5 * eps * p.grad;
  }
  return true;
}

// Stan's heuristic: double or halve until the one-step acceptance crosses 0.8.
double find_reasonable_step(const LogDensity& target, const Point& start,
                            const Eigen::VectorXd& mass_diag, double eps, CounterRng& rng) {
  const auto delta_h = [&](double e) {
    Point p = start;
    Eigen::VectorXd r = draw_momentum(rng, mass_diag);
    const double h0 = -p.logp + kinetic(r, mass_diag);
    if (!leapfrog(target, p, r, mass_diag, e, 1)) return -std::numeric_limits<double>::infinity();
    const double h = -p.logp + kinetic(r, mass_diag);
    return std::isfinite(h) ? h0 - h : -std::numeric_limits<double>::infinity();
  };
  double dh = delta_h(eps);
  const int direction = dh > std::log(0.8) ? 1 : -1;
  for (int k = 0; k < 50; ++k) {
    eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
    dh = delta_h(eps);
    if (direction == 1 && !(dh > std::log(0.8))) break;
    if (direction == -1 && dh > std::log(0.8)) break;
  }
  return std::clamp(eps, 1e-10, 1e3);
}

struct DualAveraging {
  double mu = 0.0, x_bar = 0.0, h_bar = 0.0;
  long count = 0;
  static constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;

  void restart(double eps) {
    mu = std::log(10.0 * eps);
    x_bar = h_bar = 0.0;
    count = 0;
  }
  double update(double accept, double target) {
    ++count;
    const double m = static_cast<double>(count);
    const double eta = 1.0 / (m + t0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - accept);
    const double x = mu - std::sqrt(m) / gamma * h_bar;
    const double w = std::pow(m, -kappa);
    x_bar = w * x + (1.0 - w) * x_bar;
    return std::exp(x);
  }
  double final_step() const { return std::exp(x_bar); }
};

// Ends (exclusive iteration indices) of the mass-adaptation windows inside [begin, end).
std::vector<int> mass_window_ends(int begin, int end) {
  std::vector<int> ends;
  if (end <= begin) return ends;
  int size = std::min(25, end - begin);
  int start = begin;
  while (start < end) {
    int stop = start + size;
    const int next_size = 2 * size;
    if (stop + next_size > end) stop = end;
    ends.push_back(stop);
    start = stop;
    size = next_size;
  }
  return ends;
}

}  // namespace

int ChainResult::n_divergent() const {
  return static_cast<int>(std::count(divergent.begin(), divergent.end(), 1));
}

ChainResult run_hmc(const LogDensity& target, const Eigen::VectorXd& init_center,
                    const HmcSettings& settings, std::uint64_t seed, int chain) {
  const Eigen::Index dim = target.dim();
  if (init_center.size() != dim) throw std::invalid_argument("run_hmc: init_center has wrong size");
  if (settings.leapfrog_steps < 1) throw std::invalid_argument("run_hmc: leapfrog_steps must be >= 1");
  CounterRng rng(seed, static_cast<std::uint64_t>(chain));

  Point current;
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    current.x = init_center;
    for (Eigen::Index k = 0; k < dim; ++k) {
      current.x(k) += rng.uniform(-settings.init_radius, settings.init_radius);
    }
    ok = evaluate(target, current);
  }
  if (!ok) throw std::runtime_error("run_hmc: no finite initial point after 100 attempts");

  ChainState state;
  state.position = current.x;
  state.mass_diag = Eigen::VectorXd::Ones(dim);
  state.seed = seed;
  state.chain = chain;
  state.step_size = find_reasonable_step(target, current, state.mass_diag, 1.0, rng);

  const int warmup = settings.warmup;
  const int init_buffer = warmup * 15 / 100;
  const int term_buffer = warmup * 10 / 100;
  const std::vector<int> window_ends = mass_window_ends(init_buffer, warmup - term_buffer);
  std::size_t next_window = 0;
  int window_start = init_buffer;

  DualAveraging da;
  da.restart(state.step_size);
  // Welford accumulators for the current mass window.
  Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim), w_m2 = Eigen::VectorXd::Zero(dim);
  long w_n = 0;

  const int lo = std::max(1, static_cast<int>(std::ceil(0.5 * settings.leapfrog_steps)));
  const int hi = std::max(lo, static_cast<int>(std::floor(1.5 * settings.leapfrog_steps)));

  ChainResult result;
  result.draws.resize(settings.iters, dim);
  result.log_density.resize(settings.iters);
  result.accept_stat.resize(settings.iters);
  result.divergent.assign(static_cast<std::size_t>(settings.iters), 0);

  const int total = warmup + settings.iters;
  for (int it = 0; it < total; ++it) {
    const int steps = static_cast<int>(rng.uniform_int(lo, hi));
    Eigen::VectorXd momentum = draw_momentum(rng, state.mass_diag);
    const double h0 = -current.logp + kinetic(momentum, state.mass_diag);
    Point proposal = current;
    const bool finite = leapfrog(target, proposal, momentum, state.mass_diag, state.step_size, steps);
    const double h1 = finite ? -proposal.logp + kinetic(momentum, state.mass_diag)
                             : std::numeric_limits<double>::infinity();
    const bool divergent = !std::isfinite(h1) || h1 - h0 > settings.divergence_threshold;
    double accept = 0.0;
    if (std::isfinite(h1)) accept = std::min(1.0, std::exp(h0 - h1));
    if (accept > 0.0 && rng.uniform() < accept) current = std::move(proposal);

    if (it < warmup) {
      state.step_size = da.update(accept, settings.target_accept);
      const bool in_mass_window = it >= window_start && next_window < window_ends.size();
      if (in_mass_window) {
        ++w_n;
        const Eigen::VectorXd delta = current.x - w_mean;
        w_mean += delta / static_cast<double>(w_n);
        w_m2 += (delta.array() * (current.x - w_mean).array()).matrix();
        if (it + 1 == window_ends[next_window]) {
          const double n = static_cast<double>(w_n);
          if (w_n > 1) {
            const Eigen::VectorXd var = w_m2 / (n - 1.0);
            state.mass_diag = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
          }
          w_mean.setZero();
          w_m2.setZero();
          w_n = 0;
          window_start = it + 1;
          ++next_window;
          state.step_size = find_reasonable_step(target, current, state.mass_diag, state.step_size, rng);
          da.restart(state.step_size);
        }
      }
      if (it + 1 == warmup) state.step_size = da.final_step();
    } else {
      const int k = it - warmup;
      result.draws.row(k) = current.x.transpose();
      result.log_density(k) = current.logp;
      result.accept_stat(k) = accept;
      result.divergent[static_cast<std::size_t>(k)] = divergent ? 1 : 0;
    }
    state.iteration = it + 1;
  }
  state.position = current.x;
  result.final_state = state;
  return result;
}

int PosteriorDraws::n_divergent() const {
  int n = 0;
  for (int c = 0; c < n_chains(); ++c) n += divergent_in_chain(c);
  return n;
}

int PosteriorDraws::divergent_in_chain(int chain) const {
  const auto& d = divergent[static_cast<std::size_t>(chain)];
  return static_cast<int>(std::count(d.begin(), d.end(), 1));
}

Eigen::Index PosteriorDraws::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return static_cast<Eigen::Index>(it - names.begin());
}

Eigen::MatrixXd PosteriorDraws::column(Eigen::Index coordinate) const {
  Eigen::MatrixXd out(n_iters(), n_chains());
  for (int c = 0; c < n_chains(); ++c) out.col(c) = chains[static_cast<std::size_t>(c)].col(coordinate);
  return out;
}

Eigen::VectorXd PosteriorDraws::draw(int d) const {
  const int iters = n_iters();
  return chains[static_cast<std::size_t>(d / iters)].row(d % iters).transpose();
}

PosteriorDraws run_chains(const LogDensity& target, const Eigen::VectorXd& init_center,
                          std::vector<std::string> names, int n_chains,
                          const HmcSettings& settings, std::uint64_t seed, int jobs) {
  if (n_chains < 1) throw std::invalid_argument("run_chains: need at least one chain");
  if (settings.warmup < 100) throw std::invalid_argument("run_chains: warmup must be >= 100");
  if (settings.iters < 1) throw std::invalid_argument("run_chains: iters must be >= 1");
  std::vector<ChainResult> results(static_cast<std::size_t>(n_chains));
  parallel_for(results.size(), jobs <= 0 ? n_chains : jobs, [&](std::size_t c) {
    results[c] = run_hmc(target, init_center, settings, seed, static_cast<int>(c));
  });
  PosteriorDraws out;
  out.names = std::move(names);
  out.seed = seed;
  out.warmup = settings.warmup;
  for (auto& r : results) {
    out.chains.push_back(std::move(r.draws));
    out.log_density.push_back(std::move(r.log_density));
    out.accept_stat.push_back(std::move(r.accept_stat));
    out.divergent.push_back(std::move(r.divergent));
    out.step_size.push_back(r.final_state.step_size);
    out.mass_diag.push_back(std::move(r.final_state.mass_diag));
  }
  const double frac = static_cast<double>(out.n_divergent()) / out.n_draws();
  out.unreliable = frac > settings.max_divergence_fraction;
  return out;
}

PosteriorDraws run_chains(const ModelSpec& model, const PanelDataset& data, int n_chains,
                          int warmup, int iters, std::uint64_t seed, int jobs) {
  const ModelEvaluator evaluator(model, data);
  const ModelDensity density(evaluator);
  HmcSettings settings;
  settings.warmup = warmup;
  settings.iters = iters;
  settings.leapfrog_steps = model.config.leapfrog_steps;
  settings.target_accept = model.config.target_accept;
  settings.init_radius = model.config.init_radius;
  return run_chains(density, evaluator.initial_center(), model.coordinate_names(), n_chains,
                    settings, seed, jobs);
}

}  // namespace mtgp
