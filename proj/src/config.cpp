#include "mtgp/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace mtgp {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

Eigen::VectorXd read_vector(const json& v, const char* key) {
  if (!v.is_array()) throw ConfigError(std::string("fixed.") + key + " must be an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) out(static_cast<Eigen::Index>(k)) = v[k].get<double>();
  return out;
}

// Row-major nested arrays.
Eigen::MatrixXd read_matrix(const json& v, const char* key) {
  if (!v.is_array() || v.empty() || !v[0].is_array()) {
    throw ConfigError(std::string("fixed.") + key + " must be a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(v.size());
  const auto cols = static_cast<Eigen::Index>(v[0].size());
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(v[r].size()) != cols) {
      throw ConfigError(std::string("fixed.") + key + " rows have unequal length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = v[r][c].get<double>();
  }
  return out;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

Heteroskedasticity parse_hetero(const std::string& s) {
  if (s == "sqrt_population") return Heteroskedasticity::sqrt_population;
  if (s == "population") return Heteroskedasticity::population;
  if (s == "none") return Heteroskedasticity::none;
  throw ConfigError("heteroskedasticity must be sqrt_population, population or none");
}

std::string hetero_name(Heteroskedasticity h) {
  switch (h) {
    case Heteroskedasticity::sqrt_population: return "sqrt_population";
    case Heteroskedasticity::population: return "population";
    case Heteroskedasticity::none: return "none";
  }
  return "none";
}

void read_inv_gamma(const json& priors, const char* key, InvGammaPrior& out) {
  if (!priors.contains(key)) return;
  const json& p = priors.at(key);
  check_keys(p, {"shape", "scale"}, std::string("priors.") + key + ".");
  read(p, "shape", out.shape);
  read(p, "scale", out.scale);
  if (!(out.shape > 0 && out.scale > 0)) throw ConfigError(std::string("priors.") + key + " must be positive");
}

}  // namespace

ModelConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root,
             {"likelihood", "rank", "mean_model", "priors", "fixed", "heteroskedasticity",
              "population_unit", "seed", "chains", "warmup", "iters", "leapfrog_steps",
              "target_accept", "init_radius", "jobs", "treated_unit", "t0", "last_pre_time",
              "value_kind"},
             "");
  ModelConfig c;
  if (root.contains("likelihood")) {
    try {
      c.likelihood = parse_likelihood(root.at("likelihood").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  read(root, "rank", c.rank);
  if (c.rank < 0) throw ConfigError("rank must be >= 0");
  if (root.contains("mean_model")) {
    const json& m = root.at("mean_model");
    check_keys(m, {"unit_intercepts", "global_trend", "covariates"}, "mean_model.");
    read(m, "unit_intercepts", c.mean_model.unit_intercepts);
    read(m, "global_trend", c.mean_model.global_trend);
    read(m, "covariates", c.mean_model.covariates);
  }
  if (root.contains("priors")) {
    const json& p = root.at("priors");
    check_keys(p,
               {"rho_time", "rho_global", "alpha_time_sd", "alpha_global_sd", "sigma_sd",
                "beta_sd", "nu_sd", "eta_sd", "outcome_factor_sd", "mu_mean", "mu_sd"},
               "priors.");
    read_inv_gamma(p, "rho_time", c.priors.rho_time);
    read_inv_gamma(p, "rho_global", c.priors.rho_global);
    read(p, "alpha_time_sd", c.priors.alpha_time_sd);
    read(p, "alpha_global_sd", c.priors.alpha_global_sd);
    read(p, "sigma_sd", c.priors.sigma_sd);
    read(p, "beta_sd", c.priors.beta_sd);
    read(p, "nu_sd", c.priors.nu_sd);
    read(p, "eta_sd", c.priors.eta_sd);
    read(p, "outcome_factor_sd", c.priors.outcome_factor_sd);
    read(p, "mu_mean", c.priors.mu_mean);
    read(p, "mu_sd", c.priors.mu_sd);
    for (double sd : {c.priors.alpha_time_sd, c.priors.alpha_global_sd, c.priors.sigma_sd,
                      c.priors.beta_sd, c.priors.nu_sd, c.priors.eta_sd,
                      c.priors.outcome_factor_sd, c.priors.mu_sd}) {
      if (!(sd > 0)) throw ConfigError("prior scales must be positive");
    }
  }
  if (root.contains("fixed")) {
    const json& f = root.at("fixed");
    check_keys(f, {"rho_time", "alpha_time", "rho_global", "alpha_global", "sigma", "loadings", "mu", "nu"},
               "fixed.");
    if (f.contains("rho_time")) c.fixed.rho_time = f.at("rho_time").get<double>();
    if (f.contains("alpha_time")) c.fixed.alpha_time = f.at("alpha_time").get<double>();
    if (f.contains("rho_global")) c.fixed.rho_global = f.at("rho_global").get<double>();
    if (f.contains("alpha_global")) c.fixed.alpha_global = f.at("alpha_global").get<double>();
    if (f.contains("sigma")) c.fixed.sigma = read_vector(f.at("sigma"), "sigma");
    if (f.contains("mu")) c.fixed.mu = read_vector(f.at("mu"), "mu");
    if (f.contains("loadings")) c.fixed.loadings = read_matrix(f.at("loadings"), "loadings");
    if (f.contains("nu")) c.fixed.nu = read_matrix(f.at("nu"), "nu");
  }
  if (root.contains("heteroskedasticity")) {
    c.heteroskedasticity = parse_hetero(root.at("heteroskedasticity").get<std::string>());
  }
  read(root, "population_unit", c.population_unit);
  read(root, "seed", c.seed);
  read(root, "chains", c.chains);
  read(root, "warmup", c.warmup);
  read(root, "iters", c.iters);
  read(root, "leapfrog_steps", c.leapfrog_steps);
  read(root, "target_accept", c.target_accept);
  read(root, "init_radius", c.init_radius);
  read(root, "jobs", c.jobs);
  read(root, "treated_unit", c.treated_unit);
  if (root.contains("t0")) c.t0 = root.at("t0").get<int>();
  if (root.contains("last_pre_time")) c.last_pre_time = root.at("last_pre_time").get<long>();
  if (root.contains("value_kind")) {
    const auto k = root.at("value_kind").get<std::string>();
    if (k == "count") c.value_kind = ValueKind::count;
    else if (k == "rate") c.value_kind = ValueKind::rate;
    else throw ConfigError("value_kind must be count or rate");
  }
  if (c.chains < 1) throw ConfigError("chains must be >= 1");
  if (c.leapfrog_steps < 1) throw ConfigError("leapfrog_steps must be >= 1");
  if (!(c.target_accept > 0 && c.target_accept < 1)) throw ConfigError("target_accept must be in (0,1)");
  if (!(c.population_unit > 0)) throw ConfigError("population_unit must be positive");
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  return c;
}

ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ModelConfig& c) {
  json root;
  root["likelihood"] = to_string(c.likelihood);
  root["rank"] = c.rank;
  root["mean_model"] = {{"unit_intercepts", c.mean_model.unit_intercepts},
                        {"global_trend", c.mean_model.global_trend},
                        {"covariates", c.mean_model.covariates}};
  const auto& p = c.priors;
  root["priors"] = {{"rho_time", {{"shape", p.rho_time.shape}, {"scale", p.rho_time.scale}}},
                    {"rho_global", {{"shape", p.rho_global.shape}, {"scale", p.rho_global.scale}}},
                    {"alpha_time_sd", p.alpha_time_sd},
                    {"alpha_global_sd", p.alpha_global_sd},
                    {"sigma_sd", p.sigma_sd},
                    {"beta_sd", p.beta_sd},
                    {"nu_sd", p.nu_sd},
                    {"eta_sd", p.eta_sd},
                    {"outcome_factor_sd", p.outcome_factor_sd},
                    {"mu_mean", p.mu_mean},
                    {"mu_sd", p.mu_sd}};
  json fixed = json::object();
  if (c.fixed.rho_time) fixed["rho_time"] = *c.fixed.rho_time;
  if (c.fixed.alpha_time) fixed["alpha_time"] = *c.fixed.alpha_time;
  if (c.fixed.rho_global) fixed["rho_global"] = *c.fixed.rho_global;
  if (c.fixed.alpha_global) fixed["alpha_global"] = *c.fixed.alpha_global;
  if (c.fixed.sigma) fixed["sigma"] = vector_json(*c.fixed.sigma);
  if (c.fixed.mu) fixed["mu"] = vector_json(*c.fixed.mu);
  if (c.fixed.loadings) fixed["loadings"] = matrix_json(*c.fixed.loadings);
  if (c.fixed.nu) fixed["nu"] = matrix_json(*c.fixed.nu);
  if (!fixed.empty()) root["fixed"] = fixed;
  root["heteroskedasticity"] = hetero_name(c.heteroskedasticity);
  root["population_unit"] = c.population_unit;
  root["seed"] = c.seed;
  root["chains"] = c.chains;
  root["warmup"] = c.warmup;
  root["iters"] = c.iters;
  root["leapfrog_steps"] = c.leapfrog_steps;
  root["target_accept"] = c.target_accept;
  root["init_radius"] = c.init_radius;
  root["jobs"] = c.jobs;
  if (!c.treated_unit.empty()) root["treated_unit"] = c.treated_unit;
  if (c.t0) root["t0"] = *c.t0;
  if (c.last_pre_time) root["last_pre_time"] = *c.last_pre_time;
  if (c.value_kind) root["value_kind"] = *c.value_kind == ValueKind::count ? "count" : "rate";
  return root.dump(2);
}

}  // namespace mtgp
