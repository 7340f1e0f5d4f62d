#include "mtgp/archive.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace mtgp {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ArchiveError("malformed number '" + s + "' in " + where);
  }
}

}  // namespace

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArchiveError("cannot write '" + path + "'");
  out << text;
}

std::string manifest_to_json(const RunManifest& m) {
  ordered_json j;
  j["version"] = m.version;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["data_path"] = m.data_path;
  j["data_fingerprint"] = m.data_fingerprint;
  j["chains"] = m.chains;
  j["warmup"] = m.warmup;
  j["iters"] = m.iters;
  j["divergences"] = m.divergences;
  j["divergences_per_chain"] = m.divergences_per_chain;
  j["unreliable"] = m.unreliable;
  if (m.max_rhat) j["max_rhat"] = *m.max_rhat;
  else j["max_rhat"] = "unavailable (single chain)";
  j["min_bulk_ess"] = m.min_bulk_ess;
  j["converged"] = m.converged;
  return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.data_path = j.at("data_path").get<std::string>();
    m.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    m.chains = j.at("chains").get<int>();
    m.warmup = j.at("warmup").get<int>();
    m.iters = j.at("iters").get<int>();
    m.divergences = j.at("divergences").get<int>();
    m.divergences_per_chain = j.at("divergences_per_chain").get<std::vector<int>>();
    m.unreliable = j.at("unreliable").get<bool>();
    if (j.at("max_rhat").is_number()) m.max_rhat = j.at("max_rhat").get<double>();
    m.min_bulk_ess = j.at("min_bulk_ess").get<double>();
    m.converged = j.at("converged").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("malformed manifest: ") + e.what());
  }
}

void write_draws(const PosteriorDraws& draws, const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "draws";
  fs::create_directories(dir);
  for (int c = 0; c < draws.n_chains(); ++c) {
    const Eigen::MatrixXd& m = draws.chains[static_cast<std::size_t>(c)];
    std::string body = "param,iteration,value\n";
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      const std::string& name = draws.names[static_cast<std::size_t>(k)];
      const std::string quoted = name.find(',') == std::string::npos ? name : "\"" + name + "\"";
      for (Eigen::Index i = 0; i < m.rows(); ++i) body += quoted + "," + std::to_string(i) + "," + g17(m(i, k)) + "\n";
    }
    write_text((dir / ("chain_" + std::to_string(c) + ".csv")).string(), body);
    std::string stats = "iteration,log_density,accept_stat,divergent\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      stats += std::to_string(i) + "," + g17(draws.log_density[static_cast<std::size_t>(c)](i)) + "," +
               g17(draws.accept_stat[static_cast<std::size_t>(c)](i)) + "," +
               (draws.divergent[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] ? "1" : "0") + "\n";
    }
    write_text((dir / ("chain_" + std::to_string(c) + "_stats.csv")).string(), stats);
  }
  ordered_json a;
  a["names"] = draws.names;
  a["seed"] = draws.seed;
  a["warmup"] = draws.warmup;
  a["unreliable"] = draws.unreliable;
  std::vector<std::string> steps;
  for (double s : draws.step_size) steps.push_back(g17(s));
  a["step_size"] = steps;
  ordered_json mass = ordered_json::array();
  for (const auto& md : draws.mass_diag) {
    std::vector<std::string> v;
    for (Eigen::Index k = 0; k < md.size(); ++k) v.push_back(g17(md(k)));
    mass.push_back(v);
  }
  a["mass_diag"] = mass;
  write_text((dir / "adaptation.json").string(), a.dump(1) + "\n");
}

PosteriorDraws read_draws(const std::string& run_dir) {
  const fs::path dir = fs::path(run_dir) / "draws";
  const std::string adapt_path = (dir / "adaptation.json").string();
  PosteriorDraws d;
  try {
    const ordered_json a = ordered_json::parse(read_text(adapt_path));
    d.names = a.at("names").get<std::vector<std::string>>();
    d.seed = a.at("seed").get<std::uint64_t>();
    d.warmup = a.at("warmup").get<int>();
    d.unreliable = a.at("unreliable").get<bool>();
    for (const auto& s : a.at("step_size")) d.step_size.push_back(parse_double(s.get<std::string>(), adapt_path));
    for (const auto& row : a.at("mass_diag")) {
      Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
      for (std::size_t k = 0; k < row.size(); ++k) v(static_cast<Eigen::Index>(k)) = parse_double(row[k].get<std::string>(), adapt_path);
      d.mass_diag.push_back(v);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError("malformed " + adapt_path + ": " + e.what());
  }
  std::map<std::string, Eigen::Index> column;
  for (std::size_t k = 0; k < d.names.size(); ++k) column[d.names[k]] = static_cast<Eigen::Index>(k);
  const auto dim = static_cast<Eigen::Index>(d.names.size());
  for (std::size_t c = 0; c < d.step_size.size(); ++c) {
    const std::string stats_path = (dir / ("chain_" + std::to_string(c) + "_stats.csv")).string();
    std::istringstream stats(read_text(stats_path));
    std::string line;
    std::getline(stats, line);
    std::vector<double> lp, acc;
    std::vector<char> div;
    while (std::getline(stats, line)) {
      if (line.empty()) continue;
      const auto f = split(line);
      if (f.size() != 4) throw ArchiveError("malformed row in " + stats_path);
      lp.push_back(parse_double(f[1], stats_path));
      acc.push_back(parse_double(f[2], stats_path));
      div.push_back(f[3] == "1" ? 1 : 0);
    }
    const auto iters = static_cast<Eigen::Index>(lp.size());
    d.log_density.push_back(Eigen::Map<Eigen::VectorXd>(lp.data(), iters));
    d.accept_stat.push_back(Eigen::Map<Eigen::VectorXd>(acc.data(), iters));
    d.divergent.push_back(div);

    const std::string path = (dir / ("chain_" + std::to_string(c) + ".csv")).string();
    std::istringstream in(read_text(path));
    std::getline(in, line);
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(iters, dim, std::numeric_limits<double>::quiet_NaN());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::string name;
      std::string rest;
      if (line.front() == '"') {
        const auto close = line.find('"', 1);
        name = line.substr(1, close - 1);
        rest = line.substr(close + 2);
      } else {
        const auto comma = line.find(',');
        name = line.substr(0, comma);
        rest = line.substr(comma + 1);
      }
      const auto f = split(rest);
      const auto it = column.find(name);
      if (it == column.end() || f.size() != 2) throw ArchiveError("malformed row in " + path + ": " + line);
      const long i = std::stol(f[0]);
      if (i < 0 || i >= iters) throw ArchiveError("iteration out of range in " + path);
      m(i, it->second) = parse_double(f[1], path);
    }
    if (!m.allFinite()) throw ArchiveError("incomplete draw archive " + path);
    d.chains.push_back(std::move(m));
  }
  if (d.chains.empty()) throw ArchiveError("no chains in " + dir.string());
  return d;
}

}  // namespace mtgp
