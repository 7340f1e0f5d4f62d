#include "mtgp/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace mtgp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(field);
  return fields;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

double parse_real(const std::string& s, std::size_t row, const std::string& column) {
  const std::string t = trim(s);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw DataError("row " + std::to_string(row) + ": column '" + column +
                    "' is not a number: '" + s + "'");
  }
  return out;
}

long parse_time(const std::string& s, std::size_t row) {
  const std::string t = trim(s);
  long out = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw DataError("row " + std::to_string(row) + ": time id must be an integer: '" + s + "'");
  }
  return out;
}

std::string format_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

PanelDataset::PanelDataset(std::vector<std::string> unit_ids, std::vector<long> time_ids,
                           std::vector<std::string> outcome_names, std::vector<double> values,
                           std::vector<double> populations, Eigen::MatrixXd covariates,
                           std::vector<std::string> covariate_names, int treated_unit, int t0,
                           ValueKind kind)
    : unit_ids_(std::move(unit_ids)),
      time_ids_(std::move(time_ids)),
      outcome_names_(std::move(outcome_names)),
      values_(std::move(values)),
      populations_(std::move(populations)),
      covariates_(std::move(covariates)),
      covariate_names_(std::move(covariate_names)),
      treated_unit_(treated_unit),
      t0_(t0),
      kind_(kind),
      treated_reads_(std::make_shared<std::atomic<std::size_t>>(0)) {
  const auto n = unit_ids_.size();
  const auto t = time_ids_.size();
  const auto l = outcome_names_.size();
  if (n < 2) throw DataError("panel needs at least 2 units");
  if (l < 1) throw DataError("panel needs at least 1 outcome");
  if (t < 2) throw DataError("panel needs at least 2 time periods");
  if (t0_ <= 0 || t0_ >= static_cast<int>(t)) {
    throw DataError("t0 must satisfy 0 < t0 < T (t0=" + std::to_string(t0_) +
                    ", T=" + std::to_string(t) + ")");
  }
  if (treated_unit_ < 0 || treated_unit_ >= static_cast<int>(n)) {
    throw DataError("treated unit index out of range");
  }
  if (!std::is_sorted(time_ids_.begin(), time_ids_.end()) ||
      std::adjacent_find(time_ids_.begin(), time_ids_.end()) != time_ids_.end()) {
    throw DataError("time ids must be strictly increasing");
  }
  if (values_.size() != n * t * l) throw DataError("values size does not match N*T*L");
  if (populations_.size() != n * t) throw DataError("populations size does not match N*T");
  if (covariates_.rows() != 0 && covariates_.rows() != static_cast<Eigen::Index>(n)) {
    throw DataError("covariates must have one row per unit");
  }
  if (covariate_names_.size() != static_cast<std::size_t>(covariates_.cols())) {
    throw DataError("covariate names do not match covariate columns");
  }
  if (!covariates_.allFinite()) throw DataError("covariates must be finite");

  for (int ti = 0; ti < static_cast<int>(t); ++ti) {
    for (int i = 0; i < static_cast<int>(n); ++i) {
      for (int o = 0; o < static_cast<int>(l); ++o) {
        const double v = values_[index(i, ti, o)];
        if (std::isnan(v)) continue;
        // Rates may dip below zero under a Gaussian simulation; counts may not.
        if (!std::isfinite(v) || (kind_ == ValueKind::count && v < 0.0)) {
          throw DataError("outcome at unit '" + unit_ids_[i] + "', time " +
                          std::to_string(time_ids_[ti]) + " must be finite" +
                          (kind_ == ValueKind::count ? " and non-negative" : ""));
        }
        if (kind_ == ValueKind::count && v != std::floor(v)) {
          throw DataError("count outcome at unit '" + unit_ids_[i] + "', time " +
                          std::to_string(time_ids_[ti]) + " is not an integer");
        }
        const double pop = population(i, ti);
        if (!(pop > 0.0) || !std::isfinite(pop)) {
          throw DataError("population must be positive where the outcome is observed (unit '" +
                          unit_ids_[i] + "', time " + std::to_string(time_ids_[ti]) + ")");
        }
      }
    }
  }
}

std::vector<double> PanelDataset::time_positions() const {
  return {time_ids_.begin(), time_ids_.end()};
}

bool PanelDataset::present(int unit, int time, int outcome) const {
  return !std::isnan(values_[index(unit, time, outcome)]);
}

double PanelDataset::control_value(int unit, int time, int outcome) const {
  if (is_target(unit, time)) {
    throw std::logic_error("control_value called on a treated post-treatment cell");
  }
  const double v = values_[index(unit, time, outcome)];
  if (std::isnan(v)) throw std::logic_error("control_value called on a masked cell");
  return v;
}

PanelDataset PanelDataset::with_t0(int t0) const {
  if (t0 > t0_) throw DataError("with_t0 may only move the treatment time earlier");
  return PanelDataset(unit_ids_, time_ids_, outcome_names_, values_, populations_, covariates_,
                      covariate_names_, treated_unit_, t0, kind_);
}

PanelDataset PanelDataset::truncated(int n_times) const {
  if (n_times > t0_) throw DataError("truncation must not keep post-treatment periods");
  const auto n = unit_ids_.size();
  const auto l = outcome_names_.size();
  std::vector<long> times(time_ids_.begin(), time_ids_.begin() + n_times);
  std::vector<double> values(values_.begin(), values_.begin() + n * l * n_times);
  std::vector<double> pops(populations_.begin(), populations_.begin() + n * n_times);
  // The truncated panel needs a valid t0; callers follow with with_t0.
  return PanelDataset(unit_ids_, std::move(times), outcome_names_, std::move(values),
                      std::move(pops), covariates_, covariate_names_, treated_unit_,
                      std::min(t0_, n_times - 1), kind_);
}

PanelDataset PanelDataset::without_unit(int unit) const {
  if (unit == treated_unit_) throw DataError("cannot drop the treated unit");
  const int n = n_units();
  const int t = n_times();
  const int l = n_outcomes();
  std::vector<std::string> ids;
  std::vector<double> values;
  std::vector<double> pops;
  for (int i = 0; i < n; ++i) {
    if (i != unit) ids.push_back(unit_ids_[i]);
  }
  for (int ti = 0; ti < t; ++ti) {
    for (int i = 0; i < n; ++i) {
      if (i == unit) continue;
      pops.push_back(population(i, ti));
      for (int o = 0; o < l; ++o) values.push_back(values_[index(i, ti, o)]);
    }
  }
  Eigen::MatrixXd cov = covariates_;
  if (cov.rows() > 0) {
    Eigen::MatrixXd reduced(cov.rows() - 1, cov.cols());
    for (int i = 0, r = 0; i < n; ++i) {
      if (i != unit) reduced.row(r++) = cov.row(i);
    }
    cov = reduced;
  }
  const int treated = treated_unit_ > unit ? treated_unit_ - 1 : treated_unit_;
  return PanelDataset(std::move(ids), time_ids_, outcome_names_, std::move(values),
                      std::move(pops), std::move(cov), covariate_names_, treated, t0_, kind_);
}

PanelDataset PanelDataset::with_masked(const std::vector<Cell>& cells) const {
  std::vector<double> values = values_;
  for (const auto& c : cells) {
    if (is_target(c.unit, c.time)) throw DataError("cannot mask a counterfactual target cell");
    values[index(c.unit, c.time, c.outcome)] = kNaN;
  }
  return PanelDataset(unit_ids_, time_ids_, outcome_names_, std::move(values), populations_,
                      covariates_, covariate_names_, treated_unit_, t0_, kind_);
}

PanelDataset PanelDataset::with_values(std::vector<double> values) const {
  if (values.size() != values_.size()) throw DataError("with_values: size mismatch");
  for (int ti = t0_; ti < n_times(); ++ti) {
    for (int o = 0; o < n_outcomes(); ++o) {
      values[index(treated_unit_, ti, o)] = values_[index(treated_unit_, ti, o)];
    }
  }
  return PanelDataset(unit_ids_, time_ids_, outcome_names_, std::move(values), populations_,
                      covariates_, covariate_names_, treated_unit_, t0_, kind_);
}

bool TreatedOutcomeReader::present(int time, int outcome) const {
  return data_.present(data_.treated_unit(), time, outcome);
}

double TreatedOutcomeReader::value(int time, int outcome) const {
  if (time < data_.t0()) return data_.control_value(data_.treated_unit(), time, outcome);
  data_.treated_reads_->fetch_add(1);
  const double v = data_.values_[data_.index(data_.treated_unit(), time, outcome)];
  if (std::isnan(v)) {
    throw DataError("treated outcome at time " + std::to_string(data_.time_ids()[time]) +
                    " is not in the panel");
  }
  return v;
}

ControlIndexSet split_observed_missing(const PanelDataset& data) {
  ControlIndexSet set;
  for (int t = 0; t < data.n_times(); ++t) {
    for (int i = 0; i < data.n_units(); ++i) {
      for (int l = 0; l < data.n_outcomes(); ++l) {
        const Cell c{i, t, l};
        if (data.is_target(i, t)) set.missing.push_back(c);
        else if (data.present(i, t, l)) set.control.push_back(c);
        else set.masked.push_back(c);
      }
    }
  }
  return set;
}

PanelDataset parse_panel(const std::string& text, const PanelSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty panel file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[trim(header[k])] = k;

  for (const auto* name : {&schema.unit, &schema.time, &schema.outcome, &schema.value,
                           &schema.population}) {
    if (!col.count(*name)) {
      throw DataError("missing column '" + *name +
                      "'; input must be long format: unit,time,outcome,value,population[,cov_*]");
    }
  }
  std::vector<std::pair<std::string, std::size_t>> cov_cols;
  for (std::size_t k = 0; k < header.size(); ++k) {
    const std::string h = trim(header[k]);
    if (h.rfind(schema.covariate_prefix, 0) == 0 && !schema.covariate_prefix.empty()) {
      cov_cols.emplace_back(h, k);
    }
  }

  struct Row {
    std::string unit;
    long time;
    std::string outcome;
    double value;
    double population;
    std::vector<double> cov;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::set<std::string> units;
  std::set<long> times;
  std::vector<std::string> outcomes;  // first-seen order
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw DataError("row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    Row r;
    r.unit = trim(f[col[schema.unit]]);
    r.time = parse_time(f[col[schema.time]], line_no);
    r.outcome = trim(f[col[schema.outcome]]);
    r.value = parse_real(f[col[schema.value]], line_no, schema.value);
    r.population = parse_real(f[col[schema.population]], line_no, schema.population);
    r.line = line_no;
    if (!(r.population > 0.0)) {
      throw DataError("row " + std::to_string(line_no) + ": population must be positive");
    }
    for (const auto& [name, k] : cov_cols) r.cov.push_back(parse_real(f[k], line_no, name));
    units.insert(r.unit);
    times.insert(r.time);
    if (std::find(outcomes.begin(), outcomes.end(), r.outcome) == outcomes.end()) {
      outcomes.push_back(r.outcome);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("panel file has no data rows");

  std::vector<std::string> unit_ids(units.begin(), units.end());
  std::vector<long> time_ids(times.begin(), times.end());
  std::sort(outcomes.begin(), outcomes.end());
  const auto unit_of = [&](const std::string& u) {
    return static_cast<int>(std::lower_bound(unit_ids.begin(), unit_ids.end(), u) -
                            unit_ids.begin());
  };
  const auto time_of = [&](long t) {
    return static_cast<int>(std::lower_bound(time_ids.begin(), time_ids.end(), t) -
                            time_ids.begin());
  };
  const auto outcome_of = [&](const std::string& o) {
    return static_cast<int>(std::lower_bound(outcomes.begin(), outcomes.end(), o) -
                            outcomes.begin());
  };

  const std::size_t n = unit_ids.size();
  const std::size_t t = time_ids.size();
  const std::size_t l = outcomes.size();
  std::vector<double> values(n * t * l, kNaN);
  std::vector<double> pops(n * t, kNaN);
  std::vector<std::size_t> seen(n * t * l, 0);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Constant(cov_cols.empty() ? 0 : n, cov_cols.size(), kNaN);

  bool all_integral = true;
  for (const auto& r : rows) {
    const int i = unit_of(r.unit);
    const int ti = time_of(r.time);
    const int o = outcome_of(r.outcome);
    const std::size_t idx = (static_cast<std::size_t>(ti) * n + i) * l + o;
    if (seen[idx] != 0) {
      throw DataError("row " + std::to_string(r.line) + ": duplicate (unit,time,outcome) = (" +
                      r.unit + "," + std::to_string(r.time) + "," + r.outcome +
                      "), first seen at row " + std::to_string(seen[idx]));
    }
    seen[idx] = r.line;
    values[idx] = r.value;
    if (r.value != std::floor(r.value)) all_integral = false;
    double& pop = pops[static_cast<std::size_t>(ti) * n + i];
    if (!std::isnan(pop) && pop != r.population) {
      throw DataError("row " + std::to_string(r.line) +
                      ": population differs from another row of the same unit and time");
    }
    pop = r.population;
    for (std::size_t k = 0; k < r.cov.size(); ++k) {
      double& c = cov(i, static_cast<Eigen::Index>(k));
      if (!std::isnan(c) && c != r.cov[k]) {
        throw DataError("row " + std::to_string(r.line) + ": covariate '" + cov_cols[k].first +
                        "' varies over time within unit '" + r.unit +
                        "'; only time-invariant covariates are supported");
      }
      c = r.cov[k];
    }
  }

  if (schema.treated_unit.empty()) throw DataError("treated unit not specified");
  const auto it = std::find(unit_ids.begin(), unit_ids.end(), schema.treated_unit);
  if (it == unit_ids.end()) throw DataError("unknown treated unit '" + schema.treated_unit + "'");
  const int treated = static_cast<int>(it - unit_ids.begin());

  int t0 = 0;
  if (schema.t0) {
    t0 = *schema.t0;
  } else if (schema.last_pre_time) {
    t0 = static_cast<int>(std::upper_bound(time_ids.begin(), time_ids.end(),
                                           *schema.last_pre_time) -
                          time_ids.begin());
  } else {
    throw DataError("treatment timing not specified (t0 or last pre-treatment time)");
  }

  ValueKind kind = schema.kind.value_or(all_integral ? ValueKind::count : ValueKind::rate);
  std::vector<std::string> cov_names;
  for (const auto& c : cov_cols) cov_names.push_back(c.first);
  return PanelDataset(std::move(unit_ids), std::move(time_ids), std::move(outcomes),
                      std::move(values), std::move(pops), std::move(cov), std::move(cov_names),
                      treated, t0, kind);
}

PanelDataset load_panel(const std::string& path, const PanelSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open panel file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_panel(ss.str(), schema);
}

std::string format_panel(const PanelDataset& data) {
  std::ostringstream out;
  out << "unit,time,outcome,value,population";
  for (const auto& c : data.covariate_names()) out << ',' << quote_if_needed(c);
  out << '\n';
  const TreatedOutcomeReader treated(data);
  for (int i = 0; i < data.n_units(); ++i) {
    for (int t = 0; t < data.n_times(); ++t) {
      for (int l = 0; l < data.n_outcomes(); ++l) {
        if (!data.present(i, t, l)) continue;
        const double v = data.is_target(i, t) ? treated.value(t, l) : data.control_value(i, t, l);
        out << quote_if_needed(data.unit_ids()[i]) << ',' << data.time_ids()[t] << ','
            << quote_if_needed(data.outcome_names()[l]) << ',' << format_real(v) << ','
            << format_real(data.population(i, t));
        for (int k = 0; k < data.n_covariates(); ++k) {
          out << ',' << format_real(data.covariates()(i, k));
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

void write_panel(const PanelDataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write panel file '" + path + "'");
  out << format_panel(data);
}

std::string fingerprint(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int k = 15; k >= 0; --k) {
    buf[k] = hex[h & 0xF];
    h >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

}  // namespace mtgp
