#ifndef MTGP_PANEL_HPP
#define MTGP_PANEL_HPP

#include <Eigen/Dense>

#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtgp {

/// Raised for malformed or inconsistent panel input.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ValueKind { count, rate };

/// Persons per rate unit; every rate in the library is per 100,000.
inline constexpr double kRatePer = 1e5;

struct Cell {
  int unit = 0;
  int time = 0;
  int outcome = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Column names of the long-format input file.
struct PanelSchema {
  std::string unit = "unit";
  std::string time = "time";
  std::string outcome = "outcome";
  std::string value = "value";
  std::string population = "population";
  std::string covariate_prefix = "cov_";

  std::string treated_unit;
  /// Number of pre-treatment periods; alternatively give the last pre-treatment time id.
  std::optional<int> t0;
  std::optional<long> last_pre_time;
  /// Unset means: counts when every value is integral, rates otherwise.
  std::optional<ValueKind> kind;
};

/// An N x T x L panel with one treated unit. Cells absent from the input are masked.
///
/// Storage order is time-major, unit, then outcome: index (t*N + i)*L + l. This is the
/// column-stacking vec of the N x T outcome matrix and matches K_time (x) K_unit (x) K_outcome.
///
/// Immutable after construction. Post-treatment outcomes of the treated unit are only
/// reachable through TreatedOutcomeReader, which counts accesses.
class PanelDataset {
 public:
  PanelDataset(std::vector<std::string> unit_ids, std::vector<long> time_ids,
               std::vector<std::string> outcome_names, std::vector<double> values,
               std::vector<double> populations, Eigen::MatrixXd covariates,
               std::vector<std::string> covariate_names, int treated_unit, int t0,
               ValueKind kind);

  int n_units() const { return static_cast<int>(unit_ids_.size()); }
  int n_times() const { return static_cast<int>(time_ids_.size()); }
  int n_outcomes() const { return static_cast<int>(outcome_names_.size()); }
  int n_covariates() const { return static_cast<int>(covariates_.cols()); }
  int treated_unit() const { return treated_unit_; }
  int t0() const { return t0_; }
  ValueKind kind() const { return kind_; }

  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<long>& time_ids() const { return time_ids_; }
  const std::vector<std::string>& outcome_names() const { return outcome_names_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }

  /// Time ids as reals, for kernel distances.
  std::vector<double> time_positions() const;

  std::size_t index(int unit, int time, int outcome) const {
    return (static_cast<std::size_t>(time) * unit_ids_.size() + unit) * outcome_names_.size() +
           outcome;
  }

  bool is_target(int unit, int time) const { return unit == treated_unit_ && time >= t0_; }
  bool present(int unit, int time, int outcome) const;
  /// True for cells that enter the likelihood.
  bool is_control_observed(int unit, int time, int outcome) const {
    return !is_target(unit, time) && present(unit, time, outcome);
  }
  /// Observed value of a control cell. Throws for target or masked cells.
  double control_value(int unit, int time, int outcome) const;
  double population(int unit, int time) const {
    return populations_[static_cast<std::size_t>(time) * unit_ids_.size() + unit];
  }

  /// Value on the per-100,000 rate scale (counts are converted with the population).
  double to_rate(double value, int unit, int time) const {
    return kind_ == ValueKind::count ? value * kRatePer / population(unit, time) : value;
  }

  std::size_t treated_post_reads() const { return treated_reads_->load(); }

  // Derived panels. None of them exposes treated post-treatment outcomes.
  PanelDataset with_t0(int t0) const;
  /// Keeps the first n_times periods.
  PanelDataset truncated(int n_times) const;
  PanelDataset without_unit(int unit) const;
  PanelDataset with_masked(const std::vector<Cell>& cells) const;
  /// Replaces control-cell values (used by simulation); target cells untouched.
  PanelDataset with_values(std::vector<double> values) const;

 private:
  friend class TreatedOutcomeReader;

  std::vector<std::string> unit_ids_;
  std::vector<long> time_ids_;
  std::vector<std::string> outcome_names_;
  std::vector<double> values_;  // NaN marks an absent cell
  std::vector<double> populations_;
  Eigen::MatrixXd covariates_;
  std::vector<std::string> covariate_names_;
  int treated_unit_;
  int t0_;
  ValueKind kind_;
  std::shared_ptr<std::atomic<std::size_t>> treated_reads_;
};

/// The only door to Y_1t(1), t > T0. Each read is counted on the dataset.
class TreatedOutcomeReader {
 public:
  explicit TreatedOutcomeReader(const PanelDataset& data) : data_(data) {}
  bool present(int time, int outcome) const;
  double value(int time, int outcome) const;

 private:
  const PanelDataset& data_;
};

/// Partition of the non-masked grid into the control set and the counterfactual targets.
struct ControlIndexSet {
  std::vector<Cell> control;
  std::vector<Cell> missing;
  std::vector<Cell> masked;
};

ControlIndexSet split_observed_missing(const PanelDataset& data);

PanelDataset load_panel(const std::string& path, const PanelSchema& schema);
PanelDataset parse_panel(const std::string& text, const PanelSchema& schema);
void write_panel(const PanelDataset& data, const std::string& path);
std::string format_panel(const PanelDataset& data);

/// FNV-1a 64-bit digest, hex encoded.
std::string fingerprint(const std::string& bytes);

}  // namespace mtgp

#endif  // MTGP_PANEL_HPP
