#ifndef MTGP_ARCHIVE_HPP
#define MTGP_ARCHIVE_HPP

#include "mtgp/model.hpp"
#include "mtgp/sampler.hpp"

#include <optional>
#include <stdexcept>
#include <string>

namespace mtgp {

inline constexpr const char* kVersion = "0.1.0";

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Identity of a fit run. Holds no wall-clock data, so identical inputs give identical
/// manifests; timings live next to it in timings.json.
struct RunManifest {
  std::string command = "fit";  // subcommand that created the directory
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string data_path;          // absolute path of the panel CSV
  std::string data_fingerprint;   // digest of the raw file bytes
  std::string version = kVersion;
  int chains = 0;
  int warmup = 0;
  int iters = 0;
  int divergences = 0;
  std::vector<int> divergences_per_chain;
  bool unreliable = false;
  std::optional<double> max_rhat;  // unset with a single chain
  double min_bulk_ess = 0.0;
  bool converged = true;
};

std::string manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const std::string& text);

/// draws/chain_<k>.csv (param,iteration,value) and draws/chain_<k>_stats.csv
/// (iteration,log_density,accept_stat,divergent) plus draws/adaptation.json.
/// Values are printed with 17 significant digits, so a round trip is exact.
void write_draws(const PosteriorDraws& draws, const std::string& run_dir);
PosteriorDraws read_draws(const std::string& run_dir);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace mtgp

#endif  // MTGP_ARCHIVE_HPP
