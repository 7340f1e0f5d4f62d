#ifndef MTGP_CONFIG_HPP
#define MTGP_CONFIG_HPP

#include "mtgp/model.hpp"

#include <stdexcept>
#include <string>

namespace mtgp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a JSON model configuration. Unknown top-level keys are rejected so that typos
/// surface instead of silently falling back to defaults.
ModelConfig parse_config(const std::string& json_text);
ModelConfig load_config(const std::string& path);

/// Canonical JSON (sorted keys, every field spelled out); parse_config(to_json(c)) == c.
std::string config_to_json(const ModelConfig& config);

}  // namespace mtgp

#endif  // MTGP_CONFIG_HPP
