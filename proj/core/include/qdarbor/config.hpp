#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "qdarbor/ppga.hpp"

namespace qdarbor {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat dotted-key/value settings, e.g. "archive.resolution = 25,25".
using ConfigMap = std::map<std::string, std::string>;

ConfigMap preset_config(const std::string& name);  // "desk", "paper", "analytic"
ConfigMap parse_config_text(const std::string& text);
ConfigMap parse_config_file(const std::string& path);
void apply_override(ConfigMap& config, const std::string& key_equals_value);

RunConfig to_run_config(const ConfigMap& config);
std::string serialize_config(const ConfigMap& config);
// the fully defaulted key set actually used by a run
ConfigMap effective_config(const RunConfig& cfg);

}  // namespace qdarbor
