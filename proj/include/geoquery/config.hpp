#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geoquery/pipeline.hpp"

namespace geoquery {

/// Flat `key = value` text: one entry per line, `#` starts a comment,
/// blank lines are ignored. Throws ConfigError on syntax errors and
/// duplicate keys.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text,
                                                                  const std::string& source = "config");

/// Applies entries on top of `base`. Unknown keys and unparsable values
/// throw ConfigError; the result is validated.
TrainConfig apply_config(const std::vector<std::pair<std::string, std::string>>& entries, TrainConfig base = {});

TrainConfig load_config(const std::string& path, TrainConfig base = {});

/// Keys accepted by apply_config, in documentation order.
std::vector<std::string> config_keys();

}  // namespace geoquery
