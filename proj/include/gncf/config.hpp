// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gncf/train.hpp"

namespace gncf {

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

/// Every key accepted in a config file, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Throws ConfigError for an unknown key or a malformed value.
void set_config_value(TrainConfig& config, std::string_view key, const std::string& value);

/// Parses `key = value` lines over `base`; `#` starts a comment. Errors carry
/// `<source>:<line>:`. The result is validated unless `validate` is false.
TrainConfig parse_config(std::string_view text, const std::string& source = "<config>",
                         TrainConfig base = {}, bool validate = true);
TrainConfig load_config(const std::filesystem::path& path, bool validate = true);

/// `key = value` lines for every key, loadable by parse_config.
std::string dump_config(const TrainConfig& config);

}  // namespace gncf
