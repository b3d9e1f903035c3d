#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "multimodel/train.hpp"

namespace mm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything the command-line tool can be told. Every field has a default.
struct Config {
  TrainConfig train;
  std::size_t battery_steps = 3000;
  std::string ckpt = "multimodel.ckpt";
  std::string out = "out";
};

/// Flat "key = value" lines; '#' starts a comment. Unknown keys, repeated
/// keys and malformed values are errors naming the line.
Config parse_config(std::string_view text, Config base = {});
Config load_config(const std::string& path, Config base = {});
/// Every key, one per line, in a fixed order.
std::string serialize_config(const Config& c);

/// Applies one key = value pair.
void set_config_value(Config& c, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace mm
