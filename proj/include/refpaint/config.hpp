#pragma once

// Training configuration as a flat `key = value` text file. Blank lines and
// lines starting with '#' are ignored; list values are comma-separated.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refpaint/data.hpp"
#include "refpaint/losses.hpp"
#include "refpaint/network.hpp"
#include "refpaint/rtv.hpp"

namespace refpaint {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 2e-4;
  int batch = 1;
  int epochs = 1;
  std::uint64_t seed = 0;
  int max_steps = 0;
  int checkpoint_interval = 0;
  int discriminator_channels = 16;
  ReferenceMode reference_mode = ReferenceMode::kReal;
  LossWeights weights;
  NetworkConfig network;
  RtvParams rtv;
  std::string manifest;
  std::string mask_dir;
  std::string output_dir = "run";
  std::string feature_weights;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

/// Every recognized key with its default, in file order.
std::vector<ConfigKey> config_keys();

/// Parses `text` on top of the defaults. Unknown keys, malformed values and
/// duplicates throw ConfigError with the line number.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// All keys, one `key = value` line each. Parsing the result reproduces the
/// configuration exactly.
std::string format_config(const TrainConfig& config);

/// A commented file listing every key at its default.
std::string default_config_text();

/// Reads or writes one key; used for checkpoint config snapshots.
std::string get_config_value(const TrainConfig& config, const std::string& key);
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);

}  // namespace refpaint
