#pragma once

// Run configuration: flat key=value text with [section] headers. A key `k`
// under `[s]` is addressed as `s.k`. Unknown keys are rejected.

#include <chrnn/model.hpp>
#include <chrnn/train.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace chrnn {

class ConfigMap {
 public:
  /// Throws ConfigError naming `source` and the line on malformed input.
  static ConfigMap parse(const std::string& text, const std::string& source = "<config>");
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Sectioned text that parses back to the same map.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

struct DataConfig {
  std::string task = "synthetic";  // synthetic | idx
  std::string train_images;
  std::string train_labels;
  std::string val_images;
  std::string val_labels;
  std::size_t synthetic_train = 10000;
  std::size_t synthetic_val = 2000;
  std::uint64_t synthetic_seed = 7;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out = "run";
};

/// Defaults sized for the synthetic left-of task.
RunConfig default_run_config();

/// Applies every key of `map` on top of `base`. Throws ConfigError listing all
/// unknown keys, or naming the key whose value is invalid.
RunConfig apply_config(const ConfigMap& map, RunConfig base = default_run_config());

/// Every key with its effective value.
ConfigMap to_config_map(const RunConfig& config);

/// Names of all accepted keys.
std::vector<std::string> config_keys();

}  // namespace chrnn
