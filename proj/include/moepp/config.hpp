#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moepp/model.hpp"
#include "moepp/train.hpp"

namespace moepp {

/// Invalid run configuration. `key()` is the dotted path of the offending
/// entry, e.g. "layer.tau".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct CorpusConfig {
  std::string kind = "pattern";  // pattern | random-walk | uniform | file
  std::string path;              // kind == file
  std::size_t length = 4096;     // synthetic kinds
  double eval_fraction = 0.1;
};

struct SimConfig {
  std::size_t devices = 4;
  std::vector<double> tau_sweep{0.1, 0.25, 0.5, 0.75, 1.0};
};

struct IoConfig {
  std::string output_dir = "out";
  std::size_t trace_batches = 4;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;
  SimConfig sim;
  IoConfig io;
};

/// Defaults: tau 0.75, gamma 1.1, beta 0.01, K 2, 8 FFN + 1/1/2
/// zero/copy/constant experts, D 64, D_int 172, 4 layers.
RunConfig default_run_config();

/// Strict parse: unknown keys and wrong types raise ConfigError. Missing
/// keys keep their defaults. `layer.n_const` may be "auto".
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json to_json(const RunConfig& cfg);

nlohmann::json to_json(const LayerConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
LayerConfig layer_config_from_json(const nlohmann::json& j, const std::string& where = "layer");
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model");

}  // namespace moepp
