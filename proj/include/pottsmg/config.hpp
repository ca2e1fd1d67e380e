#pragma once

// Run configuration: a flat `key = value` file with `#` comments, keyed as
// net.*, train.* and data.*; command-line `--key value` pairs override it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pottsmg/dataio.hpp"
#include "pottsmg/params.hpp"
#include "pottsmg/trainer.hpp"

namespace pmg {

struct DataConfig {
  std::string train_dir = "data/train";
  std::string test_dir = "data/test";
  std::string out = "out";
  std::string checkpoint = "out/model.pmg";
  std::string log = "out/train_log.csv";
  std::vector<std::string> inputs;  // infer: image paths
  int size = 32;
  int count = 200;
  int test_count = 50;
  ShapeKind shapes = ShapeKind::Mixed;
  std::uint64_t seed = 7;
  std::vector<double> eval_sds{0.0, 0.3, 0.5, 0.8, 1.0};
  Precision precision = Precision::F64;
};

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

struct ConfigKey {
  std::string key;
  std::string source;  // where the default comes from
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// Parses `text` (file contents) on top of the defaults. `origin` names the
/// source in error messages.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "config");
RunConfig parse_config_file(const std::filesystem::path& path);

/// Applies `key value` overrides in order; errors name the key.
void apply_overrides(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Key table: one line per key with its default and source.
std::string describe_keys();

}  // namespace pmg
