/*
 Copyright 2026 The trajlayer Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trajlayer/dataset.hpp"
#include "trajlayer/io.hpp"
#include "trajlayer/rollout.hpp"
#include "trajlayer/training.hpp"

/**
 * @file
 * @brief Run configuration: one INI-style file with sections [task], [data],
 * [train], [eval], [paths] and dotted-key overrides such as train.epochs=20.
 * Every key is listed in config_keys(); unknown keys are rejected.
 */

namespace trajlayer::config {

struct Paths {
  std::string dataset = "out/dataset.bin";
  std::string checkpoint = "out/checkpoint.bin";
  std::string train_log = "out/train_log.csv";
  std::string metrics_csv = "out/metrics.csv";
  std::string metrics_json = "out/metrics.json";
  std::string trace_csv;  // empty: no trace
};

struct RunConfig {
  dataset::TaskConfig task;
  int demos = 100;
  std::uint64_t data_seed = 0;
  training::TrainConfig train;
  rollout::EvalConfig eval;
  Paths paths;

  /// Throws ConfigError.
  void validate() const;
};

struct KeyInfo {
  std::string key;  // section.name
  std::string type;
  std::string help;
};

const std::vector<KeyInfo>& config_keys();

/// Throws ConfigError for an unknown key or an unparsable value.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_key(const RunConfig& cfg, const std::string& key);

/// "section.name=value"; throws ConfigError.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Throws IoError if unreadable, ConfigError on syntax errors or unknown keys.
RunConfig load_config_file(const std::filesystem::path& path);

/// Parses INI text on top of `base`. `origin` names the source in errors.
RunConfig parse_config(const std::string& text, RunConfig base = {},
                       const std::string& origin = "config");

/// INI text reproducing cfg exactly.
std::string to_ini(const RunConfig& cfg);

/// {section: {name: value}} with typed values.
io::Json to_json(const RunConfig& cfg);
/// Strict inverse of to_json; throws ConfigError.
RunConfig from_json(const io::Json& j);

/// Help text listing every key with its type, default and description.
std::string keys_help();

io::Json task_to_json(const dataset::TaskConfig& task);
dataset::TaskConfig task_from_json(const io::Json& j);
io::Json train_to_json(const training::TrainConfig& train);
training::TrainConfig train_from_json(const io::Json& j);

}  // namespace trajlayer::config
