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

#include "trajlayer/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <variant>

namespace trajlayer::config {

namespace {

using FieldRef = std::variant<double*, int*, std::uint64_t*, std::string*, training::HeadKind*,
                              rollout::Baseline*>;

struct Entry {
  KeyInfo info;
  std::function<FieldRef(RunConfig&)> field;
};

template <class F>
Entry entry(std::string key, std::string type, std::string help, F f) {
  return Entry{{std::move(key), std::move(type), std::move(help)}, std::function<FieldRef(RunConfig&)>(f)};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto dbl = [&](const char* key, const char* help, auto f) { t.push_back(entry(key, "float", help, f)); };
    auto integer = [&](const char* key, const char* help, auto f) { t.push_back(entry(key, "int", help, f)); };
    auto u64 = [&](const char* key, const char* help, auto f) { t.push_back(entry(key, "uint", help, f)); };
    auto str = [&](const char* key, const char* help, auto f) { t.push_back(entry(key, "string", help, f)); };

    dbl("task.dt", "control period in seconds", [](RunConfig& c) -> FieldRef { return &c.task.dt; });
    dbl("task.v_max", "scripted controller speed cap", [](RunConfig& c) -> FieldRef { return &c.task.v_max; });
    dbl("task.gain", "scripted controller proportional gain (1/s)", [](RunConfig& c) -> FieldRef { return &c.task.gain; });
    dbl("task.ramp", "scripted controller max velocity change per step", [](RunConfig& c) -> FieldRef { return &c.task.ramp; });
    dbl("task.noise", "relative uniform velocity noise of demos", [](RunConfig& c) -> FieldRef { return &c.task.noise; });
    dbl("task.start_lo", "lower bound of start coordinates", [](RunConfig& c) -> FieldRef { return &c.task.start_lo; });
    dbl("task.start_hi", "upper bound of start coordinates", [](RunConfig& c) -> FieldRef { return &c.task.start_hi; });
    dbl("task.goal_lo", "lower bound of goal coordinates", [](RunConfig& c) -> FieldRef { return &c.task.goal_lo; });
    dbl("task.goal_hi", "upper bound of goal coordinates", [](RunConfig& c) -> FieldRef { return &c.task.goal_hi; });
    dbl("task.min_distance", "minimum start-goal distance", [](RunConfig& c) -> FieldRef { return &c.task.min_distance; });
    dbl("task.drop_radius", "scripted drop radius", [](RunConfig& c) -> FieldRef { return &c.task.drop_radius; });
    dbl("task.success_radius", "success distance to the goal", [](RunConfig& c) -> FieldRef { return &c.task.success_radius; });
    integer("task.hold_steps", "steps recorded after the drop", [](RunConfig& c) -> FieldRef { return &c.task.hold_steps; });
    integer("task.max_steps", "demo length cap", [](RunConfig& c) -> FieldRef { return &c.task.max_steps; });

    integer("data.demos", "number of demonstrations", [](RunConfig& c) -> FieldRef { return &c.demos; });
    u64("data.seed", "demonstration seed", [](RunConfig& c) -> FieldRef { return &c.data_seed; });

    integer("train.epochs", "training epochs", [](RunConfig& c) -> FieldRef { return &c.train.epochs; });
    integer("train.batch_size", "windows per batch", [](RunConfig& c) -> FieldRef { return &c.train.batch_size; });
    dbl("train.learning_rate", "Adam learning rate", [](RunConfig& c) -> FieldRef { return &c.train.learning_rate; });
    dbl("train.beta1", "Adam beta1", [](RunConfig& c) -> FieldRef { return &c.train.beta1; });
    dbl("train.beta2", "Adam beta2", [](RunConfig& c) -> FieldRef { return &c.train.beta2; });
    dbl("train.adam_eps", "Adam epsilon", [](RunConfig& c) -> FieldRef { return &c.train.adam_eps; });
    dbl("train.clip_norm", "global gradient norm clip", [](RunConfig& c) -> FieldRef { return &c.train.clip_norm; });
    u64("train.seed", "initialization and shuffling seed", [](RunConfig& c) -> FieldRef { return &c.train.seed; });
    integer("train.T_s", "window length", [](RunConfig& c) -> FieldRef { return &c.train.T_s; });
    integer("train.T_p", "prediction horizon", [](RunConfig& c) -> FieldRef { return &c.train.T_p; });
    integer("train.T_a", "executed steps per plan", [](RunConfig& c) -> FieldRef { return &c.train.T_a; });
    integer("train.stride", "window stride", [](RunConfig& c) -> FieldRef { return &c.train.stride; });
    dbl("train.alpha", "acceleration smoothing weight", [](RunConfig& c) -> FieldRef { return &c.train.alpha; });
    dbl("train.epsilon", "Q = L L' + epsilon I", [](RunConfig& c) -> FieldRef { return &c.train.epsilon; });
    dbl("train.v_min", "normalized velocity lower bound", [](RunConfig& c) -> FieldRef { return &c.train.v_min; });
    dbl("train.v_max", "normalized velocity upper bound", [](RunConfig& c) -> FieldRef { return &c.train.v_max; });
    dbl("train.a_min", "normalized acceleration lower bound", [](RunConfig& c) -> FieldRef { return &c.train.a_min; });
    dbl("train.a_max", "normalized acceleration upper bound", [](RunConfig& c) -> FieldRef { return &c.train.a_max; });
    dbl("train.pos_min", "position lower bound (both axes)", [](RunConfig& c) -> FieldRef { return &c.train.pos_min; });
    dbl("train.pos_max", "position upper bound (both axes)", [](RunConfig& c) -> FieldRef { return &c.train.pos_max; });
    integer("train.hidden", "LSTM hidden size", [](RunConfig& c) -> FieldRef { return &c.train.hidden; });
    t.push_back(entry("train.head", "qp|affine", "policy head", [](RunConfig& c) -> FieldRef { return &c.train.head; }));

    integer("eval.episodes", "evaluation episodes", [](RunConfig& c) -> FieldRef { return &c.eval.episodes; });
    u64("eval.seed", "first episode seed", [](RunConfig& c) -> FieldRef { return &c.eval.seed; });
    integer("eval.horizon", "max steps per episode", [](RunConfig& c) -> FieldRef { return &c.eval.horizon; });
    dbl("eval.drop_threshold", "drop fires when the action exceeds this", [](RunConfig& c) -> FieldRef { return &c.eval.drop_threshold; });
    dbl("eval.violation_slack", "audit tolerance", [](RunConfig& c) -> FieldRef { return &c.eval.violation_slack; });
    t.push_back(entry("eval.baseline", "none|clipped", "post-processing of the policy output", [](RunConfig& c) -> FieldRef { return &c.eval.baseline; }));

    str("paths.dataset", "dataset file", [](RunConfig& c) -> FieldRef { return &c.paths.dataset; });
    str("paths.checkpoint", "checkpoint file", [](RunConfig& c) -> FieldRef { return &c.paths.checkpoint; });
    str("paths.train_log", "training CSV log", [](RunConfig& c) -> FieldRef { return &c.paths.train_log; });
    str("paths.metrics_csv", "per-episode metrics CSV", [](RunConfig& c) -> FieldRef { return &c.paths.metrics_csv; });
    str("paths.metrics_json", "metrics summary JSON", [](RunConfig& c) -> FieldRef { return &c.paths.metrics_json; });
    str("paths.trace_csv", "rollout trace CSV (empty: none)", [](RunConfig& c) -> FieldRef { return &c.paths.trace_csv; });
    return t;
  }();
  return table;
}

const Entry& find(const std::string& key) {
  for (const Entry& e : entries()) {
    if (e.info.key == key) {
      return e;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> k;
    for (const Entry& e : entries()) k.push_back(e.info);
    return k;
  }();
  return keys;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = find(key);
  const std::string v = trim(value);
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          *p = parse_number<double>(key, v);
        } else if constexpr (std::is_same_v<T, int>) {
          *p = parse_number<int>(key, v);
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          *p = parse_number<std::uint64_t>(key, v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          *p = v;
        } else if constexpr (std::is_same_v<T, training::HeadKind>) {
          *p = training::parse_head(v);
        } else {
          *p = rollout::parse_baseline(v);
        }
      },
      e.field(cfg));
}

std::string get_key(const RunConfig& cfg, const std::string& key) {
  const Entry& e = find(key);
  RunConfig& c = const_cast<RunConfig&>(cfg);
  return std::visit(
      [&](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(*p);
        } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
          return std::to_string(*p);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return *p;
        } else if constexpr (std::is_same_v<T, training::HeadKind>) {
          return training::head_name(*p);
        } else {
          return rollout::baseline_name(*p);
        }
      },
      e.field(c));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set_key(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text, RunConfig base, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(where + "malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + "expected key = value");
    }
    const std::string name = trim(line.substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    try {
      set_key(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot read config file " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), RunConfig{}, path.string());
}

std::string to_ini(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const KeyInfo& k : config_keys()) {
    const auto dot = k.key.find('.');
    const std::string sec = k.key.substr(0, dot);
    if (sec != section) {
      out << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    out << k.key.substr(dot + 1) << " = " << get_key(cfg, k.key) << "\n";
  }
  return out.str();
}

io::Json to_json(const RunConfig& cfg) {
  io::Json j = io::Json::object();
  RunConfig& c = const_cast<RunConfig&>(cfg);
  for (const Entry& e : entries()) {
    const auto dot = e.info.key.find('.');
    io::Json& slot = j[e.info.key.substr(0, dot)][e.info.key.substr(dot + 1)];
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, training::HeadKind>) {
            slot = training::head_name(*p);
          } else if constexpr (std::is_same_v<T, rollout::Baseline>) {
            slot = rollout::baseline_name(*p);
          } else {
            slot = *p;
          }
        },
        e.field(c));
  }
  return j;
}

RunConfig from_json(const io::Json& j) {
  RunConfig cfg;
  if (!j.is_object()) {
    throw ConfigError("config JSON must be an object");
  }
  for (const auto& [sec, body] : j.items()) {
    if (!body.is_object()) {
      throw ConfigError("config JSON section '" + sec + "' must be an object");
    }
    for (const auto& [name, value] : body.items()) {
      const std::string key = sec + "." + name;
      const Entry& e = find(key);
      std::visit(
          [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            try {
              if constexpr (std::is_same_v<T, training::HeadKind>) {
                *p = training::parse_head(value.get<std::string>());
              } else if constexpr (std::is_same_v<T, rollout::Baseline>) {
                *p = rollout::parse_baseline(value.get<std::string>());
              } else {
                *p = value.get<T>();
              }
            } catch (const io::Json::exception& ex) {
              throw ConfigError("config key '" + key + "': " + ex.what());
            }
          },
          e.field(cfg));
    }
  }
  return cfg;
}

std::string keys_help() {
  std::ostringstream out;
  const RunConfig defaults;
  out << "Config keys (file sections [task] [data] [train] [eval] [paths], or --set section.key=value):\n";
  for (const KeyInfo& k : config_keys()) {
    std::string d = get_key(defaults, k.key);
    if (d.empty()) d = "\"\"";
    out << "  " << k.key << " (" << k.type << ", default " << d << "): " << k.help << "\n";
  }
  return out.str();
}

void RunConfig::validate() const {
  task.validate();
  if (demos < 1) {
    throw ConfigError("data.demos must be at least 1");
  }
  train.validate();
  eval.validate();
}

io::Json task_to_json(const dataset::TaskConfig& task) {
  RunConfig c;
  c.task = task;
  return to_json(c).at("task");
}

dataset::TaskConfig task_from_json(const io::Json& j) {
  return from_json(io::Json{{"task", j}}).task;
}

io::Json train_to_json(const training::TrainConfig& train) {
  RunConfig c;
  c.train = train;
  return to_json(c).at("train");
}

training::TrainConfig train_from_json(const io::Json& j) {
  return from_json(io::Json{{"train", j}}).train;
}

}  // namespace trajlayer::config
