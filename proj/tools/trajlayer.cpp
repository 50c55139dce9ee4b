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

// trajlayer command-line tool: data generation, training, evaluation,
// single rollouts, offline metrics and gradient checks.

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajlayer/config.hpp"
#include "trajlayer/dataset.hpp"
#include "trajlayer/gradcheck.hpp"
#include "trajlayer/io.hpp"
#include "trajlayer/rollout.hpp"
#include "trajlayer/training.hpp"

namespace fs = std::filesystem;
using namespace trajlayer;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string resume;
  std::string checkpoint;
  std::string baseline;
  std::string trace;
  int instances = 50;
  double corrupt_pullback = 1.0;
};

void set_log_level() {
  const char* env = std::getenv("TRAJLAYER_LOG_LEVEL");
  if (env == nullptr || *env == '\0') {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  const spdlog::level::level_enum level = spdlog::level::from_str(env);
  if (level == spdlog::level::off && std::string(env) != "off") {
    throw ConfigError(std::string("TRAJLAYER_LOG_LEVEL: unknown level '") + env +
                      "' (trace, debug, info, warn, error, critical, off)");
  }
  spdlog::set_level(level);
}

config::RunConfig build_config(const Globals& g) {
  config::RunConfig rc = g.config_file.empty() ? config::RunConfig{} : config::load_config_file(g.config_file);
  for (const std::string& o : g.overrides) config::apply_override(rc, o);
  return rc;
}

// Outputs must land in an existing directory; checked before any work starts.
std::string output_path(const std::string& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is empty");
  const fs::path abs = fs::absolute(p);
  if (!fs::is_directory(abs.parent_path())) {
    throw IoError("cannot write " + what + " " + abs.string() + ": directory " +
                  abs.parent_path().string() + " does not exist");
  }
  return abs.string();
}

std::string input_path(const std::string& p, const std::string& what) {
  const fs::path abs = fs::absolute(p);
  if (!fs::is_regular_file(abs)) throw IoError(what + " " + abs.string() + " does not exist");
  return abs.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void print_report(const std::string& title, const io::Json& j) {
  std::cout << title << "\n" << j.dump(2) << "\n";
}

int cmd_gen_data(config::RunConfig rc, const Options& o) {
  if (o.seed) rc.data_seed = *o.seed;
  if (!o.out.empty()) rc.paths.dataset = o.out;
  rc.validate();
  const std::string out = output_path(rc.paths.dataset, "dataset");
  dataset::Dataset data = dataset::make_dataset(rc.task, rc.demos, rc.data_seed);
  data.run_config = config::to_json(rc);
  dataset::save_dataset(out, data);
  double lo = 1e300, hi = 0.0, sum = 0.0;
  for (const auto& d : data.demos) {
    const double T = static_cast<double>(d.length());
    lo = std::min(lo, T);
    hi = std::max(hi, T);
    sum += T;
  }
  std::cout << "wrote " << out << "\n"
            << "demos " << data.demos.size() << "\n"
            << "T_d min " << lo << " mean " << sum / static_cast<double>(data.demos.size()) << " max " << hi
            << "\n";
  for (Index d : data.normalizer.continuous_dims) {
    std::cout << "action dim " << d << " range [-" << data.normalizer.scale[d] << ", "
              << data.normalizer.scale[d] << "] -> [-1, 1]\n";
  }
  return kOk;
}

int cmd_train(config::RunConfig rc, const Options& o) {
  if (o.seed) rc.train.seed = *o.seed;
  if (!o.out.empty()) rc.paths.checkpoint = o.out;
  rc.validate();
  const std::string data_path = input_path(rc.paths.dataset, "dataset");
  const std::string ckpt_path = output_path(rc.paths.checkpoint, "checkpoint");
  const std::string log_path = output_path(rc.paths.train_log, "training log");
  std::optional<training::Checkpoint> resume;
  if (!o.resume.empty()) resume = training::load_checkpoint(input_path(o.resume, "resume checkpoint"));

  const dataset::Dataset data = dataset::load_dataset(data_path);
  training::TrainHooks hooks;
  hooks.log_csv = log_path;
  hooks.on_epoch = [&](const training::EpochStats& s) {
    spdlog::info("epoch {}/{} loss {:.6g} qp iterations {:.2f} ({:.2f}s)", s.epoch, rc.train.epochs,
                 s.loss, s.mean_qp_iterations, s.wall_seconds);
  };
  training::Checkpoint ck = training::train(data, rc.train, resume ? &*resume : nullptr, hooks);
  ck.run_config = config::to_json(rc);
  training::save_checkpoint(ckpt_path, ck);
  std::cout << "wrote " << ckpt_path << "\n"
            << "epochs " << ck.epoch << " final loss " << ck.loss_history.back() << "\n";
  return kOk;
}

training::Checkpoint load_for_eval(config::RunConfig& rc, const Options& o) {
  if (!o.checkpoint.empty()) rc.paths.checkpoint = o.checkpoint;
  if (!o.baseline.empty()) rc.eval.baseline = rollout::parse_baseline(o.baseline);
  return training::load_checkpoint(input_path(rc.paths.checkpoint, "checkpoint"));
}

int cmd_eval(config::RunConfig rc, const Options& o) {
  if (o.seed) rc.eval.seed = *o.seed;
  if (!o.out.empty()) rc.paths.metrics_json = o.out;
  rc.validate();
  const std::string json_path = output_path(rc.paths.metrics_json, "metrics JSON");
  const std::string csv_path = output_path(rc.paths.metrics_csv, "metrics CSV");
  const std::string trace_path =
      rc.paths.trace_csv.empty() ? std::string() : output_path(rc.paths.trace_csv, "trace");
  const training::Checkpoint ck = load_for_eval(rc, o);
  const rollout::Evaluation ev = rollout::evaluate(ck, rc.eval);
  io::Json summary = rollout::metrics_json(ev);
  summary["baseline"] = rollout::baseline_name(rc.eval.baseline);
  summary["head"] = training::head_name(ck.model.head);
  summary["run_config"] = config::to_json(rc);
  io::write_text(json_path, summary.dump(2) + "\n");
  io::write_text(csv_path, rollout::metrics_csv(ev));
  if (!trace_path.empty()) io::write_text(trace_path, rollout::trace_csv(ev.records));
  summary.erase("run_config");
  print_report("evaluation (" + std::string(rollout::baseline_name(rc.eval.baseline)) + ")", summary);
  return kOk;
}

int cmd_rollout(config::RunConfig rc, const Options& o) {
  rc.validate();
  const std::string trace_path = o.out.empty() ? std::string() : output_path(o.out, "trace");
  const training::Checkpoint ck = load_for_eval(rc, o);
  const std::uint64_t seed = o.seed.value_or(rc.eval.seed);
  rollout::LearnedPolicy policy(ck.model, ck.config.T_s, ck.config.T_a, rc.eval.baseline);
  const rollout::Limits limits = rollout::limits_from(ck.config);
  const rollout::RolloutRecord r = rollout::rollout(policy, ck.task, ck.normalizer, limits, seed,
                                                    rc.eval.horizon, rc.eval.drop_threshold);
  const std::string trace = rollout::trace_csv({r});
  if (trace_path.empty()) {
    std::cout << trace;
  } else {
    io::write_text(trace_path, trace);
  }
  const rollout::ViolationCounts v = rollout::audit(r, limits, rc.eval.violation_slack);
  const Index T = r.positions.rows() - 1;
  spdlog::info("episode seed {}: {} steps, success {}, final distance {:.4f}, violations {}{}", seed,
               r.steps(), r.success, (r.positions.row(T).transpose() - r.goal).norm(), v.total(),
               r.aborted ? ", aborted: " + r.diagnostic : "");
  return kOk;
}

int cmd_metrics(config::RunConfig rc, const Options& o) {
  rc.validate();
  if (o.trace.empty()) throw ConfigError("metrics: --trace is required");
  const std::string out = o.out.empty() ? std::string() : output_path(o.out, "metrics JSON");
  const auto records = rollout::read_trace_csv(read_file(input_path(o.trace, "trace")));
  rollout::Evaluation ev;
  ev.records = records;
  ev.report = rollout::compute_metrics(records, rollout::limits_from(rc.train), rc.eval.violation_slack);
  const io::Json j = rollout::metrics_json(ev);
  if (!out.empty()) io::write_text(out, j.dump(2) + "\n");
  print_report("metrics from " + o.trace, j);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  gradcheck::Options g;
  g.instances = o.instances;
  g.seed = o.seed.value_or(0);
  g.pullback_scale = o.corrupt_pullback;
  if (g.instances < 1) throw ConfigError("gradcheck: --instances must be at least 1");
  bool ok = true;
  for (const gradcheck::SuiteReport& r : gradcheck::run_all(g)) {
    std::cout << fmt::format("{:<9} instances {:>3} resampled {:>3} worst relative error {:.3e}  {}\n",
                             r.name, r.instances, r.resampled, r.worst_rel_error,
                             r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << g.tolerance << ")\n";
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable trajectory-optimization policy: data, training, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Options o;
  const std::string keys = config::keys_help();
  app.add_option("-c,--config", g.config_file, "INI run configuration file");
  app.add_option("-s,--set", g.overrides, "override a config key, e.g. --set train.epochs=20 (repeatable)");
  app.footer(keys + "\nExit codes: 0 ok, 2 config error, 3 numerical failure, 4 I/O error.\n"
                    "Log level: TRAJLAYER_LOG_LEVEL=trace|debug|info|warn|error|off.");

  auto add_seed = [&](CLI::App* s, const std::string& what) {
    s->add_option("--seed", o.seed, what);
  };
  CLI::App* gen = app.add_subcommand("gen-data", "generate scripted demonstrations");
  add_seed(gen, "dataset seed (data.seed)");
  gen->add_option("-o,--out", o.out, "dataset file (paths.dataset)");

  CLI::App* tr = app.add_subcommand("train", "train a policy on a dataset file");
  add_seed(tr, "training seed (train.seed)");
  tr->add_option("-o,--out", o.out, "checkpoint file (paths.checkpoint)");
  tr->add_option("--resume", o.resume, "continue from this checkpoint up to train.epochs");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint over eval.episodes episodes");
  add_seed(ev, "first episode seed (eval.seed)");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint file (paths.checkpoint)");
  ev->add_option("--baseline", o.baseline, "none or clipped (eval.baseline)");
  ev->add_option("-o,--out", o.out, "metrics JSON file (paths.metrics_json)");

  CLI::App* ro = app.add_subcommand("rollout", "run one episode and print or save its trace");
  add_seed(ro, "episode seed (default eval.seed)");
  ro->add_option("--checkpoint", o.checkpoint, "checkpoint file (paths.checkpoint)");
  ro->add_option("--baseline", o.baseline, "none or clipped (eval.baseline)");
  ro->add_option("-o,--out", o.out, "trace CSV file (default stdout)");

  CLI::App* me = app.add_subcommand("metrics", "recompute metrics from a trace CSV");
  me->add_option("--trace", o.trace, "trace CSV written by eval or rollout")->required();
  me->add_option("-o,--out", o.out, "metrics JSON file");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference checks of all gradients");
  add_seed(gc, "instance seed");
  gc->add_option("--instances", o.instances, "instances per suite")->capture_default_str();
  gc->add_option("--corrupt-pullback", o.corrupt_pullback,
                 "test hook: scale analytic gradients (must make the check fail)");

  for (CLI::App* s : {gen, tr, ev, ro, me, gc}) s->footer(keys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    set_log_level();
    if (gc->parsed()) return cmd_gradcheck(o);
    const config::RunConfig rc = build_config(g);
    if (gen->parsed()) return cmd_gen_data(rc, o);
    if (tr->parsed()) return cmd_train(rc, o);
    if (ev->parsed()) return cmd_eval(rc, o);
    if (ro->parsed()) return cmd_rollout(rc, o);
    if (me->parsed()) return cmd_metrics(rc, o);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumerical;
  } catch (const IoError& e) {
    spdlog::error("I/O error: {}", e.what());
    return kIo;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}
