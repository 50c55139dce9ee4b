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

#include <cstdint>
#include <functional>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajlayer/dataset.hpp"
#include "trajlayer/dto.hpp"
#include "trajlayer/encoder.hpp"
#include "trajlayer/training.hpp"

/**
 * @file
 * @brief Receding-horizon deployment on the toy task, the clipping baseline,
 * constraint audit and smoothness metrics.
 */

namespace trajlayer::rollout {

/// None: the checkpoint's own head. Clipped: velocity clamped to [v_min, v_max]
/// and step change clamped to [a_min, a_max] * delta_t at every executed step.
enum class Baseline { None, Clipped };

const char* baseline_name(Baseline b);
Baseline parse_baseline(const std::string& name);  // throws ConfigError

struct EvalConfig {
  int episodes = 50;
  std::uint64_t seed = 1000;
  int horizon = 150;
  double drop_threshold = 0.5;
  double violation_slack = 1e-6;
  Baseline baseline = Baseline::None;

  void validate() const;
};

/// One executed step's decision. `action` is normalized (D_y).
struct PolicyOutput {
  Vector action;
  bool replanned = false;
  int qp_status = -1;  // qp::QpStatus as int when replanned through a QP, else -1
  int qp_iterations = 0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual void reset() = 0;
  /// prev_velocity: last executed normalized velocity (zeros at the start).
  virtual PolicyOutput act(const Vector& observation, const Vector& position,
                           const Vector& prev_velocity) = 0;
};

/// Checkpoint policy: encoder stepped on every observation with its state reset
/// every T_s steps; a new T_p plan every T_a steps (Deploy mode for the QP head).
class LearnedPolicy : public Policy {
 public:
  LearnedPolicy(const training::Model& model, int T_s, int T_a, Baseline baseline);
  void reset() override;
  PolicyOutput act(const Vector& observation, const Vector& position,
                   const Vector& prev_velocity) override;

 private:
  training::Model model_;
  dto::DtoLayer layer_;
  int T_s_;
  int T_a_;
  Baseline baseline_;
  encoder::EncoderState state_;
  int step_ = 0;
  Vector plan_;
};

/// The data-generating controller, noise-free, reporting normalized actions.
class ScriptedPolicy : public Policy {
 public:
  ScriptedPolicy(const dataset::TaskConfig& task, const dataset::Normalizer& normalizer,
                 std::uint64_t seed);
  void reset() override;
  PolicyOutput act(const Vector& observation, const Vector& position,
                   const Vector& prev_velocity) override;

 private:
  dataset::TaskConfig task_;
  dataset::Normalizer normalizer_;
  std::uint64_t seed_;
  std::unique_ptr<dataset::ScriptedController> ctrl_;
};

/// Returns zeros for every step.
class StationaryPolicy : public Policy {
 public:
  explicit StationaryPolicy(Index action_dim) : dim_(action_dim) {}
  void reset() override {}
  PolicyOutput act(const Vector&, const Vector&, const Vector&) override {
    return PolicyOutput{Vector::Zero(dim_)};
  }

 private:
  Index dim_;
};

/// Componentwise prev + clamp(raw - prev, a_min dt, a_max dt).
Vector clip_baseline_action(const Vector& raw, const Vector& prev, const Vector& a_min,
                            const Vector& a_max, double delta_t);

struct RolloutRecord {
  Vector goal;
  Matrix positions;      // (T + 1) x D_v, physical, including the start
  Matrix velocities;     // T x D_v, normalized executed velocities
  Matrix accelerations;  // T x D_v, (v[t] - v[t-1]) / delta_t with v[-1] = 0
  std::vector<int> drops;
  std::vector<int> replanned;
  std::vector<int> qp_status;
  std::vector<int> qp_iterations;
  bool success = false;
  bool aborted = false;
  std::string diagnostic;

  Index steps() const { return velocities.rows(); }
};

/// Constraint context shared by rollouts, the audit and the metrics.
struct Limits {
  Vector v_min, v_max, a_min, a_max;
  Vector pos_min, pos_max;
  double delta_t = 1.0;
};

Limits limits_from(const training::TrainConfig& cfg);

/// Runs one episode. A policy exception (QP failure, infeasible start) ends the
/// episode as an aborted failure with the message as diagnostic.
RolloutRecord rollout(Policy& policy, const dataset::TaskConfig& task,
                      const dataset::Normalizer& normalizer, const Limits& limits,
                      std::uint64_t env_seed, int horizon, double drop_threshold = 0.5);

struct ViolationCounts {
  int velocity = 0;
  int acceleration = 0;
  int position = 0;
  int total() const { return velocity + acceleration + position; }
};

ViolationCounts audit(const RolloutRecord& record, const Limits& limits, double slack = 1e-6);

struct MetricsReport {
  double avg_mean = 0.0;
  double avg_max = 0.0;
  double avg_std = 0.0;
  double acc_peak = 0.0;
  double success_rate = 0.0;
  int episodes = 0;
  ViolationCounts violations;
};

/// Per trial and dimension: mean, max and population std of |acceleration|,
/// averaged over dimensions then trials; acc_peak is the global max. Throws
/// std::invalid_argument on an empty record list.
MetricsReport compute_metrics(const std::vector<RolloutRecord>& records, const Limits& limits,
                              double slack = 1e-6);

/// Episode seeds are eval.seed + k. Episodes run in parallel; aggregation is in
/// episode order.
struct Evaluation {
  MetricsReport report;
  std::vector<RolloutRecord> records;
  Limits limits;  // used for the per-episode audit columns
  double slack = 1e-6;
};

Evaluation evaluate(const training::Checkpoint& ckpt, const EvalConfig& eval);

/// Evaluates an arbitrary policy factory (one policy instance per episode).
Evaluation evaluate_policy(const std::function<std::unique_ptr<Policy>(int)>& make_policy,
                           const dataset::TaskConfig& task, const dataset::Normalizer& normalizer,
                           const Limits& limits, const EvalConfig& eval);

/// One row per episode plus a summary row.
std::string metrics_csv(const Evaluation& ev);
io::Json metrics_json(const Evaluation& ev);
/// Per-step trace: episode, step, x, y, vx, vy, ax, ay, drop, replanned, qp_status.
std::string trace_csv(const std::vector<RolloutRecord>& records);

/// Inverse of trace_csv for metric recomputation. Positions hold the T
/// pre-step rows only (the final position is not traced). Throws IoError.
std::vector<RolloutRecord> read_trace_csv(const std::string& text);

}  // namespace trajlayer::rollout
