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
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "trajlayer/common.hpp"
#include "trajlayer/io.hpp"

/**
 * @file
 * @brief Toy pick-and-place task, scripted demonstrations, training windows and
 * action normalization.
 *
 * A 2-D point mass lives in the unit box. It starts at a random point, moves to
 * a random goal, fires a discrete "drop" (release) command once within
 * drop_radius of the goal and holds for a few steps. Like a gripper command, the
 * release stays asserted after it fires. Actions are [vx, vy, drop]; observations are
 * [x, y, goal_x, goal_y, dropped].
 */

namespace trajlayer::dataset {

inline constexpr Index kObsDim = 5;
inline constexpr Index kActionDim = 3;
inline constexpr Index kPosDim = 2;

struct TaskConfig {
  double dt = 0.1;              // seconds per control step
  double v_max = 0.5;           // speed cap of the scripted controller
  double gain = 1.5;            // proportional tail gain near the goal, 1/s
  double ramp = 0.08;           // max velocity change per step and axis
  double noise = 0.1;           // relative uniform velocity noise
  double start_lo = 0.05, start_hi = 0.95;
  double goal_lo = 0.1, goal_hi = 0.9;
  double min_distance = 0.3;    // between start and goal
  double drop_radius = 0.02;    // scripted controller drops inside this radius
  double success_radius = 0.05;
  int hold_steps = 3;           // steps recorded after the drop
  int max_steps = 120;

  /// Throws ConfigError, e.g. for a goal range outside the workspace.
  void validate() const;
};

struct Demonstration {
  Matrix observations;  // T_d x obs_dim
  Matrix actions;       // T_d x D_y
  Matrix positions;     // T_d x D_v, position before the step's action
  Vector goal;

  Index length() const { return actions.rows(); }
};

struct EpisodeSpec {
  Vector start;
  Vector goal;
};

/// Start and goal drawn from the task distribution; deterministic in seed.
EpisodeSpec sample_episode(const TaskConfig& task, std::uint64_t seed);

Vector observe(const Vector& position, const Vector& goal, bool dropped);

/// Trapezoidal-profile controller (ramp up, cruise, brake to the goal) with a
/// proportional tail, a per-step velocity ramp and multiplicative noise. Velocities are corrected so the next position stays
/// inside the unit box.
class ScriptedController {
 public:
  ScriptedController(const TaskConfig& task, std::uint64_t seed, bool noisy = true);

  /// Returns [vx, vy, drop] for the current state; drop is 1 once released.
  Vector act(const Vector& position, const Vector& goal, bool dropped);

 private:
  TaskConfig task_;
  std::mt19937_64 rng_;
  bool noisy_;
  Vector v_prev_;
};

Demonstration generate_demo(const TaskConfig& task, std::uint64_t seed);

/// Demo i uses a seed derived from (seed, i); parallel over demos.
std::vector<Demonstration> generate_demos(const TaskConfig& task, int count, std::uint64_t seed);

/// Per-dimension scaling of continuous action dims by 1 / max|a|; other dims
/// pass through. Zero stays zero, so a zero normalized velocity is standstill.
struct Normalizer {
  Vector scale;                        // D_y; 1 on discrete dims
  std::vector<Index> continuous_dims;

  Vector normalize(const Vector& a) const;
  Vector unnormalize(const Vector& a) const;
  /// Row-wise on a T x D_y action matrix.
  Matrix normalize_rows(const Matrix& actions) const;
};

/// Throws ConfigError naming the dimension if it is constant over the data.
Normalizer fit_normalizer(const std::vector<Demonstration>& demos,
                          const std::vector<Index>& continuous_dims);

/// Copies of the demos with normalized actions.
std::vector<Demonstration> normalize_demos(const std::vector<Demonstration>& demos,
                                           const Normalizer& normalizer);

/// One training window; column k is step k of the window.
struct SequenceSample {
  Matrix observations;  // obs_dim x T_s
  Matrix targets;       // T_p*D_y x T_s, stacked next T_p actions
  Matrix positions;     // D_v x T_s
  int demo = 0;
  int start = 0;
};

/// Sliding windows with the given stride. Targets past the end of a demo repeat
/// its last action; a demo shorter than T_s yields one window padded with its
/// last step. Throws ConfigError for T_s, T_p, stride < 1 or an empty demo.
std::vector<SequenceSample> sample_windows(const std::vector<Demonstration>& demos, int T_s,
                                           int T_p, int stride = 1);

/// First (demo, step) whose position leaves [lo, hi] per axis, if any.
struct BoundViolation {
  int demo;
  int step;
  Vector position;
};
std::optional<BoundViolation> find_position_violation(const std::vector<Demonstration>& demos,
                                                      const Vector& lo, const Vector& hi);

struct Dataset {
  TaskConfig task;
  std::uint64_t seed = 0;
  std::vector<Demonstration> demos;
  Normalizer normalizer;
  io::Json run_config = io::Json::object();  // provenance, stored in the file header
};

Dataset make_dataset(const TaskConfig& task, int count, std::uint64_t seed);

inline constexpr int kDatasetSchemaVersion = 1;

/// Throws IoError.
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace trajlayer::dataset
