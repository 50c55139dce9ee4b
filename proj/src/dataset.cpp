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

#include "trajlayer/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>

#include "trajlayer/io.hpp"
#include "trajlayer/config.hpp"

namespace trajlayer::dataset {

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

void TaskConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("task: " + msg); };
  if (!(dt > 0.0)) fail("dt must be positive");
  if (!(v_max > 0.0)) fail("v_max must be positive");
  if (!(gain > 0.0)) fail("gain must be positive");
  if (!(ramp > 0.0)) fail("ramp must be positive");
  if (!(noise >= 0.0 && noise < 1.0)) fail("noise must be in [0, 1)");
  if (!(goal_lo >= 0.0 && goal_hi <= 1.0 && goal_lo < goal_hi)) {
    fail("goal range [" + std::to_string(goal_lo) + ", " + std::to_string(goal_hi) +
         "] is outside the workspace [0, 1]");
  }
  if (!(start_lo >= 0.0 && start_hi <= 1.0 && start_lo < start_hi)) {
    fail("start range is outside the workspace [0, 1]");
  }
  if (!(min_distance >= 0.0 && min_distance < (goal_hi - goal_lo) * std::sqrt(2.0))) {
    fail("min_distance cannot be met inside the goal range");
  }
  if (!(drop_radius > 0.0 && drop_radius <= success_radius)) {
    fail("need 0 < drop_radius <= success_radius");
  }
  if (hold_steps < 0) fail("hold_steps must be nonnegative");
  if (max_steps < 1) fail("max_steps must be positive");
}

EpisodeSpec sample_episode(const TaskConfig& task, std::uint64_t seed) {
  std::mt19937_64 rng = derived_rng(seed, 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> start(task.start_lo, task.start_hi);
  std::uniform_real_distribution<double> goal(task.goal_lo, task.goal_hi);
  EpisodeSpec ep{Vector(2), Vector(2)};
  do {
    ep.start << start(rng), start(rng);
    ep.goal << goal(rng), goal(rng);
  } while ((ep.goal - ep.start).norm() < task.min_distance);
  return ep;
}

Vector observe(const Vector& position, const Vector& goal, bool dropped) {
  Vector o(kObsDim);
  o << position, goal, dropped ? 1.0 : 0.0;
  return o;
}

ScriptedController::ScriptedController(const TaskConfig& task, std::uint64_t seed, bool noisy)
    : task_(task), rng_(derived_rng(seed, 1)), noisy_(noisy), v_prev_(Vector::Zero(2)) {}

Vector ScriptedController::act(const Vector& position, const Vector& goal, bool dropped) {
  // Trapezoidal speed profile: ramp up, cruise at v_max, brake at ramp/dt so
  // the speed reaches zero at the goal; a proportional tail settles the end.
  const Vector d = goal - position;
  const double dist = d.norm();
  const double brake = task_.ramp / task_.dt;
  const double speed = std::min({task_.v_max, std::sqrt(2.0 * brake * dist), task_.gain * dist});
  const Vector v_des = dist > 0.0 ? Vector(d * (speed / dist)) : Vector(Vector::Zero(2));
  Vector v = v_prev_ + (v_des - v_prev_).cwiseMax(-task_.ramp).cwiseMin(task_.ramp);
  std::uniform_real_distribution<double> u(-task_.noise, task_.noise);
  for (Index i = 0; i < 2; ++i) {
    const double r = u(rng_);
    if (noisy_) {
      v[i] *= 1.0 + r;
    }
  }
  for (Index i = 0; i < 2; ++i) {
    const double next = position[i] + v[i] * task_.dt;
    if (next < 0.0 || next > 1.0) {
      v[i] = (std::clamp(next, 0.0, 1.0) - position[i]) / task_.dt;
    }
  }
  v_prev_ = v;
  Vector a(kActionDim);
  a << v, (dropped || dist < task_.drop_radius) ? 1.0 : 0.0;
  return a;
}

Demonstration generate_demo(const TaskConfig& task, std::uint64_t seed) {
  task.validate();
  const EpisodeSpec ep = sample_episode(task, seed);
  ScriptedController ctrl(task, seed);
  std::vector<Vector> obs, acts, pos;
  Vector p = ep.start;
  bool dropped = false;
  int hold = 0;
  for (int t = 0; t < task.max_steps; ++t) {
    const Vector a = ctrl.act(p, ep.goal, dropped);
    obs.push_back(observe(p, ep.goal, dropped));
    acts.push_back(a);
    pos.push_back(p);
    p = p + a.head(2) * task.dt;
    if (a[2] > 0.5) {
      dropped = true;
    }
    if (dropped && hold++ >= task.hold_steps) {
      break;
    }
  }
  Demonstration d;
  const Index T = static_cast<Index>(acts.size());
  d.observations.resize(T, kObsDim);
  d.actions.resize(T, kActionDim);
  d.positions.resize(T, kPosDim);
  for (Index t = 0; t < T; ++t) {
    d.observations.row(t) = obs[t].transpose();
    d.actions.row(t) = acts[t].transpose();
    d.positions.row(t) = pos[t].transpose();
  }
  d.goal = ep.goal;
  return d;
}

std::vector<Demonstration> generate_demos(const TaskConfig& task, int count, std::uint64_t seed) {
  if (count < 1) {
    throw ConfigError("gen-data: demo count must be at least 1");
  }
  task.validate();
  std::vector<Demonstration> demos(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    const std::mt19937_64::result_type s = derived_rng(seed, static_cast<std::uint64_t>(i))();
    demos[static_cast<std::size_t>(i)] = generate_demo(task, s);
  }
  return demos;
}

Vector Normalizer::normalize(const Vector& a) const {
  if (a.size() != scale.size()) {
    throw ShapeError("normalize: expected " + std::to_string(scale.size()) + " entries");
  }
  return a.cwiseQuotient(scale);
}

Vector Normalizer::unnormalize(const Vector& a) const {
  if (a.size() != scale.size()) {
    throw ShapeError("unnormalize: expected " + std::to_string(scale.size()) + " entries");
  }
  return a.cwiseProduct(scale);
}

Matrix Normalizer::normalize_rows(const Matrix& actions) const {
  Matrix out = actions;
  for (Index t = 0; t < out.rows(); ++t) {
    out.row(t) = normalize(actions.row(t).transpose()).transpose();
  }
  return out;
}

Normalizer fit_normalizer(const std::vector<Demonstration>& demos,
                          const std::vector<Index>& continuous_dims) {
  if (demos.empty()) {
    throw ConfigError("fit_normalizer: no demonstrations");
  }
  const Index D = demos.front().actions.cols();
  Normalizer n{Vector::Ones(D), continuous_dims};
  for (Index d : continuous_dims) {
    if (d < 0 || d >= D) {
      throw ConfigError("fit_normalizer: dimension " + std::to_string(d) + " out of range");
    }
    double lo = demos.front().actions(0, d);
    double hi = lo;
    for (const Demonstration& demo : demos) {
      lo = std::min(lo, demo.actions.col(d).minCoeff());
      hi = std::max(hi, demo.actions.col(d).maxCoeff());
    }
    if (!(hi > lo)) {
      throw ConfigError("fit_normalizer: action dimension " + std::to_string(d) +
                        " is constant over the dataset");
    }
    n.scale[d] = std::max(std::abs(lo), std::abs(hi));
  }
  return n;
}

std::vector<Demonstration> normalize_demos(const std::vector<Demonstration>& demos,
                                           const Normalizer& normalizer) {
  std::vector<Demonstration> out = demos;
  for (Demonstration& d : out) {
    d.actions = normalizer.normalize_rows(d.actions);
  }
  return out;
}

std::vector<SequenceSample> sample_windows(const std::vector<Demonstration>& demos, int T_s,
                                           int T_p, int stride) {
  if (T_s < 1 || T_p < 1 || stride < 1) {
    throw ConfigError("sample_windows: T_s, T_p and stride must be at least 1");
  }
  std::vector<SequenceSample> out;
  for (std::size_t k = 0; k < demos.size(); ++k) {
    const Demonstration& d = demos[k];
    const int T_d = static_cast<int>(d.length());
    if (T_d < 1) {
      throw ConfigError("sample_windows: demo " + std::to_string(k) + " has no steps");
    }
    const Index D_y = d.actions.cols();
    const int last_start = std::max(0, T_d - T_s);
    for (int s = 0; s <= last_start; s += stride) {
      SequenceSample w;
      w.demo = static_cast<int>(k);
      w.start = s;
      w.observations.resize(d.observations.cols(), T_s);
      w.positions.resize(d.positions.cols(), T_s);
      w.targets.resize(static_cast<Index>(T_p) * D_y, T_s);
      for (int j = 0; j < T_s; ++j) {
        const int t = std::min(s + j, T_d - 1);
        w.observations.col(j) = d.observations.row(t).transpose();
        w.positions.col(j) = d.positions.row(t).transpose();
        for (int i = 0; i < T_p; ++i) {
          w.targets.col(j).segment(static_cast<Index>(i) * D_y, D_y) =
              d.actions.row(std::min(t + i, T_d - 1)).transpose();
        }
      }
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::optional<BoundViolation> find_position_violation(const std::vector<Demonstration>& demos,
                                                      const Vector& lo, const Vector& hi) {
  for (std::size_t k = 0; k < demos.size(); ++k) {
    const Matrix& P = demos[k].positions;
    for (Index t = 0; t < P.rows(); ++t) {
      for (Index i = 0; i < P.cols(); ++i) {
        if (P(t, i) < lo[i] || P(t, i) > hi[i]) {
          return BoundViolation{static_cast<int>(k), static_cast<int>(t), P.row(t).transpose()};
        }
      }
    }
  }
  return std::nullopt;
}

Dataset make_dataset(const TaskConfig& task, int count, std::uint64_t seed) {
  Dataset d;
  d.task = task;
  d.seed = seed;
  d.demos = generate_demos(task, count, seed);
  d.normalizer = fit_normalizer(d.demos, {0, 1});
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  io::Container c;
  c.schema_version = kDatasetSchemaVersion;
  c.meta["kind"] = "dataset";
  c.meta["task"] = config::task_to_json(data.task);
  c.meta["seed"] = data.seed;
  c.meta["count"] = data.demos.size();
  c.meta["continuous_dims"] = data.normalizer.continuous_dims;
  c.meta["run_config"] = data.run_config;
  c.arrays.push_back({"normalizer_scale", data.normalizer.scale});
  for (std::size_t k = 0; k < data.demos.size(); ++k) {
    const std::string p = "demo" + std::to_string(k) + "/";
    const Demonstration& d = data.demos[k];
    c.arrays.push_back({p + "observations", d.observations});
    c.arrays.push_back({p + "actions", d.actions});
    c.arrays.push_back({p + "positions", d.positions});
    c.arrays.push_back({p + "goal", d.goal});
  }
  io::write_container(path, "TLDATA", c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, "TLDATA", kDatasetSchemaVersion);
  Dataset d;
  try {
    if (c.meta.at("kind").get<std::string>() != "dataset") {
      throw IoError(path.string() + ": not a dataset");
    }
    d.task = config::task_from_json(c.meta.at("task"));
    d.seed = c.meta.at("seed").get<std::uint64_t>();
    const std::size_t count = c.meta.at("count").get<std::size_t>();
    d.normalizer.continuous_dims = c.meta.at("continuous_dims").get<std::vector<Index>>();
    d.normalizer.scale = c.array("normalizer_scale");
    d.run_config = c.meta.value("run_config", io::Json::object());
    for (std::size_t k = 0; k < count; ++k) {
      const std::string p = "demo" + std::to_string(k) + "/";
      Demonstration demo;
      demo.observations = c.array(p + "observations");
      demo.actions = c.array(p + "actions");
      demo.positions = c.array(p + "positions");
      demo.goal = c.array(p + "goal");
      d.demos.push_back(std::move(demo));
    }
  } catch (const io::Json::exception& e) {
    throw IoError(path.string() + ": bad dataset header: " + e.what());
  }
  return d;
}

}  // namespace trajlayer::dataset
