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

#include "trajlayer/rollout.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

namespace trajlayer::rollout {

namespace {

Vector take(const Vector& a, const std::vector<Index>& dims) {
  Vector v(static_cast<Index>(dims.size()));
  for (std::size_t i = 0; i < dims.size(); ++i) v[static_cast<Index>(i)] = a[dims[i]];
  return v;
}

std::vector<Index> selected_dims(const Matrix& S) {
  std::vector<Index> dims;
  for (Index r = 0; r < S.rows(); ++r) {
    Index c = 0;
    S.row(r).maxCoeff(&c);
    dims.push_back(c);
  }
  return dims;
}

struct AbsStats {
  double mean = 0.0;
  double max = 0.0;
  double std = 0.0;
};

AbsStats abs_stats(const Eigen::Ref<const Vector>& a) {
  AbsStats s;
  if (a.size() == 0) return s;
  const Vector x = a.cwiseAbs();
  s.mean = x.mean();
  s.max = x.maxCoeff();
  s.std = std::sqrt((x.array() - s.mean).square().mean());
  return s;
}

}  // namespace

const char* baseline_name(Baseline b) { return b == Baseline::None ? "none" : "clipped"; }

Baseline parse_baseline(const std::string& name) {
  if (name == "none") return Baseline::None;
  if (name == "clipped") return Baseline::Clipped;
  throw ConfigError("unknown baseline '" + name + "' (expected none or clipped)");
}

void EvalConfig::validate() const {
  if (episodes < 1) throw ConfigError("eval: episodes must be at least 1");
  if (horizon < 1) throw ConfigError("eval: horizon must be at least 1");
  if (!(violation_slack >= 0.0)) throw ConfigError("eval: violation_slack must be nonnegative");
}

Vector clip_baseline_action(const Vector& raw, const Vector& prev, const Vector& a_min,
                            const Vector& a_max, double delta_t) {
  if (raw.size() != prev.size() || raw.size() != a_min.size() || raw.size() != a_max.size()) {
    throw ShapeError("clip_baseline_action: size mismatch");
  }
  return prev + (raw - prev).cwiseMax(a_min * delta_t).cwiseMin(a_max * delta_t);
}

LearnedPolicy::LearnedPolicy(const training::Model& model, int T_s, int T_a, Baseline baseline)
    : model_(model), layer_(model.dto), T_s_(T_s), T_a_(T_a), baseline_(baseline) {
  if (T_s < 1 || T_a < 1 || T_a > model.dto.T_p) {
    throw ConfigError("policy: need T_s >= 1 and 1 <= T_a <= T_p");
  }
  reset();
}

void LearnedPolicy::reset() {
  state_ = encoder::init_state(model_.encoder);
  step_ = 0;
  plan_.resize(0);
}

PolicyOutput LearnedPolicy::act(const Vector& observation, const Vector& position,
                                const Vector& prev_velocity) {
  if (step_ % T_s_ == 0) {
    state_ = encoder::init_state(model_.encoder);
  }
  const encoder::StepResult r = encoder::step(model_.encoder, observation, state_);
  state_ = r.state;
  const int k = step_ % T_a_;
  PolicyOutput out;
  if (k == 0) {
    if (model_.head == training::HeadKind::Qp) {
      const dto::DtoForward f = layer_.forward(r.e, position, dto::Mode::deploy(prev_velocity));
      out.qp_status = static_cast<int>(f.solution.status);
      out.qp_iterations = f.solution.iterations;
      if (!f.solution.solved()) {
        throw NumericalError(std::string("deploy QP returned ") + qp::status_name(f.solution.status) +
                             " at position (" + std::to_string(position[0]) + ", " +
                             std::to_string(position[1]) + ")");
      }
      plan_ = f.y;
    } else {
      plan_ = layer_.forward(r.e, position, dto::Mode::unconstrained()).y;
    }
    out.replanned = true;
  }
  const Index D_y = model_.dto.D_y();
  out.action = plan_.segment(static_cast<Index>(k) * D_y, D_y);
  if (baseline_ == Baseline::Clipped) {
    const dto::DtoParams& p = model_.dto;
    const std::vector<Index> dims = selected_dims(p.S);
    Vector v = take(out.action, dims).cwiseMax(p.v_min).cwiseMin(p.v_max);
    v = clip_baseline_action(v, prev_velocity, p.a_min, p.a_max, p.delta_t);
    for (std::size_t i = 0; i < dims.size(); ++i) out.action[dims[i]] = v[static_cast<Index>(i)];
  }
  ++step_;
  return out;
}

ScriptedPolicy::ScriptedPolicy(const dataset::TaskConfig& task, const dataset::Normalizer& normalizer,
                               std::uint64_t seed)
    : task_(task), normalizer_(normalizer), seed_(seed) {
  reset();
}

void ScriptedPolicy::reset() {
  ctrl_ = std::make_unique<dataset::ScriptedController>(task_, seed_, false);
}

PolicyOutput ScriptedPolicy::act(const Vector& observation, const Vector& position, const Vector&) {
  const Vector goal = observation.segment(2, 2);
  const bool dropped = observation[4] > 0.5;
  PolicyOutput out;
  out.action = normalizer_.normalize(ctrl_->act(position, goal, dropped));
  out.replanned = true;
  return out;
}

Limits limits_from(const training::TrainConfig& cfg) {
  Limits l;
  l.v_min = Vector::Constant(2, cfg.v_min);
  l.v_max = Vector::Constant(2, cfg.v_max);
  l.a_min = Vector::Constant(2, cfg.a_min);
  l.a_max = Vector::Constant(2, cfg.a_max);
  l.pos_min = Vector::Constant(2, cfg.pos_min);
  l.pos_max = Vector::Constant(2, cfg.pos_max);
  l.delta_t = 1.0;
  return l;
}

RolloutRecord rollout(Policy& policy, const dataset::TaskConfig& task,
                      const dataset::Normalizer& normalizer, const Limits& limits,
                      std::uint64_t env_seed, int horizon, double drop_threshold) {
  if (horizon < 1) {
    throw ConfigError("rollout: horizon must be at least 1");
  }
  const dataset::EpisodeSpec ep = dataset::sample_episode(task, env_seed);
  const std::vector<Index>& dims = normalizer.continuous_dims;
  const Index dv = static_cast<Index>(dims.size());
  policy.reset();

  RolloutRecord rec;
  rec.goal = ep.goal;
  std::vector<Vector> positions{ep.start}, velocities;
  Vector pos = ep.start;
  Vector prev = Vector::Zero(dv);
  bool dropped = false;
  Vector drop_pos;
  int hold = 0;
  for (int t = 0; t < horizon; ++t) {
    PolicyOutput out;
    try {
      out = policy.act(dataset::observe(pos, ep.goal, dropped), pos, prev);
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.diagnostic = "step " + std::to_string(t) + ": " + e.what();
      break;
    }
    const Vector v = take(out.action, dims);
    const Vector phys = normalizer.unnormalize(out.action);
    const bool drop = out.action[dataset::kActionDim - 1] > drop_threshold;
    velocities.push_back(v);
    rec.drops.push_back(drop ? 1 : 0);
    rec.replanned.push_back(out.replanned ? 1 : 0);
    rec.qp_status.push_back(out.qp_status);
    rec.qp_iterations.push_back(out.qp_iterations);
    if (drop && !dropped) {
      dropped = true;
      drop_pos = pos;
    }
    pos = pos + take(phys, dims) * task.dt;
    positions.push_back(pos);
    prev = v;
    if (dropped && hold++ >= task.hold_steps) {
      break;
    }
  }
  const Index T = static_cast<Index>(velocities.size());
  rec.positions.resize(T + 1, dv);
  rec.velocities.resize(T, dv);
  rec.accelerations.resize(T, dv);
  for (Index t = 0; t <= T; ++t) rec.positions.row(t) = positions[static_cast<std::size_t>(t)].transpose();
  for (Index t = 0; t < T; ++t) {
    rec.velocities.row(t) = velocities[static_cast<std::size_t>(t)].transpose();
    const Vector before = t == 0 ? Vector::Zero(dv) : velocities[static_cast<std::size_t>(t - 1)];
    rec.accelerations.row(t) = ((velocities[static_cast<std::size_t>(t)] - before) / limits.delta_t).transpose();
  }
  rec.success = !rec.aborted && dropped && (drop_pos - ep.goal).norm() <= task.success_radius &&
                (pos - ep.goal).norm() <= task.success_radius;
  return rec;
}

ViolationCounts audit(const RolloutRecord& record, const Limits& limits, double slack) {
  ViolationCounts c;
  for (Index t = 0; t < record.velocities.rows(); ++t) {
    for (Index i = 0; i < record.velocities.cols(); ++i) {
      const double v = record.velocities(t, i);
      if (v > limits.v_max[i] + slack || v < limits.v_min[i] - slack) ++c.velocity;
      const double a = record.accelerations(t, i);
      if (a > limits.a_max[i] + slack || a < limits.a_min[i] - slack) ++c.acceleration;
    }
  }
  for (Index t = 0; t < record.positions.rows(); ++t) {
    for (Index i = 0; i < record.positions.cols(); ++i) {
      const double p = record.positions(t, i);
      if (p > limits.pos_max[i] + slack || p < limits.pos_min[i] - slack) ++c.position;
    }
  }
  return c;
}

MetricsReport compute_metrics(const std::vector<RolloutRecord>& records, const Limits& limits,
                              double slack) {
  if (records.empty()) {
    throw std::invalid_argument("compute_metrics: no rollout records");
  }
  MetricsReport m;
  m.episodes = static_cast<int>(records.size());
  int successes = 0;
  for (const RolloutRecord& r : records) {
    const Index D = r.accelerations.cols();
    double mean = 0.0, max = 0.0, std = 0.0;
    for (Index d = 0; d < D; ++d) {
      const AbsStats s = abs_stats(r.accelerations.col(d));
      mean += s.mean;
      max += s.max;
      std += s.std;
      m.acc_peak = std::max(m.acc_peak, s.max);
    }
    if (D > 0) {
      m.avg_mean += mean / static_cast<double>(D);
      m.avg_max += max / static_cast<double>(D);
      m.avg_std += std / static_cast<double>(D);
    }
    successes += r.success ? 1 : 0;
    const ViolationCounts v = audit(r, limits, slack);
    m.violations.velocity += v.velocity;
    m.violations.acceleration += v.acceleration;
    m.violations.position += v.position;
  }
  const double n = static_cast<double>(records.size());
  m.avg_mean /= n;
  m.avg_max /= n;
  m.avg_std /= n;
  m.success_rate = successes / n;
  return m;
}

Evaluation evaluate_policy(const std::function<std::unique_ptr<Policy>(int)>& make_policy,
                           const dataset::TaskConfig& task, const dataset::Normalizer& normalizer,
                           const Limits& limits, const EvalConfig& eval) {
  eval.validate();
  Evaluation ev;
  ev.records.resize(static_cast<std::size_t>(eval.episodes));
  std::vector<std::unique_ptr<Policy>> policies(static_cast<std::size_t>(eval.episodes));
  for (int k = 0; k < eval.episodes; ++k) policies[static_cast<std::size_t>(k)] = make_policy(k);
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < eval.episodes; ++k) {
    ev.records[static_cast<std::size_t>(k)] =
        rollout(*policies[static_cast<std::size_t>(k)], task, normalizer, limits,
                eval.seed + static_cast<std::uint64_t>(k), eval.horizon, eval.drop_threshold);
  }
  for (std::size_t k = 0; k < ev.records.size(); ++k) {
    if (ev.records[k].aborted) {
      spdlog::warn("episode {} aborted: {}", k, ev.records[k].diagnostic);
    }
  }
  ev.report = compute_metrics(ev.records, limits, eval.violation_slack);
  ev.limits = limits;
  ev.slack = eval.violation_slack;
  return ev;
}

Evaluation evaluate(const training::Checkpoint& ckpt, const EvalConfig& eval) {
  const training::TrainConfig& cfg = ckpt.config;
  auto factory = [&](int) -> std::unique_ptr<Policy> {
    return std::make_unique<LearnedPolicy>(ckpt.model, cfg.T_s, cfg.T_a, eval.baseline);
  };
  return evaluate_policy(factory, ckpt.task, ckpt.normalizer, limits_from(cfg), eval);
}

std::string metrics_csv(const Evaluation& ev) {
  std::ostringstream out;
  out << "episode,success,aborted,steps,mean_abs_acc,max_abs_acc,std_abs_acc,final_distance,"
         "velocity_violations,acceleration_violations,position_violations\n";
  out.precision(10);
  for (std::size_t k = 0; k < ev.records.size(); ++k) {
    const RolloutRecord& r = ev.records[k];
    double mean = 0.0, max = 0.0, std = 0.0;
    const Index D = r.accelerations.cols();
    for (Index d = 0; d < D; ++d) {
      const AbsStats s = abs_stats(r.accelerations.col(d));
      mean += s.mean / static_cast<double>(D);
      max += s.max / static_cast<double>(D);
      std += s.std / static_cast<double>(D);
    }
    const double dist = (r.positions.row(r.positions.rows() - 1).transpose() - r.goal).norm();
    const ViolationCounts v = ev.limits.v_min.size() > 0 ? audit(r, ev.limits, ev.slack) : ViolationCounts{};
    out << k << ',' << (r.success ? 1 : 0) << ',' << (r.aborted ? 1 : 0) << ',' << r.steps() << ','
        << mean << ',' << max << ',' << std << ',' << dist << ',' << v.velocity << ','
        << v.acceleration << ',' << v.position << '\n';
  }
  const MetricsReport& m = ev.report;
  out << "summary," << m.success_rate << ",," << m.episodes << ',' << m.avg_mean << ','
      << m.avg_max << ',' << m.avg_std << ",," << m.violations.velocity << ','
      << m.violations.acceleration << ',' << m.violations.position << '\n';
  return out.str();
}

io::Json metrics_json(const Evaluation& ev) {
  const MetricsReport& m = ev.report;
  int aborted = 0;
  for (const RolloutRecord& r : ev.records) aborted += r.aborted ? 1 : 0;
  return io::Json{{"episodes", m.episodes},
                  {"success_rate", m.success_rate},
                  {"avg_mean", m.avg_mean},
                  {"avg_max", m.avg_max},
                  {"avg_std", m.avg_std},
                  {"acc_peak", m.acc_peak},
                  {"aborted", aborted},
                  {"violations",
                   {{"velocity", m.violations.velocity},
                    {"acceleration", m.violations.acceleration},
                    {"position", m.violations.position},
                    {"total", m.violations.total()}}}};
}

std::string trace_csv(const std::vector<RolloutRecord>& records) {
  std::ostringstream out;
  out.precision(17);
  out << "episode,step,x,y,vx,vy,ax,ay,drop,replanned,qp_status,success\n";
  for (std::size_t k = 0; k < records.size(); ++k) {
    const RolloutRecord& r = records[k];
    for (Index t = 0; t < r.steps(); ++t) {
      out << k << ',' << t << ',' << r.positions(t, 0) << ',' << r.positions(t, 1) << ','
          << r.velocities(t, 0) << ',' << r.velocities(t, 1) << ',' << r.accelerations(t, 0) << ','
          << r.accelerations(t, 1) << ',' << r.drops[static_cast<std::size_t>(t)] << ','
          << r.replanned[static_cast<std::size_t>(t)] << ','
          << r.qp_status[static_cast<std::size_t>(t)] << ',' << (r.success ? 1 : 0) << '\n';
    }
  }
  return out.str();
}

std::vector<RolloutRecord> read_trace_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("episode,step,x,y,vx,vy,ax,ay", 0) != 0) {
    throw IoError("trace: missing or unexpected header");
  }
  std::vector<RolloutRecord> records;
  std::vector<std::vector<double>> rows;
  long current = -1;
  int lineno = 1;
  auto flush = [&] {
    if (rows.empty()) return;
    RolloutRecord r;
    const Index T = static_cast<Index>(rows.size());
    r.positions.resize(T, 2);
    r.velocities.resize(T, 2);
    r.accelerations.resize(T, 2);
    for (Index t = 0; t < T; ++t) {
      const auto& v = rows[static_cast<std::size_t>(t)];
      r.positions.row(t) << v[2], v[3];
      r.velocities.row(t) << v[4], v[5];
      r.accelerations.row(t) << v[6], v[7];
      r.drops.push_back(static_cast<int>(v[8]));
      r.replanned.push_back(static_cast<int>(v[9]));
      r.qp_status.push_back(static_cast<int>(v[10]));
      r.qp_iterations.push_back(0);
    }
    r.success = rows.back()[11] != 0.0;
    records.push_back(std::move(r));
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> v;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IoError("trace line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != 12) {
      throw IoError("trace line " + std::to_string(lineno) + ": expected 12 fields");
    }
    const long episode = static_cast<long>(v[0]);
    if (episode != current) {
      flush();
      current = episode;
    }
    rows.push_back(std::move(v));
  }
  flush();
  if (records.empty()) {
    throw IoError("trace: no steps");
  }
  return records;
}

}  // namespace trajlayer::rollout
