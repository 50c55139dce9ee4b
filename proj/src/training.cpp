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

#include "trajlayer/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "trajlayer/config.hpp"

namespace trajlayer::training {

namespace {

Matrix row_of(const std::vector<double>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
  return m;
}

}  // namespace

const char* head_name(HeadKind head) {
  return head == HeadKind::Qp ? "qp" : "affine";
}

HeadKind parse_head(const std::string& name) {
  if (name == "qp") return HeadKind::Qp;
  if (name == "affine") return HeadKind::Affine;
  throw ConfigError("unknown head '" + name + "' (expected qp or affine)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (epochs < 0) fail("epochs must be nonnegative");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (T_s < 1 || T_p < 1 || T_a < 1 || T_a > T_p) fail("need T_s, T_p >= 1 and 1 <= T_a <= T_p");
  if (stride < 1) fail("stride must be at least 1");
  if (!(alpha >= 0.0)) fail("alpha must be nonnegative");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(v_min <= 0.0 && 0.0 <= v_max && v_min < v_max)) fail("need v_min <= 0 <= v_max, v_min < v_max");
  if (!(a_min <= 0.0 && 0.0 <= a_max && a_min < a_max)) fail("need a_min <= 0 <= a_max, a_min < a_max");
  if (!(pos_min < pos_max)) fail("need pos_min < pos_max");
  if (hidden < 1) fail("hidden must be at least 1");
}

std::vector<Matrix*> Model::tensors() {
  std::vector<Matrix*> t = encoder.tensors();
  t.push_back(&dto.L);
  return t;
}

std::vector<const Matrix*> Model::tensors() const {
  std::vector<const Matrix*> t = encoder.tensors();
  t.push_back(&dto.L);
  return t;
}

std::vector<std::string> Model::tensor_names() {
  std::vector<std::string> names;
  for (const char* n : encoder::EncoderParams::tensor_names()) names.push_back(std::string("encoder/") + n);
  names.push_back("dto/L");
  return names;
}

dto::DtoParams make_dto_params(const TrainConfig& cfg, const dataset::Normalizer& normalizer,
                               const dataset::TaskConfig& task) {
  const std::vector<Index> dims = {0, 1};
  const Matrix S = dto::selection_matrix(dataset::kActionDim, dims);
  dto::DtoParams p = dto::make_params(S, cfg.T_p, cfg.T_s, cfg.T_a, cfg.alpha,
                                      Vector::Constant(2, cfg.v_min), Vector::Constant(2, cfg.v_max),
                                      Vector::Constant(2, cfg.a_min), Vector::Constant(2, cfg.a_max));
  p.epsilon = cfg.epsilon;
  p.A_pos = Matrix::Identity(2, 2);
  p.b_min = Vector::Constant(2, cfg.pos_min);
  p.b_max = Vector::Constant(2, cfg.pos_max);
  p.displacement_scale.resize(2);
  for (Index i = 0; i < 2; ++i) {
    p.displacement_scale[i] = normalizer.scale[dims[static_cast<std::size_t>(i)]] * task.dt;
  }
  p.validate();
  return p;
}

Model init_model(const TrainConfig& cfg, const dataset::Normalizer& normalizer,
                 const dataset::TaskConfig& task) {
  Model m;
  m.dto = make_dto_params(cfg, normalizer, task);
  m.encoder = encoder::init_params(dataset::kObsDim, cfg.hidden, m.dto.n(), cfg.seed);
  m.head = cfg.head;
  return m;
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               AdamState& state, const AdamHyper& hyper) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& g = grads[k];
    if (g.rows() != params[k]->rows() || g.cols() != params[k]->cols()) {
      throw ShapeError("adam_step: gradient " + std::to_string(k) + " is " + shape_str(g) +
                       ", parameter is " + shape_str(*params[k]));
    }
    state.m[k] = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g;
    state.v[k] = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = state.m[k] / c1;
    const Matrix v_hat = state.v[k] / c2;
    *params[k] -= hyper.learning_rate *
                  m_hat.cwiseQuotient((v_hat.array().sqrt() + hyper.eps).matrix());
  }
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix& g : grads) g *= s;
  }
  return norm;
}

BatchResult batch_loss(const Model& model, const std::vector<const dataset::SequenceSample*>& batch,
                       const LossOptions& options) {
  if (batch.empty()) {
    throw std::invalid_argument("batch_loss: empty batch");
  }
  const Index B = static_cast<Index>(batch.size());
  const Index T_s = batch.front()->observations.cols();
  const Index obs_dim = batch.front()->observations.rows();
  const Index n = batch.front()->targets.rows();
  const Index dv = batch.front()->positions.rows();
  if (n != model.dto.n()) {
    throw ShapeError("batch_loss: targets have " + std::to_string(n) + " rows, model predicts " +
                     std::to_string(model.dto.n()));
  }

  ad::Tape tape;
  const encoder::TapeParams tp = encoder::record_params(tape, model.encoder);
  const ad::NodeId L = tape.parameter(model.dto.L);
  encoder::TapeState state = encoder::record_init_state(tape, model.encoder.hidden(), B);

  dto::NodeOptions node_opts;
  node_opts.settings = options.settings;
  node_opts.mode = model.head == HeadKind::Qp ? dto::Mode::train() : dto::Mode::unconstrained();
  node_opts.pullback_scale = options.pullback_scale;

  BatchResult out;
  out.min_margin = std::numeric_limits<double>::infinity();
  std::vector<std::shared_ptr<int>> skipped;
  long iterations = 0;
  long solves = 0;
  std::optional<ad::NodeId> total;
  Matrix obs(obs_dim, B), pos(dv, B), target(n, B);
  for (Index j = 0; j < T_s; ++j) {
    for (Index b = 0; b < B; ++b) {
      const dataset::SequenceSample& w = *batch[static_cast<std::size_t>(b)];
      obs.col(b) = w.observations.col(j);
      pos.col(b) = w.positions.col(j);
      target.col(b) = w.targets.col(j);
    }
    const encoder::TapeStep st = encoder::record_step(tape, tp, tape.constant(obs), state);
    state = st.state;
    const dto::DtoNode node = dto::record_dto_node(tape, model.dto, st.e, L, pos, node_opts);
    skipped.push_back(node.skipped);
    for (std::size_t b = 0; b < node.forward->solutions.size(); ++b) {
      iterations += node.forward->solutions[b].iterations;
      ++solves;
      out.min_margin = std::min(out.min_margin, qp::strict_complementarity_margin(
                                                    node.forward->problems[b], node.forward->solutions[b]));
    }
    const ad::NodeId sq = tape.sum_of_squares(tape.sub(node.id, tape.constant(target)));
    total = total ? tape.add(*total, sq) : sq;
  }
  const ad::NodeId loss = tape.scale(*total, 1.0 / static_cast<double>(n * T_s * B));
  out.loss = tape.value(loss)(0, 0);
  out.mean_qp_iterations = solves > 0 ? static_cast<double>(iterations) / static_cast<double>(solves) : 0.0;
  if (options.gradients) {
    const ad::GradMap g = tape.backward(loss);
    for (ad::NodeId id : tp.ids()) out.grads.push_back(g[id]);
    out.grads.push_back(Matrix(g[L].triangularView<Eigen::Lower>()));
    for (const auto& s : skipped) out.skipped += *s;
  }
  return out;
}

Checkpoint train(const dataset::Dataset& data, const TrainConfig& cfg, const Checkpoint* resume,
                 const TrainHooks& hooks) {
  cfg.validate();
  data.task.validate();
  if (data.demos.empty()) {
    throw ConfigError("train: dataset has no demonstrations");
  }
  if (auto bad = dataset::find_position_violation(data.demos, Vector::Constant(2, cfg.pos_min),
                                                  Vector::Constant(2, cfg.pos_max))) {
    throw ConfigError("train: demo " + std::to_string(bad->demo) + " step " +
                      std::to_string(bad->step) + " position (" + std::to_string(bad->position[0]) +
                      ", " + std::to_string(bad->position[1]) + ") violates the position bounds [" +
                      std::to_string(cfg.pos_min) + ", " + std::to_string(cfg.pos_max) +
                      "]; training QPs would not be guaranteed feasible, refusing to train");
  }
  const std::vector<dataset::Demonstration> demos = dataset::normalize_demos(data.demos, data.normalizer);
  const std::vector<dataset::SequenceSample> windows =
      dataset::sample_windows(demos, cfg.T_s, cfg.T_p, cfg.stride);

  Checkpoint ck;
  if (resume != nullptr) {
    ck = *resume;
    const Model fresh = init_model(cfg, data.normalizer, data.task);
    const auto a = ck.model.tensors();
    const auto b = fresh.tensors();
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k]->rows() != b[k]->rows() || a[k]->cols() != b[k]->cols()) {
        throw ConfigError("train: resume checkpoint tensor " + Model::tensor_names()[k] + " is " +
                          shape_str(*a[k]) + ", config implies " + shape_str(*b[k]));
      }
    }
    if (ck.model.head != cfg.head) {
      throw ConfigError("train: resume checkpoint head differs from train.head");
    }
  } else {
    ck.model = init_model(cfg, data.normalizer, data.task);
    ck.normalizer = data.normalizer;
    ck.task = data.task;
  }
  ck.config = cfg;

  const AdamHyper hyper{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps};
  if (!hooks.log_csv.empty() && (resume == nullptr || !std::filesystem::exists(hooks.log_csv))) {
    io::write_text(hooks.log_csv, "epoch,loss,mean_qp_iterations,wall_time_s,skipped\n");
  }
  spdlog::info("training on {} windows from {} demos, head {}, epochs {} -> {}", windows.size(),
               demos.size(), head_name(cfg.head), ck.epoch, cfg.epochs);

  std::vector<std::size_t> order(windows.size());
  for (int epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    double iter_sum = 0.0;
    int batches = 0;
    int skipped = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const dataset::SequenceSample*> batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&windows[order[k]]);
      BatchResult r = batch_loss(ck.model, batch);
      clip_global_norm(r.grads, cfg.clip_norm);
      adam_step(ck.model.tensors(), r.grads, ck.adam, hyper);
      ck.model.dto.L = ck.model.dto.L.triangularView<Eigen::Lower>();
      loss_sum += r.loss * static_cast<double>(batch.size());
      iter_sum += r.mean_qp_iterations;
      skipped += r.skipped;
      ++batches;
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.loss = loss_sum / static_cast<double>(windows.size());
    stats.mean_qp_iterations = iter_sum / std::max(1, batches);
    stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stats.skipped = skipped;
    ck.epoch = epoch + 1;
    ck.loss_history.push_back(stats.loss);
    if (skipped > 0) {
      spdlog::warn("epoch {}: {} singular samples skipped in backward", stats.epoch, skipped);
    }
    spdlog::debug("epoch {} loss {:.6g} qp iterations {:.2f} {:.2f}s", stats.epoch, stats.loss,
                  stats.mean_qp_iterations, stats.wall_seconds);
    if (!hooks.log_csv.empty()) {
      std::ofstream log(hooks.log_csv, std::ios::app);
      log << stats.epoch << ',' << fmt::format("{:.17g}", stats.loss) << ','
          << fmt::format("{:.4f}", stats.mean_qp_iterations) << ','
          << fmt::format("{:.3f}", stats.wall_seconds) << ',' << stats.skipped << '\n';
      if (!log) {
        throw IoError("cannot append to training log " + hooks.log_csv.string());
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(stats);
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::Container c;
  c.schema_version = kCheckpointSchemaVersion;
  const dto::DtoParams& d = ck.model.dto;
  c.meta["kind"] = "checkpoint";
  c.meta["epoch"] = ck.epoch;
  c.meta["head"] = head_name(ck.model.head);
  c.meta["train"] = config::train_to_json(ck.config);
  c.meta["task"] = config::task_to_json(ck.task);
  c.meta["run_config"] = ck.run_config;
  c.meta["continuous_dims"] = ck.normalizer.continuous_dims;
  c.meta["dto"] = {{"epsilon", d.epsilon}, {"alpha", d.alpha}, {"delta_t", d.delta_t},
                   {"T_p", d.T_p}, {"T_s", d.T_s}, {"T_a", d.T_a}};
  c.meta["adam_step"] = ck.adam.step;
  const auto names = Model::tensor_names();
  const auto tensors = ck.model.tensors();
  for (std::size_t k = 0; k < names.size(); ++k) c.arrays.push_back({names[k], *tensors[k]});
  c.arrays.push_back({"dto/S", d.S});
  c.arrays.push_back({"dto/A_pos", d.A_pos});
  c.arrays.push_back({"dto/b_min", d.b_min});
  c.arrays.push_back({"dto/b_max", d.b_max});
  c.arrays.push_back({"dto/v_min", d.v_min});
  c.arrays.push_back({"dto/v_max", d.v_max});
  c.arrays.push_back({"dto/a_min", d.a_min});
  c.arrays.push_back({"dto/a_max", d.a_max});
  c.arrays.push_back({"dto/displacement_scale", d.displacement_scale});
  c.arrays.push_back({"normalizer/scale", ck.normalizer.scale});
  c.arrays.push_back({"loss_history", row_of(ck.loss_history)});
  for (std::size_t k = 0; k < ck.adam.m.size(); ++k) {
    c.arrays.push_back({"adam/m/" + names[k], ck.adam.m[k]});
    c.arrays.push_back({"adam/v/" + names[k], ck.adam.v[k]});
  }
  io::write_container(path, "TLCKPT", c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path, "TLCKPT", kCheckpointSchemaVersion);
  Checkpoint ck;
  try {
    if (c.meta.at("kind").get<std::string>() != "checkpoint") {
      throw IoError(path.string() + ": not a checkpoint");
    }
    ck.epoch = c.meta.at("epoch").get<int>();
    ck.model.head = parse_head(c.meta.at("head").get<std::string>());
    ck.config = config::train_from_json(c.meta.at("train"));
    ck.task = config::task_from_json(c.meta.at("task"));
    ck.run_config = c.meta.at("run_config");
    ck.normalizer.continuous_dims = c.meta.at("continuous_dims").get<std::vector<Index>>();
    const io::Json& dj = c.meta.at("dto");
    dto::DtoParams& d = ck.model.dto;
    d.epsilon = dj.at("epsilon").get<double>();
    d.alpha = dj.at("alpha").get<double>();
    d.delta_t = dj.at("delta_t").get<double>();
    d.T_p = dj.at("T_p").get<int>();
    d.T_s = dj.at("T_s").get<int>();
    d.T_a = dj.at("T_a").get<int>();
    ck.adam.step = c.meta.at("adam_step").get<long>();
    const auto names = Model::tensor_names();
    const auto tensors = ck.model.tensors();
    for (std::size_t k = 0; k < names.size(); ++k) *tensors[k] = c.array(names[k]);
    d.S = c.array("dto/S");
    d.A_pos = c.array("dto/A_pos");
    d.b_min = c.array("dto/b_min");
    d.b_max = c.array("dto/b_max");
    d.v_min = c.array("dto/v_min");
    d.v_max = c.array("dto/v_max");
    d.a_min = c.array("dto/a_min");
    d.a_max = c.array("dto/a_max");
    d.displacement_scale = c.array("dto/displacement_scale");
    ck.normalizer.scale = c.array("normalizer/scale");
    const Matrix& hist = c.array("loss_history");
    ck.loss_history.assign(hist.data(), hist.data() + hist.size());
    if (ck.adam.step > 0) {
      for (const std::string& n : names) {
        ck.adam.m.push_back(c.array("adam/m/" + n));
        ck.adam.v.push_back(c.array("adam/v/" + n));
      }
    }
    ck.model.encoder.validate();
    d.validate();
  } catch (const io::Json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": inconsistent checkpoint: " + e.what());
  }
  return ck;
}

}  // namespace trajlayer::training
