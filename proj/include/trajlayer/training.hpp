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
#include <functional>
#include <string>
#include <vector>

#include "trajlayer/dataset.hpp"
#include "trajlayer/dto.hpp"
#include "trajlayer/encoder.hpp"
#include "trajlayer/io.hpp"
#include "trajlayer/qp.hpp"

/**
 * @file
 * @brief End-to-end imitation training of the encoder and the DTO cost factor L.
 */

namespace trajlayer::training {

/// Qp: the constrained DTO layer. Affine: y = -Qbar^{-1} e with the same
/// parameters and no constraints (the baseline head).
enum class HeadKind { Qp, Affine };

const char* head_name(HeadKind head);
HeadKind parse_head(const std::string& name);  // throws ConfigError

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  int T_s = 12;
  int T_p = 6;
  int T_a = 3;
  int stride = 1;
  double alpha = 1.0;
  double epsilon = 1e-4;
  double v_min = -1.0, v_max = 1.0;
  double a_min = -0.1, a_max = 0.1;
  double pos_min = 0.0, pos_max = 1.0;
  int hidden = 64;
  HeadKind head = HeadKind::Qp;

  /// Throws ConfigError.
  void validate() const;
};

/// Encoder plus DTO layer parameters. Only encoder tensors and dto.L train.
struct Model {
  encoder::EncoderParams encoder;
  dto::DtoParams dto;
  HeadKind head = HeadKind::Qp;

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  static std::vector<std::string> tensor_names();
};

/// Toy-task layer: D_y = 3 with velocity dims {0, 1}, unit-box position bounds
/// on both axes, displacement scale = normalizer scale * task dt.
dto::DtoParams make_dto_params(const TrainConfig& cfg, const dataset::Normalizer& normalizer,
                               const dataset::TaskConfig& task);

Model init_model(const TrainConfig& cfg, const dataset::Normalizer& normalizer,
                 const dataset::TaskConfig& task);

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// Standard bias-corrected Adam. Moments are created on the first call.
void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               AdamState& state, const AdamHyper& hyper);

/// Rescales grads in place so their global 2-norm is at most max_norm; returns
/// the norm before clipping.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

struct BatchResult {
  double loss = 0.0;
  std::vector<Matrix> grads;   // Model::tensors() order; empty if not requested
  double mean_qp_iterations = 0.0;
  double min_margin = 0.0;     // strict complementarity margin over all QPs
  int skipped = 0;             // singular columns dropped in backward
};

struct LossOptions {
  bool gradients = true;
  qp::QpSettings settings;
  double pullback_scale = 1.0;  // test hook, see dto::NodeOptions
};

/// Mean squared error over T_p*D_y, steps and batch. Throws NumericalError if
/// a QP is not Solved.
BatchResult batch_loss(const Model& model, const std::vector<const dataset::SequenceSample*>& batch,
                       const LossOptions& options = {});

/// Training state sufficient for a bitwise-identical resume.
struct Checkpoint {
  Model model;
  dataset::Normalizer normalizer;
  dataset::TaskConfig task;
  TrainConfig config;
  int epoch = 0;
  std::vector<double> loss_history;
  AdamState adam;
  io::Json run_config = io::Json::object();  // full run configuration, for provenance
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double mean_qp_iterations = 0.0;
  double wall_seconds = 0.0;
  int skipped = 0;
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  /// Written after every epoch when non-empty (epoch, loss, mean_qp_iterations, wall_time, skipped).
  std::filesystem::path log_csv;
};

/// Trains from scratch, or continues `resume` up to cfg.epochs. Checks that every
/// demonstrated position satisfies the position bounds before any update.
Checkpoint train(const dataset::Dataset& data, const TrainConfig& cfg,
                 const Checkpoint* resume = nullptr, const TrainHooks& hooks = {});

inline constexpr int kCheckpointSchemaVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trajlayer::training
