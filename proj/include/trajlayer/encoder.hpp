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
#include <utility>
#include <vector>

#include "trajlayer/autodiff.hpp"
#include "trajlayer/common.hpp"

/**
 * @file
 * @brief Single-layer LSTM observation encoder with an affine output head.
 *
 *     [i f g o] = [sigm sigm tanh sigm](W_* [x; h] + b_*)
 *     c' = f * c + i * g,  h' = o * tanh(c'),  e = W_out h' + b_out
 */

namespace trajlayer::encoder {

/// Biases are stored as single-column matrices so every tensor has one type.
struct EncoderParams {
  Matrix W_i, W_f, W_g, W_o;  // hidden x (obs + hidden)
  Matrix b_i, b_f, b_g, b_o;  // hidden x 1
  Matrix W_out;               // n x hidden
  Matrix b_out;               // n x 1

  Index obs_dim() const { return W_i.cols() - W_i.rows(); }
  Index hidden() const { return W_i.rows(); }
  Index output_dim() const { return W_out.rows(); }

  /// Fixed order used by the optimizer and the checkpoint format.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  static const std::vector<const char*>& tensor_names();

  /// Throws ConfigError on inconsistent shapes or non-finite entries.
  void validate() const;
};

/// Uniform in [-k, k], k = 1/sqrt(obs + hidden); forget bias 1.
EncoderParams init_params(Index obs_dim, Index hidden, Index output_dim, std::uint64_t seed);

EncoderParams zero_params(Index obs_dim, Index hidden, Index output_dim);

struct EncoderState {
  Vector hidden;
  Vector cell;
};

EncoderState init_state(const EncoderParams& params);

struct StepResult {
  Vector e;
  EncoderState state;
};

/// Pure single-instance step. Throws ShapeError on dimension mismatch.
StepResult step(const EncoderParams& params, const Vector& obs, const EncoderState& state);

/// Parameter nodes of one tape.
struct TapeParams {
  ad::NodeId W_i, W_f, W_g, W_o;
  ad::NodeId b_i, b_f, b_g, b_o;
  ad::NodeId W_out, b_out;

  std::vector<ad::NodeId> ids() const;
};

TapeParams record_params(ad::Tape& tape, const EncoderParams& params);

/// Batched recurrent state: hidden x B nodes.
struct TapeState {
  ad::NodeId hidden;
  ad::NodeId cell;
};

TapeState record_init_state(ad::Tape& tape, Index hidden, Index batch);

struct TapeStep {
  ad::NodeId e;  // n x B
  TapeState state;
};

/// Records one batched step; obs is an obs_dim x B node.
TapeStep record_step(ad::Tape& tape, const TapeParams& params, ad::NodeId obs,
                     const TapeState& state);

}  // namespace trajlayer::encoder
