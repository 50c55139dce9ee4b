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

#include "trajlayer/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

namespace trajlayer::encoder {

namespace {

Vector sigmoid(const Vector& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

void check_shape(const char* name, const Matrix& m, Index rows, Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError(std::string("encoder: ") + name + " is " + shape_str(m) + ", expected " +
                      shape_str(rows, cols));
  }
  if (!m.allFinite()) {
    throw ConfigError(std::string("encoder: ") + name + " has non-finite entries");
  }
}

}  // namespace

std::vector<Matrix*> EncoderParams::tensors() {
  return {&W_i, &W_f, &W_g, &W_o, &b_i, &b_f, &b_g, &b_o, &W_out, &b_out};
}

std::vector<const Matrix*> EncoderParams::tensors() const {
  return {&W_i, &W_f, &W_g, &W_o, &b_i, &b_f, &b_g, &b_o, &W_out, &b_out};
}

const std::vector<const char*>& EncoderParams::tensor_names() {
  static const std::vector<const char*> names = {"W_i", "W_f", "W_g", "W_o", "b_i",
                                                 "b_f", "b_g", "b_o", "W_out", "b_out"};
  return names;
}

void EncoderParams::validate() const {
  const Index H = W_i.rows();
  if (H <= 0) {
    throw ConfigError("encoder: hidden size must be positive");
  }
  const Index in = W_i.cols();
  if (in <= H) {
    throw ConfigError("encoder: gate matrices need obs_dim + hidden columns, got " +
                      std::to_string(in) + " for hidden " + std::to_string(H));
  }
  check_shape("W_i", W_i, H, in);
  check_shape("W_f", W_f, H, in);
  check_shape("W_g", W_g, H, in);
  check_shape("W_o", W_o, H, in);
  check_shape("b_i", b_i, H, 1);
  check_shape("b_f", b_f, H, 1);
  check_shape("b_g", b_g, H, 1);
  check_shape("b_o", b_o, H, 1);
  if (W_out.rows() <= 0) {
    throw ConfigError("encoder: output dimension must be positive");
  }
  check_shape("W_out", W_out, W_out.rows(), H);
  check_shape("b_out", b_out, W_out.rows(), 1);
}

EncoderParams zero_params(Index obs_dim, Index hidden, Index output_dim) {
  const Index in = obs_dim + hidden;
  EncoderParams p;
  for (Matrix* w : {&p.W_i, &p.W_f, &p.W_g, &p.W_o}) {
    *w = Matrix::Zero(hidden, in);
  }
  for (Matrix* b : {&p.b_i, &p.b_f, &p.b_g, &p.b_o}) {
    *b = Matrix::Zero(hidden, 1);
  }
  p.W_out = Matrix::Zero(output_dim, hidden);
  p.b_out = Matrix::Zero(output_dim, 1);
  return p;
}

EncoderParams init_params(Index obs_dim, Index hidden, Index output_dim, std::uint64_t seed) {
  if (obs_dim <= 0 || hidden <= 0 || output_dim <= 0) {
    throw ConfigError("encoder: obs_dim, hidden and output_dim must be positive");
  }
  EncoderParams p = zero_params(obs_dim, hidden, output_dim);
  std::mt19937_64 rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(obs_dim + hidden));
  std::uniform_real_distribution<double> dist(-k, k);
  for (Matrix* t : p.tensors()) {
    for (Index j = 0; j < t->cols(); ++j) {
      for (Index i = 0; i < t->rows(); ++i) {
        (*t)(i, j) = dist(rng);
      }
    }
  }
  p.b_f.setOnes();
  return p;
}

EncoderState init_state(const EncoderParams& params) {
  return {Vector::Zero(params.hidden()), Vector::Zero(params.hidden())};
}

StepResult step(const EncoderParams& params, const Vector& obs, const EncoderState& state) {
  const Index H = params.hidden();
  if (obs.size() != params.obs_dim()) {
    throw ShapeError("encoder step: observation has " + std::to_string(obs.size()) +
                     " entries, expected " + std::to_string(params.obs_dim()));
  }
  if (state.hidden.size() != H || state.cell.size() != H) {
    throw ShapeError("encoder step: state size does not match hidden " + std::to_string(H));
  }
  Vector x(obs.size() + H);
  x << obs, state.hidden;
  const Vector i = sigmoid(params.W_i * x + params.b_i.col(0));
  const Vector f = sigmoid(params.W_f * x + params.b_f.col(0));
  const Vector g = (params.W_g * x + params.b_g.col(0)).array().tanh().matrix();
  const Vector o = sigmoid(params.W_o * x + params.b_o.col(0));
  StepResult out;
  out.state.cell = f.cwiseProduct(state.cell) + i.cwiseProduct(g);
  out.state.hidden = o.cwiseProduct(out.state.cell.array().tanh().matrix());
  out.e = params.W_out * out.state.hidden + params.b_out.col(0);
  return out;
}

std::vector<ad::NodeId> TapeParams::ids() const {
  return {W_i, W_f, W_g, W_o, b_i, b_f, b_g, b_o, W_out, b_out};
}

TapeParams record_params(ad::Tape& tape, const EncoderParams& params) {
  TapeParams t;
  t.W_i = tape.parameter(params.W_i);
  t.W_f = tape.parameter(params.W_f);
  t.W_g = tape.parameter(params.W_g);
  t.W_o = tape.parameter(params.W_o);
  t.b_i = tape.parameter(params.b_i);
  t.b_f = tape.parameter(params.b_f);
  t.b_g = tape.parameter(params.b_g);
  t.b_o = tape.parameter(params.b_o);
  t.W_out = tape.parameter(params.W_out);
  t.b_out = tape.parameter(params.b_out);
  return t;
}

TapeState record_init_state(ad::Tape& tape, Index hidden, Index batch) {
  return {tape.constant(Matrix::Zero(hidden, batch)), tape.constant(Matrix::Zero(hidden, batch))};
}

TapeStep record_step(ad::Tape& tape, const TapeParams& params, ad::NodeId obs,
                     const TapeState& state) {
  const Index B = tape.value(obs).cols();
  const Index obs_dim = tape.value(params.W_i).cols() - tape.value(params.W_i).rows();
  if (tape.value(obs).rows() != obs_dim) {
    throw ShapeError("encoder step: observation is " + shape_str(tape.value(obs)) +
                     ", expected " + std::to_string(obs_dim) + " rows");
  }
  const ad::NodeId ones = tape.constant(Matrix::Ones(1, B));
  const ad::NodeId x = tape.concat({obs, state.hidden});
  auto affine = [&](ad::NodeId W, ad::NodeId b, ad::NodeId in) {
    return tape.add(tape.matmul(W, in), tape.matmul(b, ones));
  };
  const ad::NodeId i = tape.sigmoid(affine(params.W_i, params.b_i, x));
  const ad::NodeId f = tape.sigmoid(affine(params.W_f, params.b_f, x));
  const ad::NodeId g = tape.tanh(affine(params.W_g, params.b_g, x));
  const ad::NodeId o = tape.sigmoid(affine(params.W_o, params.b_o, x));
  TapeStep out;
  out.state.cell = tape.add(tape.mul(f, state.cell), tape.mul(i, g));
  out.state.hidden = tape.mul(o, tape.tanh(out.state.cell));
  out.e = affine(params.W_out, params.b_out, out.state.hidden);
  return out;
}

}  // namespace trajlayer::encoder
