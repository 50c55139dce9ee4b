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

#include <memory>
#include <vector>

#include "trajlayer/autodiff.hpp"
#include "trajlayer/common.hpp"
#include "trajlayer/qp.hpp"

/**
 * @file
 * @brief Differentiable trajectory-optimization layer.
 *
 * The layer maps an embedding e (length n = T_p * D_y) and the current position
 * p to the action sequence
 *
 *     y* = argmin 1/2 y'Qbar y + e'y
 *          s.t. position, velocity and acceleration bounds on the decoded
 *               trajectory,
 *
 * with Qbar = L L' + eps I + alpha (A_diff S)'(A_diff S). Only L is learned.
 * Velocities are v = S y (the continuous action dimensions), accelerations are
 * A_diff v, and the predicted positions p_1..p_{T_p-1} are p + A_inte diag(k) v
 * where k is the per-dimension displacement scale (ones by default).
 */

namespace trajlayer::dto {

struct DtoParams {
  Matrix L;               // n x n, lower triangular, learned
  double epsilon = 1e-4;  // Q = L L' + epsilon I
  double alpha = 1.0;     // smoothing weight on squared accelerations
  Matrix S;               // D_v x D_y selection of continuous dims
  Matrix A_pos;           // m_p x D_v, applied at every predicted step; may have 0 rows
  Vector b_min, b_max;    // m_p
  Vector v_min, v_max;    // D_v
  Vector a_min, a_max;    // D_v
  double delta_t = 1.0;
  /// Position change per unit velocity per step, before delta_t.
  Vector displacement_scale;  // D_v
  int T_p = 6;
  int T_s = 12;
  int T_a = 3;

  Index D_y() const { return S.cols(); }
  Index D_v() const { return S.rows(); }
  Index n() const { return static_cast<Index>(T_p) * D_y(); }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const;
};

/// Parameters with L = identity, given the selection and bounds.
DtoParams make_params(const Matrix& S, int T_p, int T_s, int T_a, double alpha,
                      const Vector& v_min, const Vector& v_max, const Vector& a_min,
                      const Vector& a_max, double delta_t = 1.0);

/// Standard-basis selection of the listed action dimensions.
Matrix selection_matrix(Index D_y, const std::vector<Index>& continuous_dims);

Matrix build_selection_block(const Matrix& S, int T_p);
Matrix build_diff_matrix(int T_p, Index D_v, double delta_t);
Matrix build_integration_matrix(int T_p, Index D_v, double delta_t);

/// Which constraint set the QP carries.
struct Mode {
  enum class Kind { Train, Deploy, Unconstrained };
  Kind kind = Kind::Train;
  Vector prev_action;  // last executed velocity, Deploy only

  static Mode train() { return {}; }
  static Mode deploy(Vector prev) { return {Kind::Deploy, std::move(prev)}; }
  /// No constraints: y* = -Qbar^{-1} e.
  static Mode unconstrained() { return {Kind::Unconstrained, {}}; }
};

/// Slack allowed on the start position before InfeasibleStart is raised.
inline constexpr double kStartTolerance = 1e-9;

/// Current position violates the position bounds, so feasibility is not guaranteed.
class InfeasibleStart : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct TrajectoryDecomposition {
  Vector v_hat;  // T_p * D_v
  Vector a_hat;  // (T_p - 1) * D_v
  Vector p_hat;  // (T_p - 1) * D_v
  Vector p_t0;   // (T_p - 1) * D_v copies of p
};

struct DtoForward {
  Vector y;  // y*
  qp::QpSolution solution;
};

struct DtoGradient {
  Matrix grad_L;  // lower triangular
  Vector grad_e;
};

struct LeastSquaresForm {
  Matrix L_bar;  // Qbar = L_bar L_bar'
  Vector e_bar;  // e = -L_bar e_bar
};

class DtoLayer {
 public:
  explicit DtoLayer(DtoParams params);

  const DtoParams& params() const { return params_; }
  const Matrix& Q_bar() const { return q_bar_; }
  const Matrix& selection_block() const { return s_blk_; }
  const Matrix& diff_matrix() const { return a_diff_; }
  const Matrix& integration_matrix() const { return a_inte_; }

  /// Replaces L (re-masked to its lower triangle) and refreshes Qbar.
  void set_L(const Matrix& L);

  /// Throws InfeasibleStart or ShapeError.
  qp::QpProblem assemble_qp(const Vector& e, const Vector& p, const Mode& mode) const;

  DtoForward forward(const Vector& e, const Vector& p, const Mode& mode,
                     const qp::QpSettings& settings = {}) const;

  DtoGradient backward(const Vector& e, const Vector& p, const Mode& mode,
                       const qp::QpSolution& solution, const Vector& grad_out,
                       const qp::BackwardSettings& settings = {}) const;

  LeastSquaresForm least_squares_form(const Vector& e) const;

  TrajectoryDecomposition decompose(const Vector& y, const Vector& p) const;

  /// Number of inequality rows assemble_qp produces for a mode.
  Index num_constraints(const Mode& mode) const;

 private:
  void refresh_q_bar();

  DtoParams params_;
  Matrix s_blk_;
  Matrix a_diff_;
  Matrix a_inte_;
  Matrix smoothing_;    // alpha (A_diff S)'(A_diff S)
  Matrix train_G_;      // constraint rows shared by every Train/Deploy QP
  Matrix pos_map_;      // A_pos blocks applied to the stacked p_t0
  Matrix q_bar_;
};

/// Per-column results of a batched forward pass.
struct BatchForward {
  Matrix Y;  // n x B
  std::vector<qp::QpSolution> solutions;
  std::vector<qp::QpProblem> problems;
};

/// Column b of E / positions is one instance. Serial reference implementation.
BatchForward forward_batch_serial(const DtoLayer& layer, const Matrix& E, const Matrix& positions,
                                  const Mode& mode, const qp::QpSettings& settings = {});

/// OpenMP-parallel over columns; identical per-column results.
BatchForward forward_batch(const DtoLayer& layer, const Matrix& E, const Matrix& positions,
                           const Mode& mode, const qp::QpSettings& settings = {});

struct BatchGradient {
  Matrix grad_L;
  Matrix grad_E;       // n x B
  int skipped = 0;     // columns whose KKT system stayed singular after the retry
};

/// Sums per-column gradients in column order. Singular columns get one
/// dual-regularized retry, then contribute zero.
BatchGradient backward_batch(const DtoLayer& layer, const BatchForward& fwd,
                             const Matrix& grad_Y);

/// Test hook: scales every pullback result, to prove gradient checks can fail.
struct NodeOptions {
  qp::QpSettings settings;
  Mode mode;
  double pullback_scale = 1.0;
};

struct DtoNode {
  ad::NodeId id;
  std::shared_ptr<const BatchForward> forward;
  std::shared_ptr<int> skipped;  // filled in when the tape runs backward
};

/// Records the batched layer on a tape with inputs (E, L). Positions are fixed
/// data. Throws NumericalError if any column does not reach Solved.
DtoNode record_dto_node(ad::Tape& tape, const DtoParams& params, ad::NodeId E, ad::NodeId L,
                        const Matrix& positions, const NodeOptions& options = {});

}  // namespace trajlayer::dto
