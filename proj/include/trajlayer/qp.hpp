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

#include <span>
#include <vector>

#include "trajlayer/common.hpp"

/**
 * @file
 * @brief Dense inequality-constrained convex QP:
 *
 *     minimize   1/2 z'Pz + q'z
 *     subject to Gz <= h
 *
 * solved with a primal-dual Mehrotra predictor-corrector interior point method,
 * plus implicit differentiation of the solution map through the KKT system.
 */

namespace trajlayer::qp {

/**
 * @brief Problem data. Construction symmetrizes P and checks that it is finite
 * and positive definite; G may have zero rows.
 */
class QpProblem {
 public:
  QpProblem(Matrix P, Vector q, Matrix G, Vector h);

  const Matrix& P() const { return P_; }
  const Vector& q() const { return q_; }
  const Matrix& G() const { return G_; }
  const Vector& h() const { return h_; }
  Index num_variables() const { return q_.size(); }
  Index num_constraints() const { return h_.size(); }
  const Eigen::LLT<Matrix>& cholesky() const { return llt_; }

 private:
  Matrix P_;
  Vector q_;
  Matrix G_;
  Vector h_;
  Eigen::LLT<Matrix> llt_;
};

enum class QpStatus { Solved, MaxIterations, Infeasible };

const char* status_name(QpStatus status);

struct QpSolution {
  Vector z;
  Vector lambda;
  QpStatus status = QpStatus::MaxIterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;

  bool solved() const { return status == QpStatus::Solved; }
};

struct QpSettings {
  double tolerance = 1e-8;
  int max_iterations = 50;
  /// Try an exact active-set solve once the duality measure drops below this.
  double polish_threshold = 1e-6;
};

/// Max-norm KKT residuals of a candidate point.
struct KktResidual {
  double stationarity = 0.0;  // ||Pz + q + G'lambda||_inf
  double primal = 0.0;        // max(0, max_i (Gz - h)_i)
  double complementarity = 0.0;  // max_i |lambda_i (h - Gz)_i|
  double dual_sign = 0.0;         // max(0, -min_i lambda_i)

  double max() const;
};

QpSolution solve(const QpProblem& problem, const QpSettings& settings = {});

/// Pure function of its arguments.
KktResidual check_kkt(const QpProblem& problem, const Vector& z, const Vector& lambda);

inline KktResidual check_kkt(const QpProblem& problem, const QpSolution& solution) {
  return check_kkt(problem, solution.z, solution.lambda);
}

/// The KKT matrix of the active constraints could not be factored.
class SingularKkt : public NumericalError {
 public:
  SingularKkt(const std::string& what, double condition_estimate)
      : NumericalError(what), condition_estimate_(condition_estimate) {}
  double condition_estimate() const { return condition_estimate_; }

 private:
  double condition_estimate_;
};

struct QpGradient {
  Matrix grad_P;  // symmetric
  Vector grad_q;
};

struct BackwardSettings {
  /// Dual regularization on the active block; 0 means exact.
  double dual_regularization = 0.0;
  /// Constraints with both slack and dual below this count as active.
  double weak_threshold = 1e-8;
  /// Reciprocal condition below which the active KKT block is called singular.
  double min_rcond = 1e-13;
};

/**
 * @brief Adjoint of the solution map (P, q) -> z*.
 *
 * Solves the KKT system linearized at (z*, lambda*) restricted to the active
 * set. Gradients for G and h are not produced. Throws SingularKkt when the
 * active block is numerically singular, std::invalid_argument when the solution
 * is not Solved.
 */
QpGradient backward(const QpProblem& problem, const QpSolution& solution, const Vector& grad_out,
                    const BackwardSettings& settings = {});

/// backward() with one dual-regularized retry on SingularKkt.
QpGradient backward_with_retry(const QpProblem& problem, const QpSolution& solution,
                               const Vector& grad_out, double regularization = 1e-10);

/// Indices treated as active by backward().
std::vector<Index> active_set(const QpProblem& problem, const QpSolution& solution,
                              double weak_threshold = 1e-8);

/// min_i max(lambda_i, slack_i); small values flag weakly active constraints.
double strict_complementarity_margin(const QpProblem& problem, const QpSolution& solution);

/// Solves each problem in turn. Reference implementation for solve_batch.
std::vector<QpSolution> solve_batch_serial(std::span<const QpProblem> problems,
                                           const QpSettings& settings = {});

/// OpenMP-parallel over problems; per-item results identical to solve_batch_serial.
std::vector<QpSolution> solve_batch(std::span<const QpProblem> problems,
                                    const QpSettings& settings = {});

}  // namespace trajlayer::qp
