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

#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "test_support.hpp"
#include "trajlayer/qp.hpp"

using namespace trajlayer;
using namespace trajlayer::qp;
namespace tt = trajlayer::testing;

namespace {

QpProblem box1d(double q) {
  Matrix P = Matrix::Identity(1, 1);
  Matrix G(2, 1);
  G << 1.0, -1.0;
  return QpProblem(P, Vector::Constant(1, q), G, Vector::Ones(2));
}

QpProblem to_problem(const tt::RandomQp& r) { return QpProblem(r.P, r.q, r.G, r.h); }

}  // namespace

TEST(QpProblem, SymmetrizesAndValidates) {
  Matrix P(2, 2);
  P << 2.0, 1.0, 0.0, 2.0;
  QpProblem p(P, Vector::Zero(2), Matrix(0, 2), Vector(0));
  EXPECT_DOUBLE_EQ(p.P()(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(p.P()(1, 0), 0.5);

  Matrix indefinite = Matrix::Identity(2, 2);
  indefinite(1, 1) = -1.0;
  EXPECT_THROW(QpProblem(indefinite, Vector::Zero(2), Matrix(0, 2), Vector(0)),
               std::invalid_argument);
  Vector bad_q = Vector::Zero(2);
  bad_q[0] = std::nan("");
  EXPECT_THROW(QpProblem(Matrix::Identity(2, 2), bad_q, Matrix(0, 2), Vector(0)),
               std::invalid_argument);
  EXPECT_THROW(QpProblem(Matrix::Identity(2, 2), Vector::Zero(3), Matrix(0, 3), Vector(0)),
               ShapeError);
}

TEST(QpSolve, InteriorOptimum) {
  const QpSolution s = solve(box1d(0.7));
  ASSERT_TRUE(s.solved());
  EXPECT_NEAR(s.z[0], -0.7, 1e-10);
  EXPECT_NEAR(s.lambda[0], 0.0, 1e-9);
  EXPECT_NEAR(s.lambda[1], 0.0, 1e-9);
}

TEST(QpSolve, ClippedOptimum) {
  const QpSolution s = solve(box1d(3.0));
  ASSERT_TRUE(s.solved());
  EXPECT_NEAR(s.z[0], -1.0, 1e-10);
  EXPECT_NEAR(s.lambda[0], 0.0, 1e-9);
  EXPECT_NEAR(s.lambda[1], 2.0, 1e-9);
}

TEST(QpSolve, ContradictoryBoundsAreInfeasible) {
  Matrix G(2, 1);
  G << 1.0, -1.0;
  QpProblem p(Matrix::Identity(1, 1), Vector::Zero(1), G, Vector::Constant(2, -1.0));
  EXPECT_EQ(solve(p).status, QpStatus::Infeasible);
}

TEST(QpSolve, InfeasibleBoxInHigherDimension) {
  std::mt19937_64 rng(5);
  const Index n = 4;
  Matrix G(2 * n, n);
  G << Matrix::Identity(n, n), -Matrix::Identity(n, n);
  Vector h(2 * n);
  h << Vector::Constant(n, 1.0), Vector::Constant(n, -1.0);
  h[0] = -2.0;  // z0 <= -2 and z0 >= 1
  const Matrix M = tt::uniform(rng, n, n);
  QpProblem p(M.transpose() * M + Matrix::Identity(n, n), tt::uniform_vec(rng, n), G, h);
  EXPECT_EQ(solve(p).status, QpStatus::Infeasible);
}

TEST(QpSolve, UnconstrainedProblem) {
  Matrix P(2, 2);
  P << 2.0, 0.5, 0.5, 1.0;
  Vector q(2);
  q << 1.0, -1.0;
  QpProblem p(P, q, Matrix(0, 2), Vector(0));
  const QpSolution s = solve(p);
  ASSERT_TRUE(s.solved());
  EXPECT_TRUE(s.z.isApprox(-P.llt().solve(q), 1e-12));
}

TEST(QpSolve, TinyIterationBudgetReportsMaxIterations) {
  std::mt19937_64 rng(9);
  const tt::RandomQp r = tt::planted_qp(rng, 8, 30, 3);
  QpSettings settings;
  settings.max_iterations = 1;
  settings.polish_threshold = 0.0;
  EXPECT_EQ(solve(to_problem(r), settings).status, QpStatus::MaxIterations);
}

TEST(QpSolve, MatchesActiveSetOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dn(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = dn(rng);
    const Index m = std::uniform_int_distribution<int>(1, 40)(rng);
    const Index k = std::uniform_int_distribution<int>(0, static_cast<int>(std::min<Index>(3, std::min(n, m))))(rng);
    const tt::RandomQp r = tt::planted_qp(rng, n, m, k);
    const QpSolution s = solve(to_problem(r));
    ASSERT_TRUE(s.solved()) << "trial " << trial << " status " << status_name(s.status);
    const auto oracle = tt::active_set_oracle(r.P, r.q, r.G, r.h, k);
    ASSERT_TRUE(oracle.has_value()) << "trial " << trial;
    EXPECT_LE((s.z - oracle->z).lpNorm<Eigen::Infinity>(), 1e-6) << "trial " << trial;
    EXPECT_LE(s.primal_residual, 1e-8);
    EXPECT_LE(s.dual_residual, 1e-8);
    EXPECT_LE(s.complementarity, 1e-8);
    EXPECT_GE(s.lambda.minCoeff(), -1e-9);
  }
}

TEST(QpSolve, NearlyDegenerateRowsResolvedToHighAccuracy) {
  // Planted optimum with rows that are barely active (tiny multiplier) or
  // barely inactive (tiny slack). The primal solution must be exact, not just
  // interior-point accurate.
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 6, m = 16;
    tt::RandomQp r = tt::planted_qp(rng, n, m, 0);  // only P and G are reused
    const Vector z = tt::uniform_vec(rng, n);
    Vector lam = Vector::Zero(m);
    Vector slack = tt::uniform_vec(rng, m, 0.05, 2.0);
    for (Index i = 0; i < 3; ++i) {
      slack[i] = 0.0;
      lam[i] = 0.5 + i;
    }
    slack[3] = 0.0;
    lam[3] = std::pow(10.0, -std::uniform_real_distribution<double>(4.0, 7.0)(rng));
    slack[4] = std::pow(10.0, -std::uniform_real_distribution<double>(4.0, 7.0)(rng));
    r.h = r.G * z + slack;
    r.q = -r.P * z - r.G.transpose() * lam;
    const QpSolution s = solve(QpProblem(r.P, r.q, r.G, r.h));
    ASSERT_TRUE(s.solved()) << "trial " << trial;
    EXPECT_LE((s.z - z).lpNorm<Eigen::Infinity>(), 1e-9) << "trial " << trial;
    EXPECT_LE((s.lambda - lam).lpNorm<Eigen::Infinity>(), 1e-8) << "trial " << trial;
  }
}

TEST(QpSolve, ScaleEquivariance) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const tt::RandomQp r = tt::planted_qp(rng, 6, 15, 2);
    const double c = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    const QpSolution a = solve(QpProblem(r.P, r.q, r.G, r.h));
    const QpSolution b = solve(QpProblem(c * r.P, c * r.q, r.G, r.h));
    ASSERT_TRUE(a.solved() && b.solved());
    EXPECT_LE((a.z - b.z).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(QpSolve, DualsNonnegativeAndComplementary) {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 50; ++trial) {
    const tt::RandomQp r = tt::planted_qp(rng, 5, 20, trial % 4);
    const QpProblem p = to_problem(r);
    const QpSolution s = solve(p);
    ASSERT_TRUE(s.solved());
    EXPECT_GE(s.lambda.minCoeff(), -1e-9);
    const Vector gap = p.G() * s.z - p.h();
    EXPECT_LE(gap.maxCoeff(), 1e-8);
    EXPECT_LE(s.lambda.cwiseProduct(gap).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(QpSolve, BatchEqualsIndependentSolvesBitwise) {
  std::mt19937_64 rng(79);
  std::vector<QpProblem> problems;
  for (int i = 0; i < 24; ++i) {
    problems.push_back(to_problem(tt::planted_qp(rng, 7, 20, i % 3)));
  }
  const auto batch = solve_batch(problems);
  const auto serial = solve_batch_serial(problems);
  ASSERT_EQ(batch.size(), problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const QpSolution single = solve(problems[i]);
    for (const auto* other : {&batch[i], &serial[i]}) {
      EXPECT_EQ(other->iterations, single.iterations);
      EXPECT_EQ(std::memcmp(other->z.data(), single.z.data(), sizeof(double) * single.z.size()), 0);
      EXPECT_EQ(std::memcmp(other->lambda.data(), single.lambda.data(),
                            sizeof(double) * single.lambda.size()), 0);
    }
  }
}

TEST(QpSolve, DeterministicForIdenticalInput) {
  std::mt19937_64 rng(80);
  const QpProblem p = to_problem(tt::planted_qp(rng, 9, 30, 3));
  const QpSolution a = solve(p);
  const QpSolution b = solve(p);
  EXPECT_EQ(std::memcmp(a.z.data(), b.z.data(), sizeof(double) * a.z.size()), 0);
}

TEST(CheckKkt, HandBuiltOptimum) {
  const QpProblem p = box1d(3.0);
  Vector z = Vector::Constant(1, -1.0);
  Vector lam(2);
  lam << 0.0, 2.0;
  EXPECT_LE(check_kkt(p, z, lam).max(), 1e-12);
}

TEST(CheckKkt, PerturbedOptimumHasStationarityResidual) {
  const QpProblem p = box1d(3.0);
  Vector z = Vector::Constant(1, -1.0 + 1e-3);
  Vector lam(2);
  lam << 0.0, 2.0;
  // |z + 3 - lambda| = 1e-3
  EXPECT_GE(check_kkt(p, z, lam).stationarity, 1e-4);
}

TEST(CheckKkt, RandomPointIsNotOptimal) {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 20; ++trial) {
    const QpProblem p = to_problem(tt::planted_qp(rng, 6, 12, 2));
    const Vector z = tt::uniform_vec(rng, 6, -3.0, 3.0);
    const Vector lam = tt::uniform_vec(rng, 12, 0.0, 2.0);
    EXPECT_GT(check_kkt(p, z, lam).max(), 1e-8);
  }
}

TEST(QpBackward, InactiveConstraintsGiveLinearSolve) {
  std::mt19937_64 rng(82);
  const tt::RandomQp r = tt::planted_qp(rng, 6, 10, 0);
  const QpProblem p = to_problem(r);
  const QpSolution s = solve(p);
  ASSERT_TRUE(s.solved());
  const Vector g = tt::uniform_vec(rng, 6);
  const QpGradient grad = backward(p, s, g);
  EXPECT_LE((grad.grad_q + r.P.llt().solve(g)).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LE((grad.grad_P - grad.grad_P.transpose()).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(QpBackward, StrictlyActiveConstraintPinsSolution) {
  const QpProblem p = box1d(3.0);
  const QpSolution s = solve(p);
  const QpGradient grad = backward(p, s, Vector::Ones(1));
  EXPECT_NEAR(grad.grad_q[0], 0.0, 1e-12);
}

TEST(QpBackward, RejectsUnsolved) {
  Matrix G(2, 1);
  G << 1.0, -1.0;
  QpProblem p(Matrix::Identity(1, 1), Vector::Zero(1), G, Vector::Constant(2, -1.0));
  EXPECT_THROW(backward(p, solve(p), Vector::Ones(1)), std::invalid_argument);
}

TEST(QpBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(83);
  int checked = 0;
  double worst = 0.0;
  while (checked < 50) {
    const Index n = std::uniform_int_distribution<int>(2, 8)(rng);
    const Index m = std::uniform_int_distribution<int>(2, 20)(rng);
    const tt::RandomQp r = tt::planted_qp(rng, n, m, std::min<Index>(n - 1, checked % 4));
    const QpProblem p = to_problem(r);
    const QpSolution s = solve(p);
    ASSERT_TRUE(s.solved());
    if (strict_complementarity_margin(p, s) < 1e-3) {
      continue;  // weakly active: the solution map is not differentiable here
    }
    const Vector c = tt::uniform_vec(rng, n);
    const QpGradient grad = backward(p, s, c);
    auto loss_q = [&](const Matrix& q) {
      return c.dot(solve(QpProblem(r.P, q, r.G, r.h)).z);
    };
    auto loss_P = [&](const Matrix& P) {
      // symmetric perturbation: the problem symmetrizes P, so dL/dP_ij is shared
      return c.dot(solve(QpProblem(P, r.q, r.G, r.h)).z);
    };
    worst = std::max(worst, tt::worst_fd_error(loss_q, r.q, grad.grad_q));
    worst = std::max(worst, tt::worst_fd_error(loss_P, r.P, grad.grad_P));
    ++checked;
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(QpBackward, DependentActiveRowsAreSingular) {
  // z <= 0 written twice, both active at the optimum
  Matrix G(2, 1);
  G << 1.0, 1.0;
  QpProblem p(Matrix::Identity(1, 1), Vector::Constant(1, -1.0), G, Vector::Zero(2));
  const QpSolution s = solve(p);
  ASSERT_TRUE(s.solved());
  EXPECT_NEAR(s.z[0], 0.0, 1e-7);
  EXPECT_THROW(backward(p, s, Vector::Ones(1)), SingularKkt);
  const QpGradient g = backward_with_retry(p, s, Vector::Ones(1));
  EXPECT_NEAR(g.grad_q[0], 0.0, 1e-6);
}
