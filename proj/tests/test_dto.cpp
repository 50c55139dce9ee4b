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

#include "dto_support.hpp"
#include "trajlayer/dto.hpp"

using namespace trajlayer;
using namespace trajlayer::dto;
namespace tt = trajlayer::testing;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

DtoParams scalar_params(int T_p, double v_bound, double a_bound, double alpha) {
  DtoParams p = make_params(Matrix::Identity(1, 1), T_p, std::max(T_p, 2), 1, alpha,
                            vec({-v_bound}), vec({v_bound}), vec({-a_bound}), vec({a_bound}));
  return p;
}

}  // namespace

TEST(SelectionBlock, IdentityStaysIdentity) {
  EXPECT_EQ(build_selection_block(Matrix::Identity(2, 2), 2), Matrix::Identity(4, 4));
}

TEST(SelectionBlock, ExcludesDiscreteDimension) {
  const Matrix S = selection_matrix(3, {0, 1});
  const Matrix blk = build_selection_block(S, 2);
  ASSERT_EQ(blk.rows(), 4);
  ASSERT_EQ(blk.cols(), 6);
  const Vector y = vec({1.0, 2.0, 9.0, 3.0, 4.0, 8.0});
  EXPECT_EQ(blk * y, vec({1.0, 2.0, 3.0, 4.0}));
  EXPECT_EQ(blk.block(0, 0, 2, 3), S);
  EXPECT_EQ(blk.block(2, 3, 2, 3), S);
  EXPECT_TRUE(blk.block(0, 3, 2, 3).isZero(0.0));
}

TEST(SelectionBlock, ActsPerStep) {
  std::mt19937_64 rng(3);
  const Matrix S = selection_matrix(4, {3, 1});
  const Vector y = tt::uniform_vec(rng, 12);
  const Vector v = build_selection_block(S, 3) * y;
  for (Index k = 0; k < 3; ++k) {
    EXPECT_EQ(v.segment(2 * k, 2), S * y.segment(4 * k, 4));
  }
}

TEST(DiffMatrix, BandStructure) {
  EXPECT_EQ(build_diff_matrix(3, 1, 1.0), mat({{-1, 1, 0}, {0, -1, 1}}));
}

TEST(DiffMatrix, AnnihilatesConstants) {
  const Matrix A = build_diff_matrix(5, 2, 0.1);
  Vector v(10);
  for (Index k = 0; k < 5; ++k) v.segment(2 * k, 2) = vec({0.3, -0.7});
  EXPECT_LE((A * v).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(DiffMatrix, HandFiniteDifferences) {
  const Vector a = build_diff_matrix(3, 1, 0.5) * vec({0.0, 0.5, 1.0});
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
}

TEST(IntegrationMatrix, CumulativeLowerTriangle) {
  EXPECT_EQ(build_integration_matrix(3, 1, 1.0), mat({{1, 0, 0}, {1, 1, 0}}));
}

TEST(IntegrationMatrix, HandIntegration) {
  const Vector p = build_integration_matrix(3, 1, 0.1) * vec({1.0, 2.0, 5.0});
  EXPECT_NEAR(p[0], 0.1, 1e-15);
  EXPECT_NEAR(p[1], 0.3, 1e-15);
}

TEST(IntegrationMatrix, MultiDimensionalBlocks) {
  const Matrix A = build_integration_matrix(3, 2, 1.0);
  ASSERT_EQ(A.rows(), 4);
  ASSERT_EQ(A.cols(), 6);
  EXPECT_EQ(A.block(2, 0, 2, 2), Matrix::Identity(2, 2));
  EXPECT_EQ(A.block(2, 2, 2, 2), Matrix::Identity(2, 2));
  EXPECT_TRUE(A.rightCols(2).isZero(0.0));
}

TEST(DtoParams, ValidateRejectsBadConfigurations) {
  DtoParams p = tt::toy_params(6, 1.0);
  EXPECT_NO_THROW(p.validate());
  DtoParams upper = p;
  upper.L(0, 1) = 0.5;
  EXPECT_THROW(upper.validate(), ConfigError);
  DtoParams eps = p;
  eps.epsilon = 0.0;
  EXPECT_THROW(eps.validate(), ConfigError);
  DtoParams vb = p;
  vb.v_min[0] = 2.0;
  EXPECT_THROW(vb.validate(), ConfigError);
  DtoParams horizons = p;
  horizons.T_a = 7;
  EXPECT_THROW(horizons.validate(), ConfigError);
  DtoParams sel = p;
  sel.S = Matrix::Ones(2, 3);
  EXPECT_THROW(sel.validate(), ConfigError);
}

TEST(AssembleQp, RowCountsTrainAndDeploy) {
  const DtoParams p = scalar_params(2, 1.0, 0.1, 0.0);
  DtoLayer layer(p);
  const qp::QpProblem train = layer.assemble_qp(Vector::Zero(2), Vector::Zero(1), Mode::train());
  // 2 T_p D_v velocity rows + 2 (T_p - 1) D_v acceleration rows
  EXPECT_EQ(train.num_constraints(), 6);
  const qp::QpProblem deploy =
      layer.assemble_qp(Vector::Zero(2), Vector::Zero(1), Mode::deploy(Vector::Zero(1)));
  EXPECT_EQ(deploy.num_constraints(), train.num_constraints() + 2);
  Vector h(6);
  h << 1, 1, 1, 1, 0.1, 0.1;
  EXPECT_EQ(train.h(), h);
}

TEST(AssembleQp, InfeasibleStartRejected) {
  DtoLayer layer(tt::toy_params(4, 1.0));
  EXPECT_THROW(layer.assemble_qp(Vector::Zero(12), vec({1.2, 0.5}), Mode::train()),
               InfeasibleStart);
  EXPECT_THROW(layer.assemble_qp(Vector::Zero(11), vec({0.5, 0.5}), Mode::train()), ShapeError);
  // exactly on the boundary is allowed
  EXPECT_NO_THROW(layer.assemble_qp(Vector::Zero(12), vec({1.0, 0.0}), Mode::train()));
  EXPECT_THROW(layer.assemble_qp(Vector::Zero(12), vec({1.0 + 1e-6, 0.5}), Mode::train()),
               InfeasibleStart);
}

TEST(AssembleQp, RoundOffStartStaysFeasible) {
  DtoLayer layer(tt::toy_params(4, 1.0));
  const Vector p = vec({1.0 + 1e-12, -1e-12});
  const qp::QpProblem prob = layer.assemble_qp(Vector::Constant(12, -1.0), p, Mode::train());
  EXPECT_LE((prob.G() * Vector::Zero(12) - prob.h()).maxCoeff(), 0.0);
  const qp::QpSolution s = qp::solve(prob);
  ASSERT_TRUE(s.solved());
  const TrajectoryDecomposition d = layer.decompose(s.z, p);
  EXPECT_LE(d.p_hat.maxCoeff(), 1.0 + 2e-12);
}

TEST(AssembleQp, FloorConstraintHolds) {
  // z floor at 0.0475 m on a 3-D velocity action
  std::mt19937_64 rng(4);
  DtoParams p = make_params(Matrix::Identity(3, 3), 6, 12, 3, 1.0, Vector::Constant(3, -1.0),
                            Vector::Constant(3, 1.0), Vector::Constant(3, -0.1),
                            Vector::Constant(3, 0.1));
  p.A_pos = mat({{0.0, 0.0, 1.0}});
  p.b_min = vec({0.0475});
  p.b_max = vec({1.0});
  p.displacement_scale = Vector::Constant(3, 0.02);
  for (int trial = 0; trial < 200; ++trial) {
    p.L = tt::random_lower(rng, p.n());
    DtoLayer layer(p);
    const Vector pos = vec({0.3, 0.2, std::uniform_real_distribution<double>(0.0475, 0.08)(rng)});
    const DtoForward f = layer.forward(tt::uniform_vec(rng, p.n(), 0.0, 5.0), pos, Mode::train());
    ASSERT_TRUE(f.solution.solved());
    const TrajectoryDecomposition d = layer.decompose(f.y, pos);
    for (Index k = 0; k + 1 < p.T_p; ++k) {
      EXPECT_GE(d.p_hat[3 * k + 2], 0.0475 - 1e-8);
    }
  }
}

TEST(Forward, InactiveBoundsGiveLinearMap) {
  std::mt19937_64 rng(5);
  DtoParams p = make_params(Matrix::Identity(2, 2), 4, 6, 2, 0.7, Vector::Constant(2, -1e6),
                            Vector::Constant(2, 1e6), Vector::Constant(2, -1e6),
                            Vector::Constant(2, 1e6));
  p.L = tt::random_lower(rng, p.n());
  DtoLayer layer(p);
  const Vector e = tt::uniform_vec(rng, p.n());
  const DtoForward f = layer.forward(e, Vector::Zero(2), Mode::train());
  ASSERT_TRUE(f.solution.solved());
  EXPECT_LE((f.y + layer.Q_bar().llt().solve(e)).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Forward, FirstVelocityProjectedOntoBox) {
  DtoParams p = scalar_params(2, 1.0, 10.0, 0.0);
  DtoLayer layer(p);
  const double qbar = 1.0 + p.epsilon;
  const Vector e = vec({-1.5 * qbar, -0.2 * qbar});
  const DtoForward f = layer.forward(e, Vector::Zero(1), Mode::train());
  ASSERT_TRUE(f.solution.solved());
  EXPECT_NEAR(f.y[0], 1.0, 1e-8);
  EXPECT_NEAR(f.y[1], 0.2, 1e-8);
  const qp::QpProblem prob = layer.assemble_qp(e, Vector::Zero(1), Mode::train());
  const auto oracle = tt::active_set_oracle(prob.P(), prob.q(), prob.G(), prob.h(), 2);
  ASSERT_TRUE(oracle.has_value());
  EXPECT_LE((oracle->z - f.y).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Forward, ZeroEmbeddingGivesZeroActions) {
  std::mt19937_64 rng(6);
  tt::DtoInstance inst = tt::random_instance(rng);
  DtoLayer layer(inst.params);
  const DtoForward f = layer.forward(Vector::Zero(inst.params.n()), inst.p, Mode::train());
  ASSERT_TRUE(f.solution.solved());
  EXPECT_LE(f.y.lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Forward, DeployModeBoundsFirstStepChange) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng);
    DtoLayer layer(inst.params);
    // keep clear of the walls: a fast first step toward a wall may not be stoppable
    inst.p = tt::uniform_vec(rng, 2, 0.15, 0.85);
    const Vector prev = tt::uniform_vec(rng, 2, -0.5, 0.5);
    const DtoForward f = layer.forward(inst.e, inst.p, Mode::deploy(prev));
    ASSERT_TRUE(f.solution.solved()) << qp::status_name(f.solution.status);
    const Vector v0 = inst.params.S * f.y.head(3);
    EXPECT_LE((v0 - prev).lpNorm<Eigen::Infinity>(), 0.1 + 1e-8);
    EXPECT_LE(tt::worst_violation(layer, f.y, inst.p), 1e-8);
  }
}

TEST(Forward, HardConstraintGuarantee) {
  std::mt19937_64 rng(8);
  double worst = -1.0;
  for (int trial = 0; trial < 1000; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng, 10.0);
    DtoLayer layer(inst.params);
    const DtoForward f = layer.forward(inst.e, inst.p, Mode::train());
    ASSERT_TRUE(f.solution.solved()) << "trial " << trial;
    worst = std::max(worst, tt::worst_violation(layer, f.y, inst.p));
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(Forward, FeasibleForEveryInBoundsStart) {
  // includes starts exactly on the position bounds
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng, 10.0);
    if (trial % 4 == 0) inst.p[trial % 8 == 0 ? 0 : 1] = (trial % 16 == 0) ? 0.0 : 1.0;
    DtoLayer layer(inst.params);
    // y = 0 is a feasible witness
    const qp::QpProblem prob = layer.assemble_qp(inst.e, inst.p, Mode::train());
    ASSERT_LE((prob.G() * Vector::Zero(inst.params.n()) - prob.h()).maxCoeff(), 0.0);
    ASSERT_TRUE(qp::solve(prob).solved()) << "trial " << trial;
  }
}

TEST(Forward, SmoothingIsMonotoneInAlpha) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng);
    double last = 1e300;
    for (double alpha : {0.0, 0.5, 1.0, 5.0}) {
      DtoParams p = inst.params;
      p.alpha = alpha;
      DtoLayer layer(p);
      const DtoForward f = layer.forward(inst.e, inst.p, Mode::train());
      ASSERT_TRUE(f.solution.solved());
      const double acc = layer.decompose(f.y, inst.p).a_hat.squaredNorm();
      EXPECT_LE(acc, last + 1e-9) << "alpha " << alpha;
      last = acc;
    }
  }
}

TEST(Forward, ExplicitAccelerationObjectiveMatchesFoldedForm) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng);
    DtoLayer layer(inst.params);
    const qp::QpProblem folded = layer.assemble_qp(inst.e, inst.p, Mode::train());
    const qp::QpProblem expanded(tt::explicit_objective_matrix(inst.params), inst.e, folded.G(),
                                 folded.h());
    const qp::QpSolution a = qp::solve(folded);
    const qp::QpSolution b = qp::solve(expanded);
    ASSERT_TRUE(a.solved() && b.solved());
    EXPECT_LE((a.z - b.z).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(LeastSquaresForm, IdentityQbar) {
  DtoParams p = scalar_params(3, 1.0, 1.0, 0.0);
  p.L = std::sqrt(1.0 - p.epsilon) * Matrix::Identity(3, 3);
  DtoLayer layer(p);
  const Vector e = vec({0.3, -1.0, 2.0});
  const LeastSquaresForm ls = layer.least_squares_form(e);
  EXPECT_LE((ls.L_bar - Matrix::Identity(3, 3)).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_LE((ls.e_bar + e).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(LeastSquaresForm, SameArgminAndReconstruction) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng);
    DtoLayer layer(inst.params);
    const LeastSquaresForm ls = layer.least_squares_form(inst.e);
    EXPECT_LE((ls.L_bar * ls.L_bar.transpose() - layer.Q_bar()).lpNorm<Eigen::Infinity>(), 1e-10);
    EXPECT_TRUE(ls.L_bar.diagonal().minCoeff() > 0.0);
    EXPECT_TRUE(ls.L_bar.isLowerTriangular(0.0));
    // 1/2 ||L_bar' y - e_bar||^2 = 1/2 y' L_bar L_bar' y - (L_bar e_bar)' y + const
    const qp::QpProblem base = layer.assemble_qp(inst.e, inst.p, Mode::train());
    const qp::QpProblem lsq(ls.L_bar * ls.L_bar.transpose(), -(ls.L_bar * ls.e_bar), base.G(),
                            base.h());
    const qp::QpSolution a = qp::solve(base);
    const qp::QpSolution b = qp::solve(lsq);
    ASSERT_TRUE(a.solved() && b.solved());
    EXPECT_LE((a.z - b.z).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(LeastSquaresForm, UnboundedOptimumIsInverseCholeskyMap) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    tt::DtoInstance inst = tt::random_instance(rng);
    DtoParams& p = inst.params;
    p.v_min.setConstant(-1e6);
    p.v_max.setConstant(1e6);
    p.a_min.setConstant(-1e6);
    p.a_max.setConstant(1e6);
    p.b_min.setConstant(-1e6);
    p.b_max.setConstant(1e6);
    DtoLayer layer(p);
    const DtoForward f = layer.forward(inst.e, inst.p, Mode::train());
    ASSERT_TRUE(f.solution.solved());
    const LeastSquaresForm ls = layer.least_squares_form(inst.e);
    const Vector linear = -ls.L_bar.transpose().triangularView<Eigen::Upper>().solve(
        ls.L_bar.triangularView<Eigen::Lower>().solve(inst.e));
    EXPECT_LE((f.y - linear).lpNorm<Eigen::Infinity>(), 1e-8);
  }
}

TEST(Decompose, ZeroActions) {
  DtoLayer layer(tt::toy_params(4, 1.0));
  const Vector p = vec({0.2, 0.7});
  const TrajectoryDecomposition d = layer.decompose(Vector::Zero(12), p);
  EXPECT_TRUE(d.v_hat.isZero(0.0));
  EXPECT_TRUE(d.a_hat.isZero(0.0));
  EXPECT_EQ(d.p_hat, d.p_t0);
  EXPECT_EQ(d.p_hat.head(2), p);
}

TEST(Decompose, ScalarWorkedExample) {
  DtoParams params = scalar_params(3, 10.0, 10.0, 0.0);
  params.delta_t = 0.1;
  DtoLayer layer(params);
  const TrajectoryDecomposition d = layer.decompose(vec({1.0, 2.0, 5.0}), vec({0.0}));
  EXPECT_NEAR(d.a_hat[0], 10.0, 1e-12);
  EXPECT_NEAR(d.a_hat[1], 30.0, 1e-12);
  EXPECT_NEAR(d.p_hat[0], 0.1, 1e-15);
  EXPECT_NEAR(d.p_hat[1], 0.3, 1e-15);
}

TEST(Decompose, AccelerationRoundTrip) {
  std::mt19937_64 rng(14);
  tt::DtoInstance inst = tt::random_instance(rng);
  DtoLayer layer(inst.params);
  const Vector y = tt::uniform_vec(rng, inst.params.n());
  const TrajectoryDecomposition d = layer.decompose(y, inst.p);
  EXPECT_EQ(d.a_hat, layer.diff_matrix() * (layer.selection_block() * y));
}

TEST(Backward, InactiveConstraintsLinearSolve) {
  std::mt19937_64 rng(15);
  DtoParams p = make_params(Matrix::Identity(2, 2), 3, 6, 2, 0.5, Vector::Constant(2, -1e6),
                            Vector::Constant(2, 1e6), Vector::Constant(2, -1e6),
                            Vector::Constant(2, 1e6));
  p.L = tt::random_lower(rng, p.n());
  DtoLayer layer(p);
  const Vector e = tt::uniform_vec(rng, p.n());
  const Vector c = tt::uniform_vec(rng, p.n());
  const DtoForward f = layer.forward(e, Vector::Zero(2), Mode::train());
  const DtoGradient g = layer.backward(e, Vector::Zero(2), Mode::train(), f.solution, c);
  EXPECT_LE((g.grad_e + layer.Q_bar().llt().solve(c)).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  int checked = 0;
  double worst_L = 0.0;
  double worst_e = 0.0;
  while (checked < 50) {
    tt::DtoInstance inst = tt::random_instance(rng);
    DtoLayer layer(inst.params);
    const DtoForward f = layer.forward(inst.e, inst.p, Mode::train());
    ASSERT_TRUE(f.solution.solved());
    const qp::QpProblem prob = layer.assemble_qp(inst.e, inst.p, Mode::train());
    if (qp::strict_complementarity_margin(prob, f.solution) < 1e-4) {
      continue;
    }
    const Vector c = tt::uniform_vec(rng, inst.params.n());
    // commensurate bounds make dependent active rows common; same retry as the batch path
    DtoGradient g;
    try {
      g = layer.backward(inst.e, inst.p, Mode::train(), f.solution, c);
    } catch (const qp::SingularKkt&) {
      qp::BackwardSettings reg;
      reg.dual_regularization = 1e-10;
      g = layer.backward(inst.e, inst.p, Mode::train(), f.solution, c, reg);
    }
    EXPECT_TRUE(g.grad_L.isLowerTriangular(0.0));
    auto loss_L = [&](const Matrix& L) {
      DtoParams p = inst.params;
      p.L = L.triangularView<Eigen::Lower>();
      return c.dot(DtoLayer(p).forward(inst.e, inst.p, Mode::train()).y);
    };
    auto loss_e = [&](const Matrix& e) {
      return c.dot(layer.forward(e, inst.p, Mode::train()).y);
    };
    // only lower-triangular entries of L are free parameters
    const Matrix fd_target = g.grad_L;
    double w = 0.0;
    Matrix L = inst.params.L;
    for (Index j = 0; j < L.cols(); ++j) {
      for (Index i = j; i < L.rows(); ++i) {
        Matrix Lp = L, Lm = L;
        Lp(i, j) += 1e-5;
        Lm(i, j) -= 1e-5;
        const double fp = loss_L(Lp);
        const double fm = loss_L(Lm);
        w = std::max(w, tt::rel_error_fd(fd_target(i, j), (fp - fm) / 2e-5,
                                         tt::fd_roundoff(std::max(std::abs(fp), std::abs(fm)), 1e-5)));
      }
    }
    worst_L = std::max(worst_L, w);
    worst_e = std::max(worst_e, tt::worst_fd_error(loss_e, inst.e, g.grad_e));
    ++checked;
  }
  EXPECT_LE(worst_L, 1e-3);
  EXPECT_LE(worst_e, 1e-3);
}

TEST(Batch, ParallelEqualsSerialBitwise) {
  std::mt19937_64 rng(17);
  DtoParams p = tt::toy_params(6, 1.0);
  p.L = tt::random_lower(rng, p.n());
  DtoLayer layer(p);
  const Matrix E = tt::uniform(rng, p.n(), 16, -3.0, 3.0);
  const Matrix P = tt::uniform(rng, 2, 16, 0.0, 1.0);
  const BatchForward a = forward_batch(layer, E, P, Mode::train());
  const BatchForward b = forward_batch_serial(layer, E, P, Mode::train());
  EXPECT_EQ(std::memcmp(a.Y.data(), b.Y.data(), sizeof(double) * a.Y.size()), 0);
  for (Index c = 0; c < 16; ++c) {
    const DtoForward single = layer.forward(E.col(c), P.col(c), Mode::train());
    EXPECT_EQ(std::memcmp(single.y.data(), a.Y.col(c).data(), sizeof(double) * single.y.size()),
              0);
  }
}

TEST(DtoNode, TapeGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(18);
  DtoParams p = tt::toy_params(3, 1.0);
  p.L = tt::random_lower(rng, p.n());
  const Index B = 4;
  const Matrix E0 = tt::uniform(rng, p.n(), B, -2.0, 2.0);
  const Matrix P = tt::uniform(rng, 2, B, 0.1, 0.9);
  const Matrix W = tt::uniform(rng, p.n(), B);

  auto loss_of = [&](const Matrix& E, const Matrix& L, Matrix* gE, Matrix* gL) {
    ad::Tape t;
    const ad::NodeId e = t.parameter(E);
    const ad::NodeId l = t.parameter(L);
    const DtoNode node = record_dto_node(t, p, e, l, P);
    const ad::NodeId weighted = t.mul(node.id, t.constant(W));
    const ad::NodeId loss = t.matmul(t.matmul(t.constant(Matrix::Ones(1, p.n())), weighted),
                                     t.constant(Matrix::Ones(B, 1)));
    if (gE != nullptr) {
      const ad::GradMap g = t.backward(loss);
      *gE = g[e];
      *gL = g[l];
    }
    return t.value(loss)(0, 0);
  };
  Matrix gE, gL;
  loss_of(E0, p.L, &gE, &gL);
  // margin check on every column so finite differences stay on one active set
  DtoLayer layer(p);
  for (Index b = 0; b < B; ++b) {
    const qp::QpProblem prob = layer.assemble_qp(E0.col(b), P.col(b), Mode::train());
    ASSERT_GT(qp::strict_complementarity_margin(prob, qp::solve(prob)), 1e-4);
  }
  const double err_e = tt::worst_fd_error(
      [&](const Matrix& E) { return loss_of(E, p.L, nullptr, nullptr); }, E0, gE);
  double err_L = 0.0;
  for (Index j = 0; j < p.n(); ++j) {
    for (Index i = j; i < p.n(); ++i) {
      Matrix Lp = p.L, Lm = p.L;
      Lp(i, j) += 1e-5;
      Lm(i, j) -= 1e-5;
      const double fp = loss_of(E0, Lp, nullptr, nullptr);
      const double fm = loss_of(E0, Lm, nullptr, nullptr);
      err_L = std::max(err_L, tt::rel_error_fd(gL(i, j), (fp - fm) / 2e-5,
                                               tt::fd_roundoff(std::max(std::abs(fp), std::abs(fm)), 1e-5)));
    }
  }
  EXPECT_LE(err_e, 1e-3);
  EXPECT_LE(err_L, 1e-3);
  EXPECT_TRUE(gL.isLowerTriangular(0.0));
}

TEST(DtoNode, UnsolvedColumnAborts) {
  DtoParams p = tt::toy_params(3, 1.0);
  ad::Tape t;
  const ad::NodeId e = t.parameter(Matrix::Zero(p.n(), 1));
  const ad::NodeId l = t.parameter(p.L);
  NodeOptions opts;
  opts.settings.max_iterations = 0;
  opts.settings.polish_threshold = 0.0;
  Matrix far = Matrix::Constant(2, 1, 0.5);
  EXPECT_THROW(record_dto_node(t, p, e, l, far, opts), NumericalError);
}
