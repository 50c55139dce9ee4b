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
#include "trajlayer/autodiff.hpp"

using trajlayer::Matrix;
using trajlayer::ShapeError;
using namespace trajlayer::ad;
namespace tt = trajlayer::testing;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

// sum of all entries via an explicit ones-row product
NodeId sum_all(Tape& t, NodeId x) {
  const Matrix& v = t.value(x);
  NodeId ones_l = t.constant(Matrix::Ones(1, v.rows()));
  NodeId ones_r = t.constant(Matrix::Ones(v.cols(), 1));
  return t.matmul(t.matmul(ones_l, x), ones_r);
}

}  // namespace

TEST(Tape, TanhOfZeroIsZero) {
  Tape t;
  NodeId x = t.constant(Matrix::Zero(2, 3));
  EXPECT_EQ(t.value(t.tanh(x)), Matrix::Zero(2, 3));
}

TEST(Tape, IdentityMatmul) {
  std::mt19937_64 rng(1);
  Tape t;
  Matrix a = tt::uniform(rng, 3, 2);
  NodeId y = t.matmul(t.constant(Matrix::Identity(3, 3)), t.constant(a));
  EXPECT_EQ(t.value(y), a);
}

TEST(Tape, SumOfSquaresPythagorean) {
  Tape t;
  NodeId y = t.sum_of_squares(t.constant(row({3.0, 4.0})));
  EXPECT_DOUBLE_EQ(t.value(y)(0, 0), 25.0);
}

TEST(Tape, ShapeMismatchNamesBothShapes) {
  Tape t;
  NodeId a = t.constant(Matrix::Zero(2, 3));
  NodeId b = t.constant(Matrix::Zero(3, 2));
  try {
    t.add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3x2"), std::string::npos);
  }
  EXPECT_THROW(t.matmul(a, a), ShapeError);
  EXPECT_THROW(t.slice(a, 1, 2), ShapeError);
  EXPECT_THROW(t.concat({a, b}), ShapeError);
}

TEST(Tape, UnsupportedKindRejected) {
  Tape t;
  NodeId a = t.constant(Matrix::Zero(1, 1));
  EXPECT_THROW(t.record(OpKind::Custom, {a}), std::invalid_argument);
  EXPECT_THROW(t.record(OpKind::Parameter, {}), std::invalid_argument);
  EXPECT_THROW(t.record(static_cast<OpKind>(99), {a}), std::invalid_argument);
}

TEST(Tape, BackwardSumOfSquares) {
  Tape t;
  NodeId x = t.parameter(row({1.0, -2.0}));
  GradMap g = t.backward(t.sum_of_squares(x));
  EXPECT_EQ(g[x], row({2.0, -4.0}));
}

TEST(Tape, BackwardSigmoidAtZero) {
  Tape t;
  NodeId x = t.parameter(Matrix::Zero(1, 1));
  GradMap g = t.backward(t.sigmoid(x));
  EXPECT_DOUBLE_EQ(g[x](0, 0), 0.25);
}

TEST(Tape, NonScalarLossRejected) {
  Tape t;
  NodeId x = t.parameter(row({1.0, 2.0}));
  EXPECT_THROW(t.backward(t.tanh(x)), ShapeError);
}

TEST(Tape, UnreachedParameterGetsZeroGradient) {
  Tape t;
  NodeId x = t.parameter(row({1.0}));
  NodeId unused = t.parameter(Matrix::Ones(2, 2));
  GradMap g = t.backward(t.sum_of_squares(x));
  EXPECT_EQ(g[unused], Matrix::Zero(2, 2));
  EXPECT_EQ(g.size(), 2u);
}

TEST(Tape, CustomDoublingNode) {
  Tape t;
  NodeId x = t.parameter(row({1.0, 1.0}));
  NodeId y = t.register_custom({x}, 2.0 * t.value(x),
                               [](const Matrix& g) { return std::vector<Matrix>{2.0 * g}; });
  GradMap g = t.backward(sum_all(t, y));
  EXPECT_EQ(g[x], row({2.0, 2.0}));
}

TEST(Tape, CustomIdentityOnScalar) {
  Tape t;
  NodeId x = t.parameter(Matrix::Constant(1, 1, 0.3));
  NodeId y = t.register_custom({x}, t.value(x),
                               [](const Matrix& g) { return std::vector<Matrix>{g}; });
  EXPECT_DOUBLE_EQ(t.backward(y)[x](0, 0), 1.0);
}

TEST(Tape, CustomAdjointShapeMismatchAtBackward) {
  Tape t;
  NodeId x = t.parameter(row({1.0, 1.0}));
  NodeId y = t.register_custom({x}, t.value(x), [](const Matrix&) {
    return std::vector<Matrix>{Matrix::Zero(3, 1)};
  });
  EXPECT_THROW(t.backward(sum_all(t, y)), ShapeError);
}

TEST(Tape, FanOutIsLinear) {
  std::mt19937_64 rng(3);
  Matrix a = tt::uniform(rng, 3, 2);
  Tape t1;
  NodeId x1 = t1.parameter(a);
  GradMap g1 = t1.backward(t1.sum_of_squares(t1.tanh(x1)));
  Tape t2;
  NodeId x2 = t2.parameter(a);
  NodeId tx = t2.tanh(x2);
  GradMap g2 = t2.backward(t2.sum_of_squares(t2.add(tx, tx)));
  // d/da ||2 tanh a||^2 = 4 d/da ||tanh a||^2; the a+a fan-out path doubles twice
  Tape t3;
  NodeId x3 = t3.parameter(a);
  NodeId s = t3.add(x3, x3);
  GradMap g3 = t3.backward(sum_all(t3, s));
  EXPECT_TRUE(g3[x3].isApprox(2.0 * Matrix::Ones(3, 2)));
  EXPECT_TRUE(g2[x2].isApprox(4.0 * g1[x1]));
}

TEST(Tape, BackwardIsBitwiseDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape t;
    NodeId w = t.parameter(tt::uniform(rng, 4, 3));
    NodeId x = t.constant(tt::uniform(rng, 3, 5));
    NodeId h = t.tanh(t.matmul(w, x));
    NodeId g = t.sigmoid(t.matmul(w, x));
    NodeId y = t.concat({t.mul(h, g), t.slice(h, 1, 2)});
    return t.backward(t.scale(t.sum_of_squares(y), 0.5))[w];
  };
  const Matrix a = run();
  const Matrix b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

// Reverse-mode vs central differences for every built-in kind.
class BuiltinGradient : public ::testing::TestWithParam<OpKind> {};

TEST_P(BuiltinGradient, MatchesFiniteDifferences) {
  const OpKind kind = GetParam();
  std::mt19937_64 rng(static_cast<unsigned>(kind) + 100);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = tt::uniform(rng, 3, 2, -2.0, 2.0);
    const Matrix b = tt::uniform(rng, 3, 2, -2.0, 2.0);
    const Matrix bt = tt::uniform(rng, 2, 4, -2.0, 2.0);
    const Matrix weights = tt::uniform(rng, 6, 4, -1.0, 1.0);

    // Scalar loss = sum(weights .* op(a, ...)), weights cropped to output shape.
    auto build = [&](Tape& t, NodeId x) -> NodeId {
      NodeId y;
      switch (kind) {
        case OpKind::MatMul: y = t.matmul(x, t.constant(bt)); break;
        case OpKind::Add: y = t.add(x, t.constant(b)); break;
        case OpKind::Subtract: y = t.sub(t.constant(b), x); break;
        case OpKind::Mul: y = t.mul(x, t.constant(b)); break;
        case OpKind::Tanh: y = t.tanh(x); break;
        case OpKind::Sigmoid: y = t.sigmoid(x); break;
        case OpKind::Concat: y = t.concat({x, t.constant(b)}); break;
        case OpKind::Slice: y = t.slice(x, 1, 2); break;
        case OpKind::Scale: y = t.scale(x, -1.7); break;
        case OpKind::SumOfSquares: y = t.sum_of_squares(x); break;
        default: throw std::logic_error("untested kind");
      }
      const Matrix& v = t.value(y);
      NodeId wnode = t.constant(weights.topLeftCorner(v.rows(), v.cols()));
      return sum_all(t, t.mul(y, wnode));
    };

    Tape t;
    NodeId x = t.parameter(a);
    const Matrix analytic = t.backward(build(t, x))[x];
    auto f = [&](const Matrix& xv) {
      Tape tf;
      return tf.value(build(tf, tf.parameter(xv)))(0, 0);
    };
    worst = std::max(worst, tt::worst_fd_error(f, a, analytic));
  }
  EXPECT_LE(worst, 1e-3) << op_name(kind);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, BuiltinGradient,
                         ::testing::Values(OpKind::MatMul, OpKind::Add, OpKind::Subtract,
                                           OpKind::Mul, OpKind::Tanh, OpKind::Sigmoid,
                                           OpKind::Concat, OpKind::Slice, OpKind::Scale,
                                           OpKind::SumOfSquares),
                         [](const auto& info) { return std::string(op_name(info.param)); });
