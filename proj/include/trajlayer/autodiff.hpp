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

#include <cstddef>
#include <functional>
#include <deque>
#include <map>
#include <vector>

#include "trajlayer/common.hpp"

/**
 * @file
 * @brief Reverse-mode automatic differentiation over dense 2-D arrays.
 *
 * A Tape records operations in evaluation order. Every node stores its forward
 * value; backward() sweeps the tape in reverse and accumulates adjoints. There is
 * no broadcasting: shape adaptation is always explicit (concatenate, slice, or a
 * matrix product with a ones row).
 */

namespace trajlayer::ad {

using NodeId = std::size_t;

enum class OpKind {
  Constant,
  Parameter,
  MatMul,
  Add,
  Subtract,
  Mul,  // elementwise
  Tanh,
  Sigmoid,
  Concat,  // stacks inputs vertically (row-wise)
  Slice,   // contiguous row range
  Scale,
  SumOfSquares,
  Custom,
};

const char* op_name(OpKind kind);

/// Constants consumed by some op kinds.
struct Payload {
  double scalar = 0.0;  // Scale
  Index begin = 0;      // Slice
  Index count = 0;      // Slice
};

/// Maps an output adjoint to one adjoint per input, each shaped like that input.
using Pullback = std::function<std::vector<Matrix>(const Matrix& out_adjoint)>;

/// Gradients of a scalar loss, one entry per parameter node.
class GradMap {
 public:
  const Matrix& operator[](NodeId id) const;
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  friend class Tape;
  std::map<NodeId, Matrix> grads_;
};

class Tape {
 public:
  NodeId constant(Matrix value);
  NodeId parameter(Matrix value);

  /// Appends a built-in op. Throws ShapeError on incompatible inputs and
  /// std::invalid_argument for leaf/custom kinds or a wrong input count.
  NodeId record(OpKind kind, const std::vector<NodeId>& inputs, const Payload& payload = {});

  /// Appends a node whose adjoint rule is supplied by the caller.
  NodeId register_custom(const std::vector<NodeId>& inputs, Matrix value, Pullback pullback);

  NodeId matmul(NodeId a, NodeId b) { return record(OpKind::MatMul, {a, b}); }
  NodeId add(NodeId a, NodeId b) { return record(OpKind::Add, {a, b}); }
  NodeId sub(NodeId a, NodeId b) { return record(OpKind::Subtract, {a, b}); }
  NodeId mul(NodeId a, NodeId b) { return record(OpKind::Mul, {a, b}); }
  NodeId tanh(NodeId a) { return record(OpKind::Tanh, {a}); }
  NodeId sigmoid(NodeId a) { return record(OpKind::Sigmoid, {a}); }
  NodeId concat(const std::vector<NodeId>& parts) { return record(OpKind::Concat, parts); }
  NodeId slice(NodeId a, Index begin, Index count) {
    return record(OpKind::Slice, {a}, Payload{0.0, begin, count});
  }
  NodeId scale(NodeId a, double s) { return record(OpKind::Scale, {a}, Payload{s, 0, 0}); }
  NodeId sum_of_squares(NodeId a) { return record(OpKind::SumOfSquares, {a}); }

  const Matrix& value(NodeId id) const;
  OpKind kind(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a 1x1 loss node. Parameters the loss does not reach get
  /// zero gradients.
  GradMap backward(NodeId loss) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Payload payload;
    Matrix value;
    Pullback pullback;  // Custom only
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  std::deque<Node> nodes_;  // stable references across push
};

}  // namespace trajlayer::ad
