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

#include "trajlayer/autodiff.hpp"

#include <cmath>
#include <optional>
#include <string>

namespace trajlayer::ad {

namespace {

void require_same_shape(OpKind kind, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

void require_arity(OpKind kind, std::size_t got, std::size_t want) {
  if (got != want) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                std::to_string(want) + " inputs, got " + std::to_string(got));
  }
}

Matrix sigmoid_of(const Matrix& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Subtract: return "subtract";
    case OpKind::Mul: return "mul";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Scale: return "scale";
    case OpKind::SumOfSquares: return "sum_of_squares";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

const Matrix& GradMap::operator[](NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    throw std::out_of_range("GradMap: node " + std::to_string(id) + " is not a parameter");
  }
  return it->second;
}

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw std::out_of_range("Tape: unknown node " + std::to_string(id));
  }
  return nodes_[id];
}

const Matrix& Tape::value(NodeId id) const { return node(id).value; }

OpKind Tape::kind(NodeId id) const { return node(id).kind; }

NodeId Tape::constant(Matrix value) {
  return push(Node{OpKind::Constant, {}, {}, std::move(value), {}});
}

NodeId Tape::parameter(Matrix value) {
  return push(Node{OpKind::Parameter, {}, {}, std::move(value), {}});
}

NodeId Tape::record(OpKind kind, const std::vector<NodeId>& inputs, const Payload& payload) {
  for (NodeId id : inputs) {
    node(id);  // bounds check
  }
  Matrix out;
  switch (kind) {
    case OpKind::MatMul: {
      require_arity(kind, inputs.size(), 2);
      const Matrix& a = value(inputs[0]);
      const Matrix& b = value(inputs[1]);
      if (a.cols() != b.rows()) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
      }
      out = a * b;
      break;
    }
    case OpKind::Add:
    case OpKind::Subtract:
    case OpKind::Mul: {
      require_arity(kind, inputs.size(), 2);
      const Matrix& a = value(inputs[0]);
      const Matrix& b = value(inputs[1]);
      require_same_shape(kind, a, b);
      if (kind == OpKind::Add) {
        out = a + b;
      } else if (kind == OpKind::Subtract) {
        out = a - b;
      } else {
        out = a.cwiseProduct(b);
      }
      break;
    }
    case OpKind::Tanh:
      require_arity(kind, inputs.size(), 1);
      out = value(inputs[0]).array().tanh().matrix();
      break;
    case OpKind::Sigmoid:
      require_arity(kind, inputs.size(), 1);
      out = sigmoid_of(value(inputs[0]));
      break;
    case OpKind::Concat: {
      if (inputs.empty()) {
        throw std::invalid_argument("concat: needs at least one input");
      }
      const Index cols = value(inputs[0]).cols();
      Index rows = 0;
      for (NodeId id : inputs) {
        if (value(id).cols() != cols) {
          throw ShapeError("concat: shape mismatch " + shape_str(value(inputs[0])) + " vs " +
                           shape_str(value(id)));
        }
        rows += value(id).rows();
      }
      out.resize(rows, cols);
      Index row = 0;
      for (NodeId id : inputs) {
        out.middleRows(row, value(id).rows()) = value(id);
        row += value(id).rows();
      }
      break;
    }
    case OpKind::Slice: {
      require_arity(kind, inputs.size(), 1);
      const Matrix& a = value(inputs[0]);
      if (payload.begin < 0 || payload.count < 0 || payload.begin + payload.count > a.rows()) {
        throw ShapeError("slice: rows [" + std::to_string(payload.begin) + ", " +
                         std::to_string(payload.begin + payload.count) + ") out of " +
                         shape_str(a));
      }
      out = a.middleRows(payload.begin, payload.count);
      break;
    }
    case OpKind::Scale:
      require_arity(kind, inputs.size(), 1);
      out = payload.scalar * value(inputs[0]);
      break;
    case OpKind::SumOfSquares:
      require_arity(kind, inputs.size(), 1);
      out = Matrix::Constant(1, 1, value(inputs[0]).squaredNorm());
      break;
    case OpKind::Constant:
    case OpKind::Parameter:
    case OpKind::Custom:
    default:
      throw std::invalid_argument(std::string("record: unsupported op kind '") + op_name(kind) +
                                  "'");
  }
  return push(Node{kind, inputs, payload, std::move(out), {}});
}

NodeId Tape::register_custom(const std::vector<NodeId>& inputs, Matrix value, Pullback pullback) {
  for (NodeId id : inputs) {
    node(id);
  }
  if (!pullback) {
    throw std::invalid_argument("register_custom: empty pullback");
  }
  return push(Node{OpKind::Custom, inputs, {}, std::move(value), std::move(pullback)});
}

GradMap Tape::backward(NodeId loss) const {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " + shape_str(root.value));
  }

  std::vector<std::optional<Matrix>> adj(nodes_.size());
  adj[loss] = Matrix::Ones(1, 1);

  auto accumulate = [&](NodeId id, Matrix g) {
    if (adj[id]) {
      *adj[id] += g;
    } else {
      adj[id] = std::move(g);
    }
  };

  for (NodeId k = loss + 1; k-- > 0;) {
    if (!adj[k]) {
      continue;
    }
    const Node& n = nodes_[k];
    const Matrix& g = *adj[k];
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Parameter:
        break;
      case OpKind::MatMul: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        const Matrix& b = nodes_[n.inputs[1]].value;
        accumulate(n.inputs[0], g * b.transpose());
        accumulate(n.inputs[1], a.transpose() * g);
        break;
      }
      case OpKind::Add:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], g);
        break;
      case OpKind::Subtract:
        accumulate(n.inputs[0], g);
        accumulate(n.inputs[1], -g);
        break;
      case OpKind::Mul:
        accumulate(n.inputs[0], g.cwiseProduct(nodes_[n.inputs[1]].value));
        accumulate(n.inputs[1], g.cwiseProduct(nodes_[n.inputs[0]].value));
        break;
      case OpKind::Tanh:
        accumulate(n.inputs[0],
                   g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case OpKind::Sigmoid:
        accumulate(n.inputs[0],
                   g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
        break;
      case OpKind::Concat: {
        Index row = 0;
        for (NodeId id : n.inputs) {
          const Index rows = nodes_[id].value.rows();
          accumulate(id, g.middleRows(row, rows));
          row += rows;
        }
        break;
      }
      case OpKind::Slice: {
        const Matrix& a = nodes_[n.inputs[0]].value;
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleRows(n.payload.begin, n.payload.count) = g;
        accumulate(n.inputs[0], std::move(full));
        break;
      }
      case OpKind::Scale:
        accumulate(n.inputs[0], n.payload.scalar * g);
        break;
      case OpKind::SumOfSquares:
        accumulate(n.inputs[0], 2.0 * g(0, 0) * nodes_[n.inputs[0]].value);
        break;
      case OpKind::Custom: {
        std::vector<Matrix> in_adj = n.pullback(g);
        if (in_adj.size() != n.inputs.size()) {
          throw ShapeError("custom node " + std::to_string(k) + ": pullback returned " +
                           std::to_string(in_adj.size()) + " adjoints for " +
                           std::to_string(n.inputs.size()) + " inputs");
        }
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
          const Matrix& want = nodes_[n.inputs[i]].value;
          if (in_adj[i].rows() != want.rows() || in_adj[i].cols() != want.cols()) {
            throw ShapeError("custom node " + std::to_string(k) + ": adjoint shape mismatch " +
                             shape_str(in_adj[i]) + " vs " + shape_str(want));
          }
          accumulate(n.inputs[i], std::move(in_adj[i]));
        }
        break;
      }
    }
  }

  GradMap out;
  for (NodeId k = 0; k < nodes_.size(); ++k) {
    if (nodes_[k].kind != OpKind::Parameter) {
      continue;
    }
    if (adj[k]) {
      out.grads_.emplace(k, std::move(*adj[k]));
    } else {
      out.grads_.emplace(k, Matrix::Zero(nodes_[k].value.rows(), nodes_[k].value.cols()));
    }
  }
  return out;
}

}  // namespace trajlayer::ad
