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

#include "trajlayer/dto.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <optional>
#include <string>

namespace trajlayer::dto {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ConfigError("DtoParams: " + what);
  }
}

bool ordered(const Vector& lo, const Vector& hi, bool strict) {
  for (Index i = 0; i < lo.size(); ++i) {
    if (strict ? !(lo[i] < hi[i]) : !(lo[i] <= hi[i])) {
      return false;
    }
  }
  return true;
}

Vector tile(const Vector& v, Index times) {
  Vector out(v.size() * times);
  for (Index k = 0; k < times; ++k) {
    out.segment(k * v.size(), v.size()) = v;
  }
  return out;
}

Matrix block_diag(const Matrix& block, Index times) {
  Matrix out = Matrix::Zero(block.rows() * times, block.cols() * times);
  for (Index k = 0; k < times; ++k) {
    out.block(k * block.rows(), k * block.cols(), block.rows(), block.cols()) = block;
  }
  return out;
}

}  // namespace

void DtoParams::validate() const {
  require(T_p >= 1 && T_a >= 1 && T_a <= T_p && T_p <= T_s,
          "need 1 <= T_a <= T_p <= T_s, got T_a=" + std::to_string(T_a) +
              " T_p=" + std::to_string(T_p) + " T_s=" + std::to_string(T_s));
  require(D_v() >= 1 && D_y() >= D_v(), "S must be D_v x D_y with 1 <= D_v <= D_y");
  for (Index r = 0; r < S.rows(); ++r) {
    Index ones = 0;
    for (Index c = 0; c < S.cols(); ++c) {
      require(S(r, c) == 0.0 || S(r, c) == 1.0, "S entries must be 0 or 1");
      ones += S(r, c) == 1.0 ? 1 : 0;
    }
    require(ones == 1, "every row of S must be a standard basis row");
    for (Index r2 = 0; r2 < r; ++r2) {
      require(S.row(r) != S.row(r2), "rows of S must be distinct");
    }
  }
  const Index n = this->n();
  require(L.rows() == n && L.cols() == n, "L must be " + shape_str(n, n) + ", got " + shape_str(L));
  require(L.allFinite(), "L must be finite");
  for (Index c = 1; c < n; ++c) {
    require(L.col(c).head(c).isZero(0.0), "L must be lower triangular");
  }
  require(epsilon > 0.0, "epsilon must be positive");
  require(alpha >= 0.0, "alpha must be nonnegative");
  require(delta_t > 0.0, "delta_t must be positive");
  const Index dv = D_v();
  require(v_min.size() == dv && v_max.size() == dv && a_min.size() == dv && a_max.size() == dv,
          "velocity and acceleration bounds must have D_v entries");
  require(ordered(v_min, v_max, true), "need v_min < v_max");
  require(ordered(a_min, a_max, true), "need a_min < a_max");
  require(A_pos.rows() == 0 || A_pos.cols() == dv, "A_pos must have D_v columns");
  require(b_min.size() == A_pos.rows() && b_max.size() == A_pos.rows(),
          "b_min and b_max must match A_pos rows");
  require(ordered(b_min, b_max, false), "need b_min <= b_max");
  require(displacement_scale.size() == dv, "displacement_scale must have D_v entries");
}

DtoParams make_params(const Matrix& S, int T_p, int T_s, int T_a, double alpha,
                      const Vector& v_min, const Vector& v_max, const Vector& a_min,
                      const Vector& a_max, double delta_t) {
  DtoParams p;
  p.S = S;
  p.T_p = T_p;
  p.T_s = T_s;
  p.T_a = T_a;
  p.alpha = alpha;
  p.v_min = v_min;
  p.v_max = v_max;
  p.a_min = a_min;
  p.a_max = a_max;
  p.delta_t = delta_t;
  p.L = Matrix::Identity(p.n(), p.n());
  p.A_pos.resize(0, S.rows());
  p.b_min.resize(0);
  p.b_max.resize(0);
  p.displacement_scale = Vector::Ones(S.rows());
  return p;
}

Matrix selection_matrix(Index D_y, const std::vector<Index>& continuous_dims) {
  Matrix S = Matrix::Zero(static_cast<Index>(continuous_dims.size()), D_y);
  for (std::size_t r = 0; r < continuous_dims.size(); ++r) {
    const Index c = continuous_dims[r];
    if (c < 0 || c >= D_y) {
      throw ConfigError("selection_matrix: dimension " + std::to_string(c) + " out of range");
    }
    S(static_cast<Index>(r), c) = 1.0;
  }
  return S;
}

Matrix build_selection_block(const Matrix& S, int T_p) { return block_diag(S, T_p); }

Matrix build_diff_matrix(int T_p, Index D_v, double delta_t) {
  if (T_p < 1) {
    throw ConfigError("build_diff_matrix: T_p must be >= 1");
  }
  const Index rows = (T_p - 1) * D_v;
  Matrix A = Matrix::Zero(rows, T_p * D_v);
  for (Index k = 0; k + 1 < T_p; ++k) {
    for (Index d = 0; d < D_v; ++d) {
      A(k * D_v + d, k * D_v + d) = -1.0 / delta_t;
      A(k * D_v + d, (k + 1) * D_v + d) = 1.0 / delta_t;
    }
  }
  return A;
}

Matrix build_integration_matrix(int T_p, Index D_v, double delta_t) {
  if (T_p < 1) {
    throw ConfigError("build_integration_matrix: T_p must be >= 1");
  }
  // Row block i (position after step i+1) sums velocity blocks 0..i; the last
  // velocity block never reaches a predicted position.
  Matrix A = Matrix::Zero((T_p - 1) * D_v, T_p * D_v);
  for (Index i = 0; i + 1 < T_p; ++i) {
    for (Index j = 0; j <= i; ++j) {
      for (Index d = 0; d < D_v; ++d) {
        A(i * D_v + d, j * D_v + d) = delta_t;
      }
    }
  }
  return A;
}

DtoLayer::DtoLayer(DtoParams params) : params_(std::move(params)) {
  params_.validate();
  const DtoParams& p = params_;
  const Index dv = p.D_v();
  if (p.T_p == 1) {
    spdlog::warn("DTO layer with T_p = 1: no acceleration or position constraints, "
                 "smoothing term is empty");
  }
  s_blk_ = build_selection_block(p.S, p.T_p);
  a_diff_ = build_diff_matrix(p.T_p, dv, p.delta_t);
  a_inte_ = build_integration_matrix(p.T_p, dv, p.delta_t);
  const Matrix acc_map = a_diff_ * s_blk_;
  smoothing_ = p.alpha * (acc_map.transpose() * acc_map);

  const Index steps = p.T_p - 1;
  const Matrix apos_blk = block_diag(p.A_pos, steps);
  const Matrix pos_rows =
      apos_blk * a_inte_ * tile(p.displacement_scale, p.T_p).asDiagonal() * s_blk_;
  pos_map_ = apos_blk;

  const Index mp = pos_rows.rows();
  const Index mv = s_blk_.rows();
  const Index ma = acc_map.rows();
  train_G_.resize(2 * (mp + mv + ma), p.n());
  train_G_ << pos_rows, -pos_rows, s_blk_, -s_blk_, acc_map, -acc_map;
  refresh_q_bar();
}

void DtoLayer::set_L(const Matrix& L) {
  if (L.rows() != params_.n() || L.cols() != params_.n()) {
    throw ShapeError("set_L: expected " + shape_str(params_.n(), params_.n()) + ", got " +
                     shape_str(L));
  }
  params_.L = L.triangularView<Eigen::Lower>();
  refresh_q_bar();
}

void DtoLayer::refresh_q_bar() {
  const Matrix& L = params_.L;
  q_bar_ = L * L.transpose() + smoothing_;
  q_bar_.diagonal().array() += params_.epsilon;
}

Index DtoLayer::num_constraints(const Mode& mode) const {
  switch (mode.kind) {
    case Mode::Kind::Unconstrained: return 0;
    case Mode::Kind::Train: return train_G_.rows();
    case Mode::Kind::Deploy: return train_G_.rows() + 2 * params_.D_v();
  }
  return 0;
}

qp::QpProblem DtoLayer::assemble_qp(const Vector& e, const Vector& p, const Mode& mode) const {
  const DtoParams& pr = params_;
  const Index n = pr.n();
  const Index dv = pr.D_v();
  if (e.size() != n) {
    throw ShapeError("assemble_qp: e has " + std::to_string(e.size()) + " entries, expected " +
                     std::to_string(n));
  }
  if (mode.kind == Mode::Kind::Unconstrained) {
    return qp::QpProblem(q_bar_, e, Matrix(0, n), Vector(0));
  }
  if (p.size() != dv) {
    throw ShapeError("assemble_qp: position has " + std::to_string(p.size()) +
                     " entries, expected " + std::to_string(dv));
  }
  // Starts within kStartTolerance of a bound (integration round-off) are
  // accepted; that bound is widened to the start so y = 0 stays feasible.
  Vector b_lo = pr.b_min;
  Vector b_hi = pr.b_max;
  if (pr.A_pos.rows() > 0) {
    const Vector ap = pr.A_pos * p;
    for (Index i = 0; i < ap.size(); ++i) {
      if (ap[i] < pr.b_min[i] - kStartTolerance || ap[i] > pr.b_max[i] + kStartTolerance ||
          !std::isfinite(ap[i])) {
        throw InfeasibleStart("assemble_qp: A_pos p[" + std::to_string(i) + "] = " +
                              std::to_string(ap[i]) + " outside [" + std::to_string(pr.b_min[i]) +
                              ", " + std::to_string(pr.b_max[i]) + "]");
      }
      b_lo[i] = std::min(b_lo[i], ap[i]);
      b_hi[i] = std::max(b_hi[i], ap[i]);
    }
  }
  const Index steps = pr.T_p - 1;
  const Vector pos_offset = pos_map_ * tile(p, steps);
  const Vector bmax = tile(b_hi, steps) - pos_offset;
  const Vector bmin = tile(b_lo, steps) - pos_offset;
  const Vector acc_dt_max = tile(pr.a_max, steps);
  const Vector acc_dt_min = tile(pr.a_min, steps);

  const Index m_train = train_G_.rows();
  const bool deploy = mode.kind == Mode::Kind::Deploy;
  if (deploy && mode.prev_action.size() != dv) {
    throw ShapeError("assemble_qp: prev_action has " + std::to_string(mode.prev_action.size()) +
                     " entries, expected " + std::to_string(dv));
  }
  const Index m = m_train + (deploy ? 2 * dv : 0);
  Matrix G(m, n);
  Vector h(m);
  G.topRows(m_train) = train_G_;
  h << bmax, -bmin, tile(pr.v_max, pr.T_p), -tile(pr.v_min, pr.T_p), acc_dt_max, -acc_dt_min,
      Vector::Zero(deploy ? 2 * dv : 0);
  if (deploy) {
    const Matrix first = pr.S;  // velocity of the first step: S y_0
    G.block(m_train, 0, dv, n).setZero();
    G.block(m_train, 0, dv, pr.D_y()) = first;
    G.block(m_train + dv, 0, dv, n).setZero();
    G.block(m_train + dv, 0, dv, pr.D_y()) = -first;
    h.segment(m_train, dv) = mode.prev_action + pr.a_max * pr.delta_t;
    h.segment(m_train + dv, dv) = -(mode.prev_action + pr.a_min * pr.delta_t);
  }
  return qp::QpProblem(q_bar_, e, std::move(G), std::move(h));
}

DtoForward DtoLayer::forward(const Vector& e, const Vector& p, const Mode& mode,
                             const qp::QpSettings& settings) const {
  const qp::QpProblem problem = assemble_qp(e, p, mode);
  DtoForward out;
  out.solution = qp::solve(problem, settings);
  out.y = out.solution.z;
  return out;
}

DtoGradient DtoLayer::backward(const Vector& e, const Vector& p, const Mode& mode,
                               const qp::QpSolution& solution, const Vector& grad_out,
                               const qp::BackwardSettings& settings) const {
  const qp::QpProblem problem = assemble_qp(e, p, mode);
  const qp::QpGradient g = qp::backward(problem, solution, grad_out, settings);
  DtoGradient out;
  out.grad_e = g.grad_q;
  // Qbar = L L' + const, so dloss/dL = (G + G') L; alpha and epsilon drop out.
  out.grad_L = ((g.grad_P + g.grad_P.transpose()) * params_.L).triangularView<Eigen::Lower>();
  return out;
}

LeastSquaresForm DtoLayer::least_squares_form(const Vector& e) const {
  Eigen::LLT<Matrix> llt(q_bar_);
  if (llt.info() != Eigen::Success) {
    throw std::logic_error("least_squares_form: Qbar is not positive definite");
  }
  LeastSquaresForm out;
  out.L_bar = llt.matrixL();
  out.e_bar = -llt.matrixL().solve(e);
  return out;
}

TrajectoryDecomposition DtoLayer::decompose(const Vector& y, const Vector& p) const {
  const DtoParams& pr = params_;
  if (y.size() != pr.n() || p.size() != pr.D_v()) {
    throw ShapeError("decompose: expected y of " + std::to_string(pr.n()) + " and p of " +
                     std::to_string(pr.D_v()) + " entries");
  }
  TrajectoryDecomposition d;
  d.v_hat = s_blk_ * y;
  d.a_hat = a_diff_ * d.v_hat;
  d.p_t0 = tile(p, pr.T_p - 1);
  d.p_hat = d.p_t0 + a_inte_ * tile(pr.displacement_scale, pr.T_p).cwiseProduct(d.v_hat);
  return d;
}

namespace {

BatchForward forward_columns(const DtoLayer& layer, const Matrix& E, const Matrix& positions,
                             const Mode& mode, const qp::QpSettings& settings, bool parallel) {
  const Index B = E.cols();
  if (positions.cols() != B && mode.kind != Mode::Kind::Unconstrained) {
    throw ShapeError("forward_batch: E is " + shape_str(E) + " but positions is " +
                     shape_str(positions));
  }
  std::vector<std::optional<qp::QpProblem>> problems(static_cast<std::size_t>(B));
  std::vector<qp::QpSolution> solutions(static_cast<std::size_t>(B));
  auto one = [&](Index b) {
    const Vector p = mode.kind == Mode::Kind::Unconstrained ? Vector() : Vector(positions.col(b));
    auto& slot = problems[static_cast<std::size_t>(b)];
    slot.emplace(layer.assemble_qp(E.col(b), p, mode));
    solutions[static_cast<std::size_t>(b)] = qp::solve(*slot, settings);
  };
  if (parallel) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (Index b = 0; b < B; ++b) {
      try {
        one(b);
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) {
      std::rethrow_exception(error);
    }
  } else {
    for (Index b = 0; b < B; ++b) {
      one(b);
    }
  }
  BatchForward out;
  out.Y.resize(E.rows(), B);
  out.problems.reserve(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    out.Y.col(b) = solutions[static_cast<std::size_t>(b)].z;
    out.problems.push_back(std::move(*problems[static_cast<std::size_t>(b)]));
  }
  out.solutions = std::move(solutions);
  return out;
}

}  // namespace

BatchForward forward_batch_serial(const DtoLayer& layer, const Matrix& E, const Matrix& positions,
                                  const Mode& mode, const qp::QpSettings& settings) {
  return forward_columns(layer, E, positions, mode, settings, false);
}

BatchForward forward_batch(const DtoLayer& layer, const Matrix& E, const Matrix& positions,
                           const Mode& mode, const qp::QpSettings& settings) {
  return forward_columns(layer, E, positions, mode, settings, true);
}

BatchGradient backward_batch(const DtoLayer& layer, const BatchForward& fwd,
                             const Matrix& grad_Y) {
  const Index n = layer.params().n();
  const Index B = fwd.Y.cols();
  if (grad_Y.rows() != n || grad_Y.cols() != B) {
    throw ShapeError("backward_batch: grad_Y is " + shape_str(grad_Y) + ", expected " +
                     shape_str(n, B));
  }
  std::vector<std::optional<qp::QpGradient>> per(static_cast<std::size_t>(B));
#pragma omp parallel for schedule(dynamic)
  for (Index b = 0; b < B; ++b) {
    const auto i = static_cast<std::size_t>(b);
    try {
      per[i] = qp::backward_with_retry(fwd.problems[i], fwd.solutions[i], grad_Y.col(b));
    } catch (const qp::SingularKkt&) {
      per[i].reset();
    }
  }
  BatchGradient out;
  out.grad_E = Matrix::Zero(n, B);
  Matrix grad_P = Matrix::Zero(n, n);
  for (Index b = 0; b < B; ++b) {
    const auto& g = per[static_cast<std::size_t>(b)];
    if (!g) {
      ++out.skipped;
      continue;
    }
    out.grad_E.col(b) = g->grad_q;
    grad_P += g->grad_P;
  }
  const Matrix& L = layer.params().L;
  out.grad_L = ((grad_P + grad_P.transpose()) * L).triangularView<Eigen::Lower>();
  if (out.skipped > 0) {
    spdlog::warn("DTO backward: skipped {} of {} columns with singular KKT systems", out.skipped,
                 B);
  }
  return out;
}

DtoNode record_dto_node(ad::Tape& tape, const DtoParams& params, ad::NodeId E, ad::NodeId L,
                        const Matrix& positions, const NodeOptions& options) {
  DtoParams p = params;
  p.L = tape.value(L).triangularView<Eigen::Lower>();
  auto layer = std::make_shared<const DtoLayer>(std::move(p));
  auto fwd = std::make_shared<const BatchForward>(
      forward_batch(*layer, tape.value(E), positions, options.mode, options.settings));
  for (std::size_t b = 0; b < fwd->solutions.size(); ++b) {
    const qp::QpSolution& s = fwd->solutions[b];
    if (!s.solved()) {
      throw NumericalError("DTO forward: column " + std::to_string(b) + " returned " +
                           qp::status_name(s.status) + " after " + std::to_string(s.iterations) +
                           " iterations (primal " + std::to_string(s.primal_residual) +
                           ", dual " + std::to_string(s.dual_residual) + ")");
    }
  }
  auto skipped = std::make_shared<int>(0);
  const double scale = options.pullback_scale;
  ad::NodeId id = tape.register_custom(
      {E, L}, fwd->Y, [layer, fwd, skipped, scale](const Matrix& g) {
        BatchGradient bg = backward_batch(*layer, *fwd, g);
        *skipped = bg.skipped;
        return std::vector<Matrix>{scale * bg.grad_E, scale * bg.grad_L};
      });
  return DtoNode{id, fwd, skipped};
}

}  // namespace trajlayer::dto
