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

#include "trajlayer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>

#include "trajlayer/dataset.hpp"
#include "trajlayer/dto.hpp"
#include "trajlayer/encoder.hpp"
#include "trajlayer/qp.hpp"
#include "trajlayer/training.hpp"

namespace trajlayer::gradcheck {

namespace {

Matrix uniform(std::mt19937_64& rng, Index rows, Index cols, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = d(rng);
  }
  return m;
}

// Relative error of one derivative after discounting the difference
// quotient's cancellation error. f_scale is the magnitude of the terms f sums
// (sum |w_i y_i| for f = w'y), which bounds its rounding better than |f|.
double fd_error(double analytic, double fp, double fm, double h, double f_scale) {
  const double numeric = (fp - fm) / (2.0 * h);
  const double roundoff = 64.0 * std::numeric_limits<double>::epsilon() *
                          std::max({1.0, std::abs(fp), std::abs(fm), f_scale}) / h;
  return std::max(0.0, std::abs(analytic - numeric) - roundoff) / std::max(1e-8, std::abs(analytic));
}

// Worst error over entries of x; lower_only restricts to the lower triangle.
double fd_matrix(const std::function<double()>& f, Matrix& x, const Matrix& analytic, double h,
                 double f_scale, bool lower_only = false) {
  double worst = 0.0;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = lower_only ? j : 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      x(i, j) = v + h;
      const double fp = f();
      x(i, j) = v - h;
      const double fm = f();
      x(i, j) = v;
      worst = std::max(worst, fd_error(analytic(i, j), fp, fm, h, f_scale));
    }
  }
  return worst;
}

SuiteReport finish(SuiteReport r, const Options& o) {
  r.passed = r.instances >= o.instances && std::isfinite(r.worst_rel_error) &&
             r.worst_rel_error <= o.tolerance;
  return r;
}

int max_attempts(const Options& o) { return 20 * std::max(1, o.instances); }

}  // namespace

SuiteReport check_qp(const Options& o) {
  SuiteReport r{"qp"};
  std::mt19937_64 rng(o.seed ^ 0x51);
  for (int attempt = 0; r.instances < o.instances && attempt < max_attempts(o); ++attempt) {
    const Index n = std::uniform_int_distribution<Index>(2, 6)(rng);
    const Index m = std::uniform_int_distribution<Index>(1, 10)(rng);
    const Matrix M = uniform(rng, n, n, -1, 1);
    Matrix P = M.transpose() * M + Matrix::Identity(n, n);
    Matrix q = uniform(rng, n, 1, -2, 2);
    const Matrix G = uniform(rng, m, n, -1, 1);
    const Vector h = G * uniform(rng, n, 1, -0.5, 0.5) + uniform(rng, m, 1, 0.0, 0.5);
    const Vector w = uniform(rng, n, 1, -1, 1);
    const qp::QpProblem prob(P, q, G, h);
    const qp::QpSolution s = qp::solve(prob);
    if (!s.solved() || qp::strict_complementarity_margin(prob, s) < o.margin) {
      ++r.resampled;
      continue;
    }
    qp::QpGradient g;
    try {
      g = qp::backward(prob, s, w);
    } catch (const qp::SingularKkt&) {
      ++r.resampled;
      continue;
    }
    auto loss = [&] { return w.dot(qp::solve(qp::QpProblem(P, Vector(q), G, h)).z); };
    const double scale = w.cwiseAbs().dot(s.z.cwiseAbs());
    r.worst_rel_error =
        std::max(r.worst_rel_error, fd_matrix(loss, q, g.grad_q * o.pullback_scale, o.step, scale));
    r.worst_rel_error =
        std::max(r.worst_rel_error, fd_matrix(loss, P, g.grad_P * o.pullback_scale, o.step, scale));
    ++r.instances;
  }
  return finish(r, o);
}

SuiteReport check_dto(const Options& o) {
  SuiteReport r{"dto"};
  std::mt19937_64 rng(o.seed ^ 0xd7);
  const dataset::Normalizer norm{Vector::Constant(3, 0.5), {0, 1}};
  for (int attempt = 0; r.instances < o.instances && attempt < max_attempts(o); ++attempt) {
    training::TrainConfig cfg;
    cfg.T_p = std::uniform_int_distribution<int>(2, 4)(rng);
    cfg.T_a = 1;
    cfg.alpha = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    dto::DtoParams params = training::make_dto_params(cfg, norm, dataset::TaskConfig{});
    const Index n = params.n();
    params.L = Matrix(uniform(rng, n, n, -1, 1).triangularView<Eigen::Lower>()) + Matrix::Identity(n, n);
    Matrix e = uniform(rng, n, 1, -3, 3);
    const Vector p = uniform(rng, 2, 1, 0.0, 1.0);
    const Vector w = uniform(rng, n, 1, -1, 1);
    const dto::Mode mode = dto::Mode::train();
    const dto::DtoLayer layer(params);
    const dto::DtoForward f = layer.forward(e, p, mode);
    if (!f.solution.solved() ||
        qp::strict_complementarity_margin(layer.assemble_qp(e, p, mode), f.solution) < o.margin) {
      ++r.resampled;
      continue;
    }
    dto::DtoGradient g;
    try {
      g = layer.backward(e, p, mode, f.solution, w);
    } catch (const qp::SingularKkt&) {
      ++r.resampled;
      continue;
    }
    Matrix L = params.L;
    auto loss = [&] {
      dto::DtoLayer l2 = layer;
      l2.set_L(L);
      return w.dot(l2.forward(e, p, mode).y);
    };
    const double scale = w.cwiseAbs().dot(f.y.cwiseAbs());
    r.worst_rel_error =
        std::max(r.worst_rel_error, fd_matrix(loss, e, g.grad_e * o.pullback_scale, o.step, scale));
    r.worst_rel_error =
        std::max(r.worst_rel_error, fd_matrix(loss, L, g.grad_L * o.pullback_scale, o.step, scale, true));
    ++r.instances;
  }
  return finish(r, o);
}

SuiteReport check_encoder(const Options& o) {
  SuiteReport r{"encoder"};
  std::mt19937_64 rng(o.seed ^ 0xe1);
  for (int attempt = 0; r.instances < o.instances && attempt < max_attempts(o); ++attempt) {
    encoder::EncoderParams params = encoder::init_params(3, 4, 2, rng());
    for (Matrix* t : params.tensors()) *t += uniform(rng, t->rows(), t->cols(), -0.5, 0.5);
    const int steps = 3;
    std::vector<Vector> obs;
    for (int k = 0; k < steps; ++k) obs.push_back(uniform(rng, 3, 1, -1, 1));
    const Vector w = uniform(rng, 2, 1, -1, 1);

    ad::Tape tape;
    const encoder::TapeParams tp = encoder::record_params(tape, params);
    encoder::TapeState st = encoder::record_init_state(tape, params.hidden(), 1);
    std::optional<ad::NodeId> total;
    for (int k = 0; k < steps; ++k) {
      const encoder::TapeStep s = encoder::record_step(tape, tp, tape.constant(obs[k]), st);
      st = s.state;
      const ad::NodeId term = tape.matmul(tape.constant(Matrix(w.transpose())), s.e);
      total = total ? tape.add(*total, term) : term;
    }
    const ad::GradMap g = tape.backward(*total);
    const std::vector<ad::NodeId> ids = tp.ids();

    auto loss = [&] {
      encoder::EncoderState s = encoder::init_state(params);
      double acc = 0.0;
      for (int k = 0; k < steps; ++k) {
        const encoder::StepResult res = encoder::step(params, obs[k], s);
        s = res.state;
        acc += w.dot(res.e);
      }
      return acc;
    };
    const std::vector<Matrix*> tensors = params.tensors();
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      r.worst_rel_error = std::max(
          r.worst_rel_error, fd_matrix(loss, *tensors[k], g[ids[k]] * o.pullback_scale, o.step, 0.0));
    }
    ++r.instances;
  }
  return finish(r, o);
}

SuiteReport check_training(const Options& o) {
  SuiteReport r{"training"};
  std::mt19937_64 rng(o.seed ^ 0x7a);
  training::TrainConfig cfg;
  cfg.hidden = 4;
  cfg.T_p = 2;
  cfg.T_s = 3;
  cfg.T_a = 1;
  const dataset::Dataset data = dataset::make_dataset(dataset::TaskConfig{}, 8, o.seed);
  const auto demos = dataset::normalize_demos(data.demos, data.normalizer);
  const auto windows = dataset::sample_windows(demos, cfg.T_s, cfg.T_p, 1);
  std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
  training::LossOptions with_grad;
  with_grad.pullback_scale = o.pullback_scale;
  const training::LossOptions value_only{false};
  for (int attempt = 0; r.instances < o.instances && attempt < max_attempts(o); ++attempt) {
    cfg.seed = rng();
    training::Model model = training::init_model(cfg, data.normalizer, data.task);
    model.encoder.W_out *= 4.0;
    const Index n = model.dto.n();
    model.dto.L += Matrix(uniform(rng, n, n, -0.3, 0.3).triangularView<Eigen::Lower>());
    const std::vector<const dataset::SequenceSample*> batch{&windows[pick(rng)], &windows[pick(rng)]};
    training::BatchResult res;
    try {
      res = training::batch_loss(model, batch, with_grad);
    } catch (const NumericalError&) {
      ++r.resampled;
      continue;
    }
    if (res.min_margin < o.margin || res.skipped > 0) {
      ++r.resampled;
      continue;
    }
    const std::vector<Matrix*> tensors = model.tensors();
    auto loss = [&] { return training::batch_loss(model, batch, value_only).loss; };
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const bool is_L = k + 1 == tensors.size();
      r.worst_rel_error =
          std::max(r.worst_rel_error, fd_matrix(loss, *tensors[k], res.grads[k], o.step, 0.0, is_L));
    }
    ++r.instances;
  }
  return finish(r, o);
}

std::vector<SuiteReport> run_all(const Options& options) {
  return {check_qp(options), check_dto(options), check_encoder(options), check_training(options)};
}

}  // namespace trajlayer::gradcheck
