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

#include "trajlayer/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trajlayer::qp {

namespace {

constexpr double kStepFraction = 0.99;
// Certifies no feasible point with ||z||_1 below 1/kFarkasRatio.
constexpr double kFarkasRatio = 1e-9;

bool all_finite(const Matrix& m) { return m.allFinite(); }

// Eigen's LDLT::rcond() treats exact zero pivots as a pseudo-inverse, so take the
// smaller of it and the pivot ratio.
double reciprocal_condition(const Eigen::LDLT<Matrix>& ldlt) {
  if (ldlt.info() != Eigen::Success) {
    return 0.0;
  }
  const Vector d = ldlt.vectorD().cwiseAbs();
  if (d.size() == 0) {
    return 1.0;
  }
  const double pivots = d.maxCoeff() > 0.0 ? d.minCoeff() / d.maxCoeff() : 0.0;
  return std::min(ldlt.rcond(), pivots);
}

double max_step(const Vector& x, const Vector& dx) {
  double alpha = 1.0;
  for (Index i = 0; i < x.size(); ++i) {
    if (dx[i] < 0.0) {
      alpha = std::min(alpha, -x[i] / dx[i]);
    }
  }
  return alpha;
}

// Farkas certificate for {z : Gz <= h} = {}: lambda >= 0, G'lambda ~ 0, h'lambda < 0.
bool infeasibility_certified(const QpProblem& problem, const Vector& lambda) {
  const double h_dot = problem.h().dot(lambda);
  if (!(h_dot < 0.0)) {
    return false;
  }
  const double g_norm = (problem.G().transpose() * lambda).lpNorm<Eigen::Infinity>();
  return g_norm <= kFarkasRatio * (-h_dot);
}

// Equality-constrained solve on one active set. Returns false when the rows
// are too many or the regularized fallback cannot be factored.
bool solve_on_active_set(const QpProblem& problem, const std::vector<Index>& act,
                         const Vector& lambda_hint, Vector& z, Vector& lamA) {
  const Index n = problem.num_variables();
  const auto& llt = problem.cholesky();
  z = llt.solve(-problem.q());
  const Index k = static_cast<Index>(act.size());
  lamA.resize(k);
  if (k == 0) {
    return true;
  }
  if (k > n) {
    return false;
  }
  Matrix GA(k, n);
  Vector hA(k);
  for (Index j = 0; j < k; ++j) {
    GA.row(j) = problem.G().row(act[j]);
    hA[j] = problem.h()[act[j]];
  }
  const Matrix Y = llt.solve(GA.transpose());
  const Matrix S = GA * Y;
  const Vector rhs = GA * z - hA;
  Eigen::LDLT<Matrix> ldlt(S);
  if (reciprocal_condition(ldlt) > 1e-12) {
    lamA = ldlt.solve(rhs);
  } else {
    // Dependent active rows: the multipliers are not unique. Proximal
    // iterations from the interior-point duals pick a consistent solution.
    const double delta = 1e-10 * std::max(1.0, S.diagonal().maxCoeff());
    Eigen::LDLT<Matrix> reg(S + delta * Matrix::Identity(k, k));
    if (reg.info() != Eigen::Success) {
      return false;
    }
    for (Index j = 0; j < k; ++j) {
      lamA[j] = lambda_hint[act[j]];
    }
    for (int it = 0; it < 20; ++it) {
      const Vector step = reg.solve(rhs - S * lamA);
      lamA += step;
      if (step.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, lamA.lpNorm<Eigen::Infinity>())) {
        break;
      }
    }
  }
  z -= Y * lamA;
  return true;
}

// Active-set refinement from the interior-point iterate: guess the rows with
// lambda > slack, then add violated rows and drop negative multipliers until
// the guess is consistent. Nearly degenerate rows (both lambda and slack small)
// are often misclassified by the first guess.
bool polish(const QpProblem& problem, const Vector& slack, const Vector& lambda, double tol,
            QpSolution& out) {
  const Index m = problem.num_constraints();
  std::vector<char> in(static_cast<std::size_t>(m), 0);
  for (Index i = 0; i < m; ++i) {
    in[static_cast<std::size_t>(i)] = lambda[i] > slack[i];
  }
  // Refinement uses a threshold well below tol so that nearly degenerate rows
  // land on the exact active set; acceptance below still uses tol.
  const double tight = 1e-3 * tol;
  Vector z;
  Vector lam = Vector::Zero(m);
  for (int round = 0; round < 8; ++round) {
    std::vector<Index> act;
    for (Index i = 0; i < m; ++i) {
      if (in[static_cast<std::size_t>(i)]) act.push_back(i);
    }
    Vector lamA;
    if (!solve_on_active_set(problem, act, lambda, z, lamA)) {
      return false;
    }
    bool changed = false;
    lam.setZero();
    for (std::size_t j = 0; j < act.size(); ++j) {
      if (lamA[static_cast<Index>(j)] < -tight) {
        in[static_cast<std::size_t>(act[j])] = 0;
        changed = true;
      }
      lam[act[j]] = std::max(lamA[static_cast<Index>(j)], 0.0);
    }
    const Vector viol = problem.G() * z - problem.h();
    for (Index i = 0; i < m; ++i) {
      if (!in[static_cast<std::size_t>(i)] && viol[i] > tight) {
        in[static_cast<std::size_t>(i)] = 1;
        changed = true;
      }
    }
    if (!changed) {
      break;
    }
  }
  const KktResidual r = check_kkt(problem, z, lam);
  if (!(r.max() <= tol)) {
    return false;
  }
  out.z = std::move(z);
  out.lambda = std::move(lam);
  out.status = QpStatus::Solved;
  out.primal_residual = r.primal;
  out.dual_residual = r.stationarity;
  out.complementarity = r.complementarity;
  return true;
}

}  // namespace

const char* status_name(QpStatus status) {
  switch (status) {
    case QpStatus::Solved: return "Solved";
    case QpStatus::MaxIterations: return "MaxIterations";
    case QpStatus::Infeasible: return "Infeasible";
  }
  return "unknown";
}

QpProblem::QpProblem(Matrix P, Vector q, Matrix G, Vector h)
    : P_(std::move(P)), q_(std::move(q)), G_(std::move(G)), h_(std::move(h)) {
  const Index n = q_.size();
  if (P_.rows() != n || P_.cols() != n) {
    throw ShapeError("QpProblem: P is " + shape_str(P_) + " but q has " + std::to_string(n) +
                     " entries");
  }
  if (G_.rows() != h_.size() || (G_.rows() > 0 && G_.cols() != n)) {
    throw ShapeError("QpProblem: G is " + shape_str(G_) + ", h has " +
                     std::to_string(h_.size()) + " entries, n = " + std::to_string(n));
  }
  if (G_.rows() == 0) {
    G_.resize(0, n);
  }
  if (!all_finite(P_) || !all_finite(q_) || !all_finite(G_) || !all_finite(h_)) {
    throw std::invalid_argument("QpProblem: non-finite entries");
  }
  P_ = 0.5 * (P_ + P_.transpose()).eval();
  llt_.compute(P_);
  if (llt_.info() != Eigen::Success) {
    throw std::invalid_argument("QpProblem: P is not positive definite");
  }
}

double KktResidual::max() const {
  return std::max({stationarity, primal, complementarity, dual_sign});
}

KktResidual check_kkt(const QpProblem& problem, const Vector& z, const Vector& lambda) {
  KktResidual r;
  Vector stat = problem.P() * z + problem.q();
  if (problem.num_constraints() > 0) {
    stat.noalias() += problem.G().transpose() * lambda;
    const Vector gap = problem.G() * z - problem.h();
    r.primal = std::max(0.0, gap.maxCoeff());
    r.complementarity = lambda.cwiseProduct(gap).lpNorm<Eigen::Infinity>();
    r.dual_sign = std::max(0.0, -lambda.minCoeff());
  }
  r.stationarity = stat.lpNorm<Eigen::Infinity>();
  return r;
}

QpSolution solve(const QpProblem& problem, const QpSettings& settings) {
  const Index n = problem.num_variables();
  const Index m = problem.num_constraints();
  const Matrix& P = problem.P();
  const Matrix& G = problem.G();
  const Vector& q = problem.q();
  const Vector& h = problem.h();
  const double tol = settings.tolerance;

  QpSolution sol;
  sol.z = problem.cholesky().solve(-q);
  sol.lambda = Vector::Zero(m);
  if (m == 0) {
    const KktResidual r = check_kkt(problem, sol.z, sol.lambda);
    sol.status = QpStatus::Solved;
    sol.dual_residual = r.stationarity;
    return sol;
  }

  Vector z = sol.z;
  Vector s = (h - G * z).cwiseMax(1.0);
  Vector lam = Vector::Ones(m);

  Matrix M(n, n);
  Matrix GW(m, n);
  for (int iter = 0; iter <= settings.max_iterations; ++iter) {
    sol.iterations = iter;
    const Vector rd = P * z + q + G.transpose() * lam;
    const Vector rp = G * z + s - h;
    const double mu = s.dot(lam) / static_cast<double>(m);

    const KktResidual res = check_kkt(problem, z, lam);
    if (res.max() <= tol) {
      sol.z = z;
      sol.lambda = lam;
      sol.status = QpStatus::Solved;
      sol.primal_residual = res.primal;
      sol.dual_residual = res.stationarity;
      sol.complementarity = res.complementarity;
      return sol;
    }
    if (mu < settings.polish_threshold && polish(problem, s, lam, tol, sol)) {
      return sol;
    }
    if (infeasibility_certified(problem, lam)) {
      sol.z = z;
      sol.lambda = lam;
      sol.status = QpStatus::Infeasible;
      sol.primal_residual = res.primal;
      sol.dual_residual = res.stationarity;
      sol.complementarity = res.complementarity;
      return sol;
    }
    if (iter == settings.max_iterations) {
      break;
    }

    const Vector w = lam.cwiseQuotient(s);
    GW = w.asDiagonal() * G;
    M.noalias() = P;
    M.noalias() += G.transpose() * GW;
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success) {
      break;
    }

    // Newton system in (dz, dlam, ds) for residuals (rd, rp, rc):
    //   P dz + G'dlam = -rd,  G dz + ds = -rp,  lam.*ds + s.*dlam = -rc
    auto newton = [&](const Vector& rc, Vector& dz, Vector& dlam, Vector& ds) {
      const Vector t = w.cwiseProduct(rp) - rc.cwiseQuotient(s);
      dz = llt.solve(-rd - G.transpose() * t);
      dlam = w.cwiseProduct(G * dz) + t;
      ds = -(rc + s.cwiseProduct(dlam)).cwiseQuotient(lam);
    };

    Vector dz_aff, dlam_aff, ds_aff;
    newton(s.cwiseProduct(lam), dz_aff, dlam_aff, ds_aff);
    const double a_aff = std::min(max_step(s, ds_aff), max_step(lam, dlam_aff));
    const double mu_aff =
        (s + a_aff * ds_aff).dot(lam + a_aff * dlam_aff) / static_cast<double>(m);
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    Vector rc = s.cwiseProduct(lam) + ds_aff.cwiseProduct(dlam_aff);
    rc.array() -= sigma * mu;
    Vector dz, dlam, ds;
    newton(rc, dz, dlam, ds);
    const double alpha =
        std::min(1.0, kStepFraction * std::min(max_step(s, ds), max_step(lam, dlam)));

    z += alpha * dz;
    s += alpha * ds;
    lam += alpha * dlam;
    if (!z.allFinite() || !s.allFinite() || !lam.allFinite() || !(s.minCoeff() > 0.0) ||
        !(lam.minCoeff() > 0.0)) {
      sol.z = z;
      sol.lambda = lam;
      sol.status = QpStatus::Infeasible;
      return sol;
    }
  }

  const KktResidual res = check_kkt(problem, z, lam);
  sol.z = z;
  sol.lambda = lam;
  sol.status = infeasibility_certified(problem, lam) ? QpStatus::Infeasible
                                                     : QpStatus::MaxIterations;
  sol.primal_residual = res.primal;
  sol.dual_residual = res.stationarity;
  sol.complementarity = res.complementarity;
  return sol;
}

std::vector<Index> active_set(const QpProblem& problem, const QpSolution& solution,
                              double weak_threshold) {
  std::vector<Index> act;
  const Vector slack = problem.h() - problem.G() * solution.z;
  for (Index i = 0; i < problem.num_constraints(); ++i) {
    const double lam = solution.lambda[i];
    const bool weak = lam < weak_threshold && slack[i] < weak_threshold;
    if (lam >= slack[i] || weak) {
      act.push_back(i);
    }
  }
  return act;
}

double strict_complementarity_margin(const QpProblem& problem, const QpSolution& solution) {
  double margin = std::numeric_limits<double>::infinity();
  const Vector slack = problem.h() - problem.G() * solution.z;
  for (Index i = 0; i < problem.num_constraints(); ++i) {
    margin = std::min(margin, std::max(solution.lambda[i], slack[i]));
  }
  return margin;
}

QpGradient backward(const QpProblem& problem, const QpSolution& solution, const Vector& grad_out,
                    const BackwardSettings& settings) {
  if (!solution.solved()) {
    throw std::invalid_argument(std::string("qp::backward: solution status is ") +
                                status_name(solution.status));
  }
  const Index n = problem.num_variables();
  if (grad_out.size() != n) {
    throw ShapeError("qp::backward: grad_out has " + std::to_string(grad_out.size()) +
                     " entries, expected " + std::to_string(n));
  }
  const auto& llt = problem.cholesky();
  // Active-set KKT system [P GA'; GA -delta I] [u; w] = [g; 0].
  Vector u = llt.solve(grad_out);
  const std::vector<Index> act = active_set(problem, solution, settings.weak_threshold);
  if (!act.empty()) {
    const Index k = static_cast<Index>(act.size());
    Matrix GA(k, n);
    for (Index j = 0; j < k; ++j) {
      GA.row(j) = problem.G().row(act[j]);
    }
    const Matrix Y = llt.solve(GA.transpose());
    Matrix S = GA * Y;
    S.diagonal().array() += settings.dual_regularization;
    Eigen::LDLT<Matrix> ldlt(S);
    const double rcond = reciprocal_condition(ldlt);
    if (!(rcond > settings.min_rcond)) {
      const double cond = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
      throw SingularKkt("qp::backward: singular active-set KKT system (" + std::to_string(k) +
                            " active rows, condition estimate " + std::to_string(cond) + ")",
                        cond);
    }
    const Vector w = ldlt.solve(GA * u);
    u -= Y * w;
  }
  QpGradient out;
  out.grad_q = -u;
  out.grad_P = -0.5 * (u * solution.z.transpose() + solution.z * u.transpose());
  return out;
}

QpGradient backward_with_retry(const QpProblem& problem, const QpSolution& solution,
                               const Vector& grad_out, double regularization) {
  try {
    return backward(problem, solution, grad_out);
  } catch (const SingularKkt&) {
    BackwardSettings reg;
    reg.dual_regularization = regularization;
    return backward(problem, solution, grad_out, reg);
  }
}

std::vector<QpSolution> solve_batch_serial(std::span<const QpProblem> problems,
                                           const QpSettings& settings) {
  std::vector<QpSolution> out;
  out.reserve(problems.size());
  for (const QpProblem& p : problems) {
    out.push_back(solve(p, settings));
  }
  return out;
}

std::vector<QpSolution> solve_batch(std::span<const QpProblem> problems,
                                    const QpSettings& settings) {
  std::vector<QpSolution> out(problems.size());
  const auto count = static_cast<std::ptrdiff_t>(problems.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    out[static_cast<std::size_t>(i)] = solve(problems[static_cast<std::size_t>(i)], settings);
  }
  return out;
}

}  // namespace trajlayer::qp
