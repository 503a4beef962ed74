#pragma once

#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include <Eigen/Eigenvalues>

#include "errors.hpp"
#include "linalg.hpp"
#include "objective.hpp"
#include "stiefel_newton.hpp"

namespace psdtls {

struct QepInstance {
  Matrix A, B, C, A_inv;
};

// One admissible KKT point (Omega, u, v) with u^T v = 1.
struct QepEigenpair {
  double omega = 0;
  Vector u, v;
  double E = 0;             // E at the recovered (y, s)
  double residual_u = 0;    // ||2Au - Cv - Omega v||
  double residual_v = 0;    // ||2Bv - Cu - Omega u||
  double residual_scale = 1;
};

struct QepOptions {
  // Polish each candidate with rank-1 Newton runs started at u and at v. The KKT system
  // in (u, v) does not force u parallel to v, so the literal recovery is generally
  // not a stationary point of E. A run from the solver's default start is polished
  // too; on exact rank-1 data every candidate can sit in the basin of a clamped point.
  bool refine = true;
  SolverConfig newton;
};

struct QepReport {
  std::vector<QepEigenpair> candidates;
  int chosen = -1;                 // candidate whose polished result was returned
  bool default_start_won = false;  // the safeguard run from the solver's own start won
  double literal_E = std::numeric_limits<double>::infinity();  // best unrefined E
};

inline QepInstance make_qep_instance(const ReducedProblem& p) {
  const Eigen::Index n = p.n;
  Eigen::FullPivLU<Matrix> lu(p.A);
  const double anorm = p.A.norm();
  if (anorm == 0 || !lu.isInvertible() || std::abs(lu.determinant()) == 0)
    throw SingularA("rank-1 QEP: A = D^T D is singular (D lacks full column rank)");
  Matrix Ainv = lu.inverse();
  const double rcond = 1.0 / (anorm * Ainv.norm());
  if (rcond < n * std::numeric_limits<double>::epsilon())
    throw SingularA("rank-1 QEP: A = D^T D is numerically singular (rcond " + std::to_string(rcond) + ")");
  return {p.A, p.B, p.C, sym(Ainv)};
}

// Monic form: (Omega^2 A^-1 + Omega (C A^-1 + A^-1 C) + C A^-1 C - 4B) v = 0, multiplied
// through by A and linearized with z = [v; Omega v].
inline std::vector<QepEigenpair> qep_candidates(const QepInstance& q) {
  const Eigen::Index n = q.A.rows();
  const Matrix M0 = q.C * q.A_inv * q.C - 4 * q.B;
  const Matrix M1 = q.C * q.A_inv + q.A_inv * q.C;
  Matrix Z = Matrix::Zero(2 * n, 2 * n);
  Z.topRightCorner(n, n) = Matrix::Identity(n, n);
  Z.bottomLeftCorner(n, n) = -q.A * M0;
  Z.bottomRightCorner(n, n) = -q.A * M1;

  Eigen::EigenSolver<Matrix> es(Z, true);
  if (es.info() != Eigen::Success) throw Error("rank-1 QEP: eigensolver failed to converge");
  const auto lams = es.eigenvalues();
  const auto vecs = es.eigenvectors();
  const double opscale = q.A.norm() + q.B.norm() + q.C.norm();

  std::vector<QepEigenpair> out;
  for (Eigen::Index k = 0; k < 2 * n; ++k) {
    const std::complex<double> lam = lams(k);
    if (std::abs(lam.imag()) > 1e-8 * (1 + std::abs(lam))) continue;
    Eigen::VectorXcd vc = vecs.col(k).head(n);
    // rotate the phase so the imaginary part is as small as possible
    const std::complex<double> vv = (vc.array() * vc.array()).sum();
    vc *= std::exp(std::complex<double>(0, -0.5 * std::arg(vv)));
    if (vc.imag().norm() > 1e-6 * vc.norm()) continue;
    QepEigenpair e;
    e.omega = lam.real();
    e.v = vc.real();
    e.u = 0.5 * q.A_inv * (q.C * e.v + e.omega * e.v);
    const double uv = e.u.dot(e.v);
    if (!(uv > 0) || !std::isfinite(uv)) continue;  // u = s y, v = y / s forces u^T v > 0
    e.u /= std::sqrt(uv);
    e.v /= std::sqrt(uv);
    e.residual_u = (2 * q.A * e.u - q.C * e.v - e.omega * e.v).norm();
    e.residual_v = (2 * q.B * e.v - q.C * e.u - e.omega * e.u).norm();
    e.residual_scale = (opscale + std::abs(e.omega)) * (e.u.norm() + e.v.norm());
    out.push_back(std::move(e));
  }
  return out;
}

namespace detail {

inline Matrix fix_sign(Matrix y) {
  Eigen::Index imax = 0;
  y.col(0).cwiseAbs().maxCoeff(&imax);
  if (y(imax, 0) < 0) y = -y;
  return y;
}

// Converged beats not converged (a clamped E is only a surrogate value), then lower E,
// then smaller |Omega| within 1e-12.
inline bool qep_better(const RankRSolution& a, double omega_a, const RankRSolution& b, double omega_b) {
  if (a.converged != b.converged) return a.converged;
  return a.E < b.E - 1e-12 || (std::abs(a.E - b.E) <= 1e-12 && std::abs(omega_a) < std::abs(omega_b));
}

}  // namespace detail

inline RankRSolution solve_rank1_qep(const ReducedProblem& p, const QepOptions& opt = {}, QepReport* report = nullptr) {
  const QepInstance q = make_qep_instance(p);
  std::vector<QepEigenpair> cands = qep_candidates(q);
  if (cands.empty()) throw NoRealCandidate("rank-1 QEP: no real eigenpair with u^T v > 0");

  QepReport rep;
  RankRSolution best;
  double best_omega = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    QepEigenpair& c = cands[i];
    Matrix y = c.u / c.u.norm();
    Vector s(1);
    s(0) = std::sqrt(c.u.norm() / c.v.norm());
    c.E = objective_value(p, {y, s});
    rep.literal_E = std::min(rep.literal_E, c.E);

    // u and v are both y up to scale at a true rank-1 point; away from one they
    // differ, and either can sit in the better basin, so polish from both.
    std::vector<RankRSolution> sols;
    if (opt.refine) {
      for (const Vector& dir : {Vector(c.u), Vector(c.v)}) {
        SolverConfig cfg = opt.newton;
        cfg.initial_guess = Matrix(dir / dir.norm());
        sols.push_back(solve_rank_r(p, 1, cfg));
      }
    } else {
      RankRSolution sol;
      sol.factors = {y, s};
      sol.X = factors_to_X(y, s);
      sol.E = c.E;
      sol.orth_residual = orth_residual(y);
      sol.converged = true;
      sol.backend_used = opt.newton.backend;
      sols.push_back(std::move(sol));
    }
    for (auto& sol : sols) {
      if (rep.chosen < 0 || detail::qep_better(sol, c.omega, best, best_omega)) {
        best = std::move(sol);
        best_omega = c.omega;
        rep.chosen = static_cast<int>(i);
      }
    }
  }
  if (opt.refine) {
    RankRSolution sol = solve_rank_r(p, 1, opt.newton);
    if (detail::qep_better(sol, std::numeric_limits<double>::infinity(), best, best_omega)) {
      best = std::move(sol);
      rep.default_start_won = true;
    }
  }
  best.factors.Y = detail::fix_sign(best.factors.Y);
  rep.candidates = std::move(cands);
  if (report) *report = std::move(rep);
  return best;
}

}  // namespace psdtls
