#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "krylov.hpp"
#include "linalg.hpp"
#include "objective.hpp"
#include "rng.hpp"

namespace psdtls {

enum class Backend { CG_O, GMRES_O, CG_L };

inline const char* backend_name(Backend b) {
  switch (b) {
    case Backend::CG_O: return "cg-o";
    case Backend::GMRES_O: return "gmres-o";
    case Backend::CG_L: return "cg-l";
  }
  return "?";
}

enum class InitStrategy {
  least_squares,  // top-r eigenvectors of sym(A^-1 D^T T)
  gaussian,       // Q factor of a seeded Gaussian n x r
  c_eigen,        // top-r eigenvectors of C/2
};

// How the last curvature term of the Newton operator reads F_Y against Y.
enum class CurvatureVariant {
  transposed,    // (I - YY^T) delta (F_Y^T Y)
  untransposed,  // (I - YY^T) delta (Y^T F_Y)
};

enum class HessianModel {
  eliminated_scale,  // Hessian of E(Y, s(Y)) with s eliminated by its optimality condition
  fixed_scale,       // same but S frozen during the step (linear convergence)
  displayed,         // the F_YY formula verbatim, half the curvature of the others
};

struct IterationInfo {
  int iter;
  const Matrix& Y;  // iterate after the step
  const Vector& s;
  double E;
  double grad_norm;  // ||G|| at the iterate the step started from
  double orth_residual;
  int backend_iters;
  char step_kind;  // 'N' Newton, 'D' damped Newton, 'G' gradient fallback
};

struct SolverConfig {
  double eps = 1e-10;
  double delta = 1e-12;
  int max_newton_iters = 200;
  Backend backend = Backend::GMRES_O;
  double lin_tol = 1e-10;  // floor of the relative linear-solve tolerance
  // For n*r at or above this, solve to eta = min(0.1, ||G|| / (1 + |E|)) (floored at
  // lin_tol) instead of lin_tol. Loose far from a critical point, tightening in
  // proportion to ||G|| so the local rate stays quadratic. Below it every backend
  // solves tightly and follows the same path.
  long inexact_min_unknowns = 500;
  int lin_max_iters = 0;  // 0: n*r
  int gmres_restart = 0;  // 0: min(n*r, 200)
  std::uint64_t seed = 0;
  InitStrategy init = InitStrategy::least_squares;
  CurvatureVariant curvature = CurvatureVariant::transposed;
  HessianModel hessian = HessianModel::eliminated_scale;
  bool precondition = true;  // GMRES_O only: pair-rotation / column-block preconditioner
  bool globalize = true;  // Armijo + Levenberg shift; off = raw Newton with the -alpha*G fallback only
  double symmetry_tol = 1e-8;
  long cgl_max_unknowns = 4000;
  std::string trace_path;
  std::function<void(const IterationInfo&)> on_iteration;
  std::optional<Matrix> initial_guess;

  void validate() const {
    if (!(eps > 0) || !(delta > 0) || !(lin_tol > 0)) throw Error("SolverConfig: eps, delta and lin_tol must be positive");
    if (max_newton_iters < 1) throw Error("SolverConfig: max_newton_iters must be >= 1");
    if (lin_max_iters < 0 || gmres_restart < 0) throw Error("SolverConfig: iteration caps must be >= 1 (or 0 for default)");
  }
  int lin_iters_for(Eigen::Index n, Eigen::Index r) const { return lin_max_iters > 0 ? lin_max_iters : int(n * r); }
  // CGNR squares the condition number and loses conjugacy sooner; measured need is ~2nr.
  int normal_eq_iters_for(Eigen::Index n, Eigen::Index r) const {
    return lin_max_iters > 0 ? lin_max_iters : int(3 * n * r);
  }
  int restart_for(Eigen::Index n, Eigen::Index r) const {
    return gmres_restart > 0 ? gmres_restart : int(std::min<Eigen::Index>(n * r, 200));
  }
};

struct RankRSolution {
  FactorPair factors;
  Matrix X;
  double E = std::numeric_limits<double>::infinity();
  double orth_residual = 0;
  int newton_iters = 0;
  bool converged = false;
  Backend backend_used = Backend::GMRES_O;
  std::vector<double> per_iter_step_norms;
  // diagnostics
  int reorthonormalizations = 0;
  int damped_steps = 0;
  int fallback_steps = 0;
  long backend_iters = 0;
  std::vector<double> symmetry_defects;
  double final_grad_norm = 0;
  int clamped_columns = 0;
};

inline Matrix project_tangent(const Matrix& Y, const Matrix& Z) { return Z - Y * sym(Y.transpose() * Z); }

inline Matrix projected_gradient(const Matrix& F, const Matrix& Y) {
  if (F.rows() != Y.rows() || F.cols() != Y.cols()) throw DimensionError("projected_gradient: shape mismatch");
  return F - Y * (F.transpose() * Y);
}

// Linear operator of the Newton step, restricted to the tangent space at Y:
//   L(d) = P[ H(d) - Y skew(F^T d) - skew(d F^T) Y - 1/2 (I - YY^T) d Sigma ] + shift * d
// with H(d) = k (W - Y W^T Y), k = 1/2 for the displayed model and 1 otherwise.
class NewtonStepEquation {
 public:
  NewtonStepEquation(const ReducedProblem& p, const FactorPair& f, CurvatureVariant cv = CurvatureVariant::transposed,
                     HessianModel hm = HessianModel::eliminated_scale)
      : p_(p), Y_(f.Y), s_(f.s), model_(hm) {
    F_ = gradient_Y(p, f);
    G_ = projected_gradient(F_, Y_);
    Sigma_ = cv == CurvatureVariant::transposed ? Matrix(F_.transpose() * Y_) : Matrix(Y_.transpose() * F_);
    if (hm == HessianModel::eliminated_scale) coupling_ = scale_coupling(p, Y_, s_);
  }

  const Matrix& Y() const { return Y_; }
  const Vector& s() const { return s_; }
  const Matrix& F() const { return F_; }
  const Matrix& G() const { return G_; }
  Matrix rhs() const { return -G_; }
  double shift() const { return shift_; }
  void set_shift(double mu) { shift_ = mu; }

  Matrix project(const Matrix& Z) const { return project_tangent(Y_, Z); }

  Matrix apply(const Matrix& delta_in) const {
    const Matrix d = project(delta_in);
    Matrix L = hess(d) - Y_ * skew(F_.transpose() * d) - skew(d * F_.transpose()) * Y_ - 0.5 * outer_complement(d * Sigma_);
    return project(L) + shift_ * d;
  }

  Matrix adjoint(const Matrix& z_in) const {
    const Matrix z = project(z_in);
    Matrix L = hess_adjoint(z) - F_ * skew(Y_.transpose() * z) - skew(z * Y_.transpose()) * F_ -
               0.5 * outer_complement(z * Sigma_.transpose());
    return project(L) + shift_ * z;
  }

  // |<L d1, d2> - <d1, L d2>| / (||d1|| ||d2||) on two seeded tangent directions.
  double symmetry_defect(std::uint64_t seed = 17) const {
    SplitMix64 g(seed);
    const Matrix d1 = project(g.gaussian_matrix(Y_.rows(), Y_.cols()));
    const Matrix d2 = project(g.gaussian_matrix(Y_.rows(), Y_.cols()));
    const double n1 = d1.norm(), n2 = d2.norm();
    if (n1 == 0 || n2 == 0) return 0.0;
    return std::abs(krylov::inner(apply(d1), d2) - krylov::inner(d1, apply(d2))) / (n1 * n2);
  }

  // Rough operator scale for relative tests.
  double scale_estimate(std::uint64_t seed = 29) const {
    SplitMix64 g(seed);
    const Matrix d = project(g.gaussian_matrix(Y_.rows(), Y_.cols()));
    const double nd = d.norm();
    return nd > 0 ? apply(d).norm() / nd : 0.0;
  }

  // Column-major nr x nr matrix of L (zero on the normal complement of the tangent space).
  Matrix materialize() const {
    const Eigen::Index n = Y_.rows(), r = Y_.cols(), N = n * r;
    Matrix M(N, N);
    Matrix e = Matrix::Zero(n, r);
    for (Eigen::Index k = 0; k < N; ++k) {
      e(k % n, k / n) = 1.0;
      const Matrix col = apply(e);
      M.col(k) = Eigen::Map<const Vector>(col.data(), N);
      e(k % n, k / n) = 0.0;
    }
    return M;
  }

  // Approximate inverse of L + (I - P) for right preconditioning. It inverts two parts
  // of L exactly and drops the coupling between them: the curvature of rotating a
  // column pair (i, j) inside span(Y), and the block of column i in the normal space,
  //   (I - YY^T)(M_i - (F^T Y)_ii)(I - YY^T),  M_i = d F_i / d y_i.
  // Y sym(Y^T R) is passed through, where the augmented operator is the identity.
  Matrix precondition(const Matrix& R) const {
    if (!prec_ready_ || prec_shift_ != shift_) build_preconditioner();
    const Matrix Om = Y_.transpose() * R;
    const Matrix K = 0.5 * (Om - Om.transpose());
    Matrix out = Y_ * (0.5 * (Om + Om.transpose()) + K.cwiseQuotient(prec_pair_));
    const Matrix Z = R - Y_ * Om;
    for (Eigen::Index i = 0; i < Y_.cols(); ++i) {
      if (Z.col(i).norm() == 0.0) continue;
      Vector x = prec_blocks_[i].solve(Z.col(i));
      if (!x.allFinite()) x = Z.col(i);
      out.col(i) += x - Y_ * (Y_.transpose() * x);
    }
    return out;
  }

  Matrix materialize_projector() const {
    const Eigen::Index n = Y_.rows(), r = Y_.cols(), N = n * r;
    Matrix P(N, N);
    Matrix e = Matrix::Zero(n, r);
    for (Eigen::Index k = 0; k < N; ++k) {
      e(k % n, k / n) = 1.0;
      const Matrix col = project(e);
      P.col(k) = Eigen::Map<const Vector>(col.data(), N);
      e(k % n, k / n) = 0.0;
    }
    return P;
  }

 private:
  Matrix W(const Matrix& d) const {
    return model_ == HessianModel::eliminated_scale ? reduced_curvature_W(p_, Y_, s_, d, coupling_)
                                                    : curvature_W(p_, s_, d);
  }
  double hess_factor() const { return model_ == HessianModel::displayed ? 0.5 : 1.0; }
  Matrix hess(const Matrix& d) const {
    const Matrix w = W(d);
    return hess_factor() * (w - Y_ * w.transpose() * Y_);
  }
  Matrix hess_adjoint(const Matrix& z) const {
    return hess_factor() * (W(z) - W(Matrix(Y_ * z.transpose() * Y_)));
  }
  Matrix outer_complement(const Matrix& Z) const { return Z - Y_ * (Y_.transpose() * Z); }

  // d F_i / d y_i as a matrix, with the scale-elimination term when that model is on.
  Matrix column_curvature(Eigen::Index i) const {
    const double s2 = s_(i) * s_(i);
    Matrix M = 2 * (s2 * p_.A - p_.C + p_.B / s2);
    if (model_ == HessianModel::eliminated_scale && coupling_.w.size() > 0)
      M -= coupling_.w(i) * coupling_.K.col(i) * coupling_.K.col(i).transpose();
    return M;
  }

  void build_preconditioner() const {
    const Eigen::Index n = Y_.rows(), r = Y_.cols();
    const double k = hess_factor();
    const Matrix FtY = F_.transpose() * Y_;
    std::vector<Matrix> M(r);
    for (Eigen::Index i = 0; i < r; ++i) M[i] = column_curvature(i);
    // pair curvature y_j^T M_i y_j - y_i^T F_i + (i <-> j), plus the shift
    prec_pair_ = Matrix::Ones(r, r);
    double hmax = 0;
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = i + 1; j < r; ++j) {
        const double h = k * (Y_.col(j).dot(M[i] * Y_.col(j)) + Y_.col(i).dot(M[j] * Y_.col(i))) -
                         FtY(i, i) - FtY(j, j) + shift_;
        prec_pair_(i, j) = prec_pair_(j, i) = h;
        hmax = std::max(hmax, std::abs(h));
      }
    const double floor = 1e-8 * std::max(hmax, 1e-300);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < r; ++j)
        if (std::abs(prec_pair_(i, j)) < floor) prec_pair_(i, j) = prec_pair_(i, j) < 0 ? -floor : floor;
    const Matrix Pc = Matrix::Identity(n, n) - Y_ * Y_.transpose();
    prec_blocks_.clear();
    for (Eigen::Index i = 0; i < r; ++i) {
      Matrix blk = Pc * (k * M[i] + (shift_ - FtY(i, i)) * Matrix::Identity(n, n)) * Pc + Y_ * Y_.transpose();
      prec_blocks_.emplace_back(blk);
    }
    prec_shift_ = shift_;
    prec_ready_ = true;
  }

  const ReducedProblem& p_;
  Matrix Y_;
  Vector s_;
  HessianModel model_;
  Matrix F_, G_, Sigma_;
  ScaleCoupling coupling_;
  double shift_ = 0.0;
  mutable bool prec_ready_ = false;
  mutable double prec_shift_ = 0.0;
  mutable Matrix prec_pair_;
  mutable std::vector<Eigen::PartialPivLU<Matrix>> prec_blocks_;
};

struct LinearSolveReport {
  double residual = 0;
  int iterations = 0;
  bool used_normal_equations = false;
  double symmetry_defect = 0;
};

// Solves L(delta) = -G to ||L(delta) + G|| <= rtol * ||G||; rtol defaults to lin_tol.
inline Matrix solve_newton_equation(const NewtonStepEquation& eq, const SolverConfig& cfg,
                                    LinearSolveReport* report = nullptr, double rtol = 0.0) {
  const Matrix b = eq.rhs();
  const Eigen::Index n = b.rows(), r = b.cols();
  const double gnorm = b.norm();
  LinearSolveReport rep;
  if (gnorm == 0.0) {
    if (report) *report = rep;
    return Matrix::Zero(n, r);
  }
  const double tol = (rtol > 0 ? rtol : cfg.lin_tol) * gnorm;
  const int maxit = cfg.lin_iters_for(n, r);
  // L is zero on the normal complement of the tangent space. Krylov methods given
  // the bare L amplify roundoff into that null space once the tangent directions are
  // exhausted, so every backend solves L + (I - P) instead; for tangent right-hand
  // sides the solution is unchanged and its normal part is zero.
  auto op = [&](const Matrix& x) -> Matrix { return eq.apply(x) + (x - eq.project(x)); };
  auto adj = [&](const Matrix& x) -> Matrix { return eq.adjoint(x) + (x - eq.project(x)); };

  Matrix delta;
  switch (cfg.backend) {
    case Backend::CG_O: {
      rep.symmetry_defect = eq.symmetry_defect();
      const bool symmetric = rep.symmetry_defect <= cfg.symmetry_tol * std::max(1.0, eq.scale_estimate());
      rep.used_normal_equations = !symmetric;
      const int ne_maxit = cfg.normal_eq_iters_for(n, r);
      auto res = symmetric ? krylov::cg(op, b, tol, maxit) : krylov::cgnr(op, adj, b, tol, ne_maxit);
      if (symmetric && !res.converged) {
        // indefinite after all: plain CG broke down
        auto res2 = krylov::cgnr(op, adj, b, tol, ne_maxit);
        res2.iterations += res.iterations;
        res = std::move(res2);
        rep.used_normal_equations = true;
      }
      delta = std::move(res.x);
      rep.iterations = res.iterations;
      break;
    }
    case Backend::GMRES_O: {
      auto res = cfg.precondition
                     ? krylov::gmres(op, b, tol, maxit, cfg.restart_for(n, r),
                                     [&](const Matrix& x) -> Matrix { return eq.precondition(x); })
                     : krylov::gmres(op, b, tol, maxit, cfg.restart_for(n, r));
      delta = std::move(res.x);
      rep.iterations = res.iterations;
      break;
    }
    case Backend::CG_L: {
      const Eigen::Index N = n * r;
      if (N > cfg.cgl_max_unknowns)
        throw ResourceLimitError("cg-l: n*r = " + std::to_string(N) + " exceeds the materialization limit of " +
                                 std::to_string(cfg.cgl_max_unknowns) + " unknowns; use cg-o or gmres-o");
      const Matrix M = eq.materialize() + (Matrix::Identity(N, N) - eq.materialize_projector());
      const Vector x = M.partialPivLu().solve(Eigen::Map<const Vector>(b.data(), N));
      delta = Eigen::Map<const Matrix>(x.data(), n, r);
      rep.iterations = 1;
      break;
    }
  }
  delta = eq.project(delta);
  if (!delta.allFinite()) delta.setZero();
  rep.residual = (eq.apply(delta) - b).norm();
  if (report) *report = rep;
  if (!(rep.residual <= tol))
    throw NonconvergedLinearSolve(std::string(backend_name(cfg.backend)) + ": residual " + std::to_string(rep.residual) +
                                      " above tolerance " + std::to_string(tol),
                                  delta, rep.residual, rep.iterations);
  return delta;
}

// Y_bar = Y M + Q N with [M; N] = exp([[K, -R^T], [R, 0]]) [I; 0].
inline Matrix geodesic_step(const Matrix& Y, const Matrix& delta) {
  if (Y.rows() != delta.rows() || Y.cols() != delta.cols()) throw DimensionError("geodesic_step: shape mismatch");
  const Eigen::Index r = Y.cols();
  const Matrix K = Y.transpose() * delta;
  const CompactQR qr = compact_qr(delta - Y * K);
  Matrix blk = Matrix::Zero(2 * r, 2 * r);
  blk.topLeftCorner(r, r) = K;
  blk.topRightCorner(r, r) = -qr.R.transpose();
  blk.bottomLeftCorner(r, r) = qr.R;
  const Matrix ex = matrix_exp(blk);
  return Y * ex.topLeftCorner(r, r) + qr.Q * ex.bottomLeftCorner(r, r);
}

inline Matrix initial_Y(Eigen::Index n, Eigen::Index r, std::uint64_t seed) {
  if (r < 1 || r > n) throw DimensionError("initial_Y: need 1 <= r <= n");
  SplitMix64 g(seed);
  return compact_qr(g.gaussian_matrix(n, r)).Q;
}

inline Matrix top_eigenvectors(const Matrix& M, Eigen::Index r) {
  return spectral_decomposition(sym(M)).U.leftCols(r);
}

inline Matrix initial_Y(const ReducedProblem& p, Eigen::Index r, const SolverConfig& cfg) {
  const Eigen::Index n = p.n;
  if (r < 1 || r > n) throw DimensionError("initial_Y: need 1 <= r <= n");
  if (cfg.initial_guess) {
    if (cfg.initial_guess->rows() != n || cfg.initial_guess->cols() != r)
      throw DimensionError("initial_guess has the wrong shape");
    return compact_qr(*cfg.initial_guess).Q;
  }
  switch (cfg.init) {
    case InitStrategy::gaussian: return initial_Y(n, r, cfg.seed);
    case InitStrategy::c_eigen: return top_eigenvectors(0.5 * p.C, r);
    case InitStrategy::least_squares: {
      // unconstrained least-squares X, then its best rank-r PSD part
      const SpectralDecomposition sa = spectral_decomposition(p.A);
      const int rk = numerical_rank(sa.eigenvalues);
      if (rk == 0) return initial_Y(n, r, cfg.seed);
      const Matrix Ur = sa.U.leftCols(rk);
      const Matrix Apinv = Ur * sa.eigenvalues.head(rk).cwiseInverse().asDiagonal() * Ur.transpose();
      return top_eigenvectors(Apinv * p.DtT, r);
    }
  }
  return initial_Y(n, r, cfg.seed);
}

namespace detail {

struct Trace {
  std::ofstream out;
  explicit Trace(const std::string& path) {
    if (path.empty()) return;
    out.open(path);
    if (!out) throw IoError("cannot open trace file " + path);
    out << "iter,E,grad_norm,orth_residual,backend_iters\n" << std::setprecision(17);
  }
  void row(int it, double E, double g, double orth, int bits) {
    if (out.is_open()) out << it << ',' << E << ',' << g << ',' << orth << ',' << bits << '\n';
  }
};

inline double tangent_E(const ReducedProblem& p, const Matrix& Y) {
  return objective_value(p, {Y, optimal_scales(p, Y, ScaleMode::clamped)});
}

// Newton is attracted to saddles as much as to minima. The common saddle here has two
// columns mixed across eigenvectors with close scales: E is a sum over columns, so
// rotating that pair inside its plane lowers E while the span stays put. Scan every
// pair on a grid of angles and apply the best rotation if it gains more than tol.
inline bool escape_pair_saddle(const ReducedProblem& p, Matrix& Y, double tol) {
  const Eigen::Index r = Y.cols();
  double best_gain = tol, best_th = 0;
  Eigen::Index bi = -1, bj = -1;
  Matrix Y2(Y.rows(), 2);
  const double pi = std::acos(-1.0);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = i + 1; j < r; ++j) {
      Y2.col(0) = Y.col(i);
      Y2.col(1) = Y.col(j);
      const double e0 = tangent_E(p, Y2);
      for (int q = -7; q <= 8; ++q) {
        if (q == 0) continue;
        const double th = q * pi / 16, c = std::cos(th), sn = std::sin(th);
        Y2.col(0) = c * Y.col(i) + sn * Y.col(j);
        Y2.col(1) = -sn * Y.col(i) + c * Y.col(j);
        const double gain = e0 - tangent_E(p, Y2);
        if (gain > best_gain) {
          best_gain = gain;
          best_th = th;
          bi = i;
          bj = j;
        }
      }
    }
  if (bi < 0) return false;
  const Vector yi = Y.col(bi), yj = Y.col(bj);
  Y.col(bi) = std::cos(best_th) * yi + std::sin(best_th) * yj;
  Y.col(bj) = -std::sin(best_th) * yi + std::cos(best_th) * yj;
  return true;
}

}  // namespace detail

inline RankRSolution solve_rank_r(const ReducedProblem& p, Eigen::Index r, const SolverConfig& cfg) {
  cfg.validate();
  if (r < 1 || r > p.n) throw DimensionError("solve_rank_r: need 1 <= r <= n, got r = " + std::to_string(r));
  if (p.n > p.m) throw DimensionError("solve_rank_r: need n <= m");

  RankRSolution sol;
  sol.backend_used = cfg.backend;
  detail::Trace trace(cfg.trace_path);
  Matrix Y = initial_Y(p, r, cfg);
  double lambda = 0.0;
  double lambda_mem = 0.0;  // shift that worked last time, where escalation restarts
  const double eps = std::numeric_limits<double>::epsilon();
  int stalled = 0;  // consecutive damped/fallback steps with no decrease of E beyond roundoff
  int escapes = 0;
  // At an apparent stop, try to leave a pair-rotation saddle before believing it.
  auto escaped = [&](double scale) {
    if (!cfg.globalize || escapes >= 2 * r) return false;
    if (!detail::escape_pair_saddle(p, Y, 1e-10 * (1.0 + scale))) return false;
    ++escapes;
    lambda_mem = 0.0;
    stalled = 0;
    return true;
  };

  for (int k = 0; k < cfg.max_newton_iters; ++k) {
    const Vector s = optimal_scales(p, Y, ScaleMode::clamped);
    const FactorPair f{Y, s};
    const double e0 = objective_value(p, f);
    if (!std::isfinite(e0)) throw NonFiniteValue("solve_rank_r: E became non-finite at iteration " + std::to_string(k));
    const double slack = 64 * eps * objective_scale(p, f);

    NewtonStepEquation eq(p, f, cfg.curvature, cfg.hessian);
    const Matrix& G = eq.G();
    const double gnorm = G.norm();
    const Matrix gradT = eq.project(eq.F());  // Euclidean gradient on the tangent space

    // Gradient already at the roundoff level of E's terms. Without this, near-equal
    // scales (a nearly flat rotation inside an eigenspace of X) let roundoff-driven
    // Newton steps wander above the step tolerance forever while X stays put.
    if (gnorm <= slack) {
      if (escaped(objective_scale(p, f))) continue;
      sol.converged = true;
      break;
    }
    // close to a critical point the undamped step is the right one
    if (gnorm <= 1e-8 * (1.0 + std::abs(e0))) lambda_mem = 0.0;
    const double stop_tol = cfg.eps * Y.norm() + cfg.delta;
    const double rtol = long(p.n * r) >= cfg.inexact_min_unknowns ? std::max(cfg.lin_tol, std::min(0.1, gnorm / (1.0 + std::abs(e0)))) : cfg.lin_tol;

    Matrix Ynew;
    char kind = 'G';
    int bits = 0;
    bool accepted = false;

    // Undamped Newton is tried first every time, so damping never outlives its need
    // and the local rate stays quadratic.
    lambda = 0.0;
    for (int attempt = 0; attempt < (cfg.globalize ? 12 : 1) && !accepted; ++attempt) {
      eq.set_shift(lambda * gnorm);
      Matrix d;
      LinearSolveReport rep;
      try {
        if (lambda == 0.0 && lambda_mem > 0.0 && cfg.globalize) {
          // still in the damped phase: the undamped trial gets one restart cycle
          SolverConfig trial = cfg;
          trial.lin_max_iters = std::min(cfg.lin_iters_for(p.n, r), cfg.restart_for(p.n, r));
          d = solve_newton_equation(eq, trial, &rep, rtol);
        } else {
          d = solve_newton_equation(eq, cfg, &rep, rtol);
        }
      } catch (const NonconvergedLinearSolve& ex) {
        // inexact direction still usable if it reduced the residual meaningfully
        rep.iterations = ex.iterations;
        if (ex.residual <= 0.5 * gnorm) d = ex.best_delta;
      }
      bits += rep.iterations;
      if (rep.symmetry_defect > 0) sol.symmetry_defects.push_back(rep.symmetry_defect);
      if (d.size() != 0) {
        const double slope = krylov::inner(gradT, d);
        if (!cfg.globalize || (lambda == 0.0 && d.norm() <= stop_tol)) {
          // raw mode, or a full Newton step already below the stopping threshold
          Ynew = geodesic_step(Y, d);
          accepted = true;
        } else {
          // Near a critical point slope and E differences are both roundoff; a step
          // that does not raise E beyond the slack is then as good as a descent step.
          Matrix Yt = geodesic_step(Y, d);
          if (orth_residual(Yt) > 1e-8) {
            Yt = compact_qr(Yt).Q;
            ++sol.reorthonormalizations;
          }
          const double et = detail::tangent_E(p, Yt);
          // away from roundoff, a non-descent direction heads for a saddle even when E drops
          const bool descent = slope < 0.0 || gnorm <= 1e-8 * (1.0 + std::abs(e0));
          if (descent && et <= e0 + 1e-4 * std::min(slope, 0.0) + slack) {
            Ynew = std::move(Yt);
            accepted = true;
          }
        }
      }
      if (accepted) {
        kind = lambda == 0.0 ? 'N' : 'D';
      } else {
        lambda = lambda == 0.0 ? std::max(lambda_mem, 1e-2) : 4 * lambda;
      }
    }

    if (accepted) {
      lambda_mem = (lambda > 0.0 ? lambda : lambda_mem) / 4;
      if (lambda_mem < 1e-6) lambda_mem = 0.0;
      if (kind == 'D') ++sol.damped_steps;
    } else {
      // steepest-descent fallback with halving
      ++sol.fallback_steps;
      const double gslope = -krylov::inner(gradT, G);
      double t = 1.0;
      bool ok = false;
      for (int h = 0; h < 30 && !ok; ++h, t *= 0.5) {
        Ynew = geodesic_step(Y, -t * G);
        if (orth_residual(Ynew) > 1e-8) {
          Ynew = compact_qr(Ynew).Q;
          ++sol.reorthonormalizations;
        }
        ok = detail::tangent_E(p, Ynew) <= e0 + 1e-4 * t * gslope;
      }
      // Not even a tiny gradient step lowers E. Stationary to working precision if the
      // gradient is small against the size of E's terms, otherwise stuck.
      if (!ok) {
        sol.converged = gnorm <= 1e-6 * (1.0 + objective_scale(p, f));
        sol.newton_iters = k + 1;
        trace.row(k, e0, gnorm, orth_residual(Y), bits);
        break;
      }
    }
    if (orth_residual(Ynew) > 1e-8) {
      Ynew = compact_qr(Ynew).Q;
      ++sol.reorthonormalizations;
    }

    const double step = (Ynew - Y).norm();
    stalled = (kind == 'N' || detail::tangent_E(p, Ynew) < e0 - slack) ? 0 : stalled + 1;
    Y = std::move(Ynew);
    sol.per_iter_step_norms.push_back(step);
    sol.backend_iters += bits;
    sol.newton_iters = k + 1;
    trace.row(k, e0, gnorm, orth_residual(Y), bits);
    if (cfg.on_iteration) {
      const Vector sn = optimal_scales(p, Y, ScaleMode::clamped);
      cfg.on_iteration({k, Y, sn, objective_value(p, {Y, sn}), gnorm, orth_residual(Y), bits, kind});
    }
    // A heavily damped or gradient step is short because of the damping, not
    // because Y is near a critical point, so only undamped steps may stop the loop.
    if (step <= cfg.eps * Y.norm() + cfg.delta && (kind == 'N' || !cfg.globalize)) {
      if (escaped(objective_scale(p, f))) continue;
      sol.converged = true;
      break;
    }
    if (cfg.globalize && stalled >= 10) {
      if (escaped(objective_scale(p, f))) continue;
      sol.converged = gnorm <= 1e-6 * (1.0 + objective_scale(p, f));
      break;
    }
  }

  // drift below the in-loop threshold is still worth removing from the result
  if (orth_residual(Y) > 1e-12) {
    Y = compact_qr(Y).Q;
    ++sol.reorthonormalizations;
  }
  const Vector s = optimal_scales(p, Y, ScaleMode::clamped);
  sol.factors = {Y, s};
  sol.X = factors_to_X(Y, s);
  sol.E = objective_value(p, sol.factors);
  sol.orth_residual = orth_residual(Y);
  sol.final_grad_norm = projected_gradient(gradient_Y(p, sol.factors), Y).norm();
  // A point where some scale sits on the clamp is stationary only for the clamped
  // surrogate; the true infimum there lies on the boundary s -> 0 or s -> infinity.
  sol.clamped_columns = clamped_columns(p, Y);
  if (sol.clamped_columns > 0) sol.converged = false;
  if (!std::isfinite(sol.E)) throw NonFiniteValue("solve_rank_r: final E is non-finite");
  return sol;
}

inline RankRSolution solve_rank_r(const ProblemInstance& inst, Eigen::Index r, const SolverConfig& cfg) {
  return solve_rank_r(reduce(inst), r, cfg);
}

}  // namespace psdtls
