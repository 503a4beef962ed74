#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "objective.hpp"
#include "qep.hpp"
#include "stiefel_newton.hpp"

namespace psdtls {

struct DriverConfig {
  SolverConfig solver;
  bool rank1_qep = true;    // r = 1 through the QEP route, Newton on failure
  bool early_exit = false;  // stop the sweep once E < eps_sweep
  double eps_sweep = 1e-10;
  int jobs = 1;             // ranks solved concurrently; merged by rank index
};

struct PsdtlsSolution {
  RankRSolution best;
  int best_rank = 0;
  std::vector<double> per_rank_E;       // +inf where the rank failed or was skipped
  std::vector<bool> per_rank_status;    // converged flags
  std::vector<double> per_rank_residual;  // ||D X_r - T||_F
  std::vector<std::string> per_rank_diag;
};

struct MinRankResult {
  int rank = 0;
  RankRSolution solution;
  bool satisfied = false;
  double e = 0;
  std::vector<double> per_rank_E;
};

struct CorrelationInstance {
  Matrix C;  // anchor, n x n
  Matrix P;  // m x n, m may be 0
  Matrix Q;  // m x n
};

struct CorrelationResult {
  PsdtlsSolution solution;
  double Std = 0;
  Matrix deltaT;
};

// ||D X - T||_F^2 = tr(X A X) - tr(X C) + tr(B), from the reduced matrices.
inline double residual_norm(const ReducedProblem& p, const Matrix& X) {
  const double v = (X * p.A * X).trace() - (X * p.C).trace() + p.B.trace();
  return std::sqrt(std::max(v, 0.0));
}

inline RankRSolution solve_one_rank(const ReducedProblem& p, int r, const DriverConfig& cfg, std::string* diag = nullptr) {
  SolverConfig sc = cfg.solver;
  sc.trace_path.clear();
  if (r == 1 && cfg.rank1_qep) {
    try {
      QepOptions qo;
      qo.newton = sc;
      return solve_rank1_qep(p, qo);
    } catch (const SingularA& e) {
      if (diag) *diag = std::string("qep skipped: ") + e.what() + "; ";
    } catch (const NoRealCandidate& e) {
      if (diag) *diag = std::string("qep skipped: ") + e.what() + "; ";
    }
  }
  return solve_rank_r(p, r, sc);
}

namespace detail {

struct RankOutcome {
  bool ran = false;
  bool ok = false;
  RankRSolution sol;
  std::string diag;
};

inline RankOutcome run_rank(const ReducedProblem& p, int r, const DriverConfig& cfg) {
  RankOutcome o;
  o.ran = true;
  try {
    o.sol = solve_one_rank(p, r, cfg, &o.diag);
    o.ok = true;
    o.diag += o.sol.converged ? "converged" : "not converged";
  } catch (const std::exception& e) {
    o.diag += std::string("failed: ") + e.what();
  }
  return o;
}

inline std::vector<RankOutcome> run_ranks(const ReducedProblem& p, int rmax, const DriverConfig& cfg,
                                          bool stop_when_below, double threshold) {
  std::vector<RankOutcome> out(rmax);
  const int jobs = std::max(1, cfg.jobs);
  if (jobs == 1 || stop_when_below) {
    for (int r = 1; r <= rmax; ++r) {
      out[r - 1] = run_rank(p, r, cfg);
      if (stop_when_below && out[r - 1].ok && out[r - 1].sol.E < threshold) break;
    }
    return out;
  }
  std::atomic<int> next{1};
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, rmax); ++t)
    pool.emplace_back([&] {
      for (int r = next++; r <= rmax; r = next++) out[r - 1] = run_rank(p, r, cfg);
    });
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace detail

// Rank sweep r = 1..n. The argmin of E runs over converged ranks. E values within
// roundoff of the minimum count as ties: at an exact fit every subset of X's
// eigenvectors also has E = 0, and the tie goes to the smaller ||D X - T||.
inline PsdtlsSolution solve_psdtls(const ReducedProblem& p, const DriverConfig& cfg = {}) {
  if (p.n < 1 || p.m < p.n) throw DimensionError("solve_psdtls: need m >= n >= 1");
  const int n = static_cast<int>(p.n);
  auto outcomes = detail::run_ranks(p, n, cfg, cfg.early_exit, cfg.eps_sweep);

  PsdtlsSolution res;
  res.per_rank_E.assign(n, std::numeric_limits<double>::infinity());
  res.per_rank_status.assign(n, false);
  res.per_rank_residual.assign(n, std::numeric_limits<double>::infinity());
  res.per_rank_diag.assign(n, "skipped");
  double emin = std::numeric_limits<double>::infinity();
  for (int r = 1; r <= n; ++r) {
    auto& o = outcomes[r - 1];
    if (!o.ran) continue;
    res.per_rank_diag[r - 1] = o.diag;
    if (!o.ok) continue;
    res.per_rank_E[r - 1] = o.sol.E;
    res.per_rank_status[r - 1] = o.sol.converged;
    res.per_rank_residual[r - 1] = residual_norm(p, o.sol.X);
    if (o.sol.converged) emin = std::min(emin, o.sol.E);
  }
  if (!std::isfinite(emin)) throw AllRanksFailed("solve_psdtls: no rank converged", res.per_rank_diag);

  const double tie = 1e-10 * (1.0 + p.A.trace() + p.B.trace());
  int pick = -1;
  for (int r = 1; r <= n; ++r) {
    if (!res.per_rank_status[r - 1] || res.per_rank_E[r - 1] > emin + tie) continue;
    if (pick < 0 || res.per_rank_residual[r - 1] < res.per_rank_residual[pick - 1] - tie) pick = r;
  }
  res.best_rank = pick;
  res.best = std::move(outcomes[pick - 1].sol);
  return res;
}

inline PsdtlsSolution solve_psdtls(const ProblemInstance& inst, const DriverConfig& cfg = {}) {
  return solve_psdtls(reduce(inst), cfg);
}

// Smallest r with E < e; otherwise the r with the smallest E, unsatisfied.
inline MinRankResult solve_min_rank(const ReducedProblem& p, double e, const DriverConfig& cfg = {}) {
  if (!(e > 0)) throw Error("solve_min_rank: the error bound e must be positive");
  const int n = static_cast<int>(p.n);
  auto outcomes = detail::run_ranks(p, n, cfg, true, e);
  MinRankResult res;
  res.e = e;
  res.per_rank_E.assign(n, std::numeric_limits<double>::infinity());
  int argmin = -1;
  std::vector<std::string> diag(n, "skipped");
  for (int r = 1; r <= n; ++r) {
    auto& o = outcomes[r - 1];
    if (!o.ran) continue;
    diag[r - 1] = o.diag;
    if (!o.ok) continue;
    res.per_rank_E[r - 1] = o.sol.E;
    if (o.sol.E < e) {
      res.rank = r;
      res.satisfied = true;
      res.solution = std::move(o.sol);
      return res;
    }
    if (argmin < 0 || o.sol.E < res.per_rank_E[argmin - 1]) argmin = r;
  }
  if (argmin < 0) throw AllRanksFailed("solve_min_rank: every rank failed", diag);
  res.rank = argmin;
  res.solution = std::move(outcomes[argmin - 1].sol);
  return res;
}

inline MinRankResult solve_min_rank(const ProblemInstance& inst, double e, const DriverConfig& cfg = {}) {
  return solve_min_rank(reduce(inst), e, cfg);
}

// Sample standard deviation (divisor N - 1) over all entries.
inline double entrywise_std(const Matrix& M) {
  const Eigen::Index N = M.size();
  if (N < 2) return 0.0;
  const double mean = M.mean();
  return std::sqrt((M.array() - mean).square().sum() / double(N - 1));
}

// D = [I; P], T = [C; Q].
inline CorrelationResult solve_correlation(const CorrelationInstance& ci, const DriverConfig& cfg = {}) {
  const Eigen::Index n = ci.C.rows();
  if (ci.C.cols() != n) throw DimensionError("solve_correlation: C must be square");
  if (ci.P.rows() != ci.Q.rows() || ci.P.cols() != n || ci.Q.cols() != n)
    throw DimensionError("solve_correlation: P and Q must both be m x n");
  const Eigen::Index m = ci.P.rows();
  ProblemInstance inst{Matrix(n + m, n), Matrix(n + m, n)};
  inst.D.topRows(n).setIdentity();
  inst.D.bottomRows(m) = ci.P;
  inst.T.topRows(n) = ci.C;
  inst.T.bottomRows(m) = ci.Q;
  CorrelationResult out;
  out.solution = solve_psdtls(inst, cfg);
  out.deltaT = inst.D * out.solution.best.X - inst.T;
  out.Std = entrywise_std(out.deltaT);
  return out;
}

}  // namespace psdtls
