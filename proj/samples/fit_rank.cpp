// Recover a rank-3 PSD X from an exact-fit pair (D, D X), then from a noisy copy.
#include <iostream>

#include <psdtls/psdtls.hpp>

int main() {
  using namespace psdtls;
  SplitMix64 g(7);
  const Matrix D = g.uniform_matrix(40, 12);
  const Matrix Q = compact_qr(g.gaussian_matrix(12, 3)).Q;
  const Matrix Xtrue = Q * Vector::LinSpaced(3, 2.0, 0.5).asDiagonal() * Q.transpose();

  SolverConfig cfg;
  cfg.backend = Backend::GMRES_O;
  auto sol = solve_rank_r(ProblemInstance{D, D * Xtrue}, 3, cfg);
  std::cout << "exact fit:  E = " << sol.E << ", |X - X*|/|X*| = " << (sol.X - Xtrue).norm() / Xtrue.norm()
            << ", iterations = " << sol.newton_iters << "\n";

  const Matrix T = D * Xtrue + 1e-2 * g.gaussian_matrix(40, 12);
  sol = solve_rank_r(ProblemInstance{D, T}, 3, cfg);
  std::cout << "noisy data: E = " << sol.E << ", |X - X*|/|X*| = " << (sol.X - Xtrue).norm() / Xtrue.norm()
            << ", iterations = " << sol.newton_iters << ", converged = " << sol.converged << "\n";
}
