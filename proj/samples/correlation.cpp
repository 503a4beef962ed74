// Correlation-type fit: X close to an anchor C while P X ~ Q.
#include <iostream>

#include <psdtls/psdtls.hpp>

int main() {
  using namespace psdtls;
  SplitMix64 g(5);
  const int n = 6, m = 10;
  const Matrix R = g.uniform_matrix(n, n);
  CorrelationInstance ci;
  ci.C = sym(R);  // indefinite in general
  ci.P = g.uniform_matrix(m, n);
  ci.Q = g.uniform_matrix(m, n);
  const CorrelationResult res = solve_correlation(ci);
  const auto ev = spectral_decomposition(res.solution.best.X).eigenvalues;
  std::cout << "rank " << res.solution.best_rank << ", E = " << res.solution.best.E << ", Std = " << res.Std
            << ", smallest eigenvalue of X = " << ev(ev.size() - 1) << "\n";
}
