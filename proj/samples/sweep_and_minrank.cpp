// Rank sweep and minimum-rank search on a random 20 x 8 instance.
#include <iostream>

#include <psdtls/psdtls.hpp>

int main() {
  using namespace psdtls;
  bench::GeneratorSpec spec;
  spec.m = 20;
  spec.n = 8;
  spec.seed = 3;
  const ProblemInstance inst = bench::generate_instance(spec, 0);

  const PsdtlsSolution all = solve_psdtls(inst);
  for (std::size_t r = 0; r < all.per_rank_E.size(); ++r)
    std::cout << "r = " << r + 1 << "  E = " << all.per_rank_E[r] << (all.per_rank_status[r] ? "" : "  (not converged)")
              << "\n";
  std::cout << "best rank " << all.best_rank << ", E = " << all.best.E << "\n";

  const double bound = 1.5 * all.per_rank_E[1];
  const MinRankResult mr = solve_min_rank(inst, bound);
  std::cout << "min rank for e = " << bound << ": " << mr.rank << (mr.satisfied ? " (satisfied)" : " (not satisfied)")
            << "\n";
}
