// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "oracles.hpp"

using namespace psdtls;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  bool pass = o.pass;
  std::ostringstream tail;
  tail << std::setprecision(3) << secs << " s";
  if (limit_s > 0) {
    tail << " (limit " << limit_s << " s)";
    if (secs >= limit_s) pass = false;
  }
  if (!pass) ++failures;
  std::cout << "criterion " << std::setw(2) << id << ": " << (pass ? "PASS" : "FAIL") << "  " << title << "; " << o.detail
            << "; " << tail.str() << std::endl;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// least-squares slope of y on x
double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my), sxx += (x[i] - mx) * (x[i] - mx);
  return sxy / sxx;
}

FactorPair random_factors(SplitMix64& g, Eigen::Index n, Eigen::Index r) {
  FactorPair f{oracle::random_orthonormal(n, r, g), Vector(r)};
  for (Eigen::Index i = 0; i < r; ++i) f.s(i) = g.uniform(0.5, 2.0);
  return f;
}

Outcome c1_gradient() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    SplitMix64 g(1000 + seed);
    const Eigen::Index n = 2 + seed % 9, r = 1 + seed % std::min<Eigen::Index>(4, n), m = n + 5;
    const auto p = reduce({g.uniform_matrix(m, n), g.uniform_matrix(m, n)});
    const FactorPair f = random_factors(g, n, r);
    const Matrix F = gradient_Y(p, f);
    const Matrix fd = oracle::fd_gradient([&](const Matrix& Y) { return objective_value(p, {Y, f.s}); }, f.Y, 1e-5);
    worst = std::max(worst, (F - fd).cwiseAbs().maxCoeff() / (1 + F.norm()));
  }
  return {worst <= 1e-6, "max |F_Y - FD| / (1 + ||F_Y||) = " + fmt(worst) + " over 50 cases (bound 1e-6)"};
}

Outcome c2_scales() {
  int bad = 0;
  double worst = -1e300;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 g(2000 + seed);
    const Eigen::Index n = 5;
    const Matrix Ma = g.gaussian_matrix(n, n), Mb = g.gaussian_matrix(n, n);
    ReducedProblem p;
    p.A = Ma * Ma.transpose() + 0.01 * Matrix::Identity(n, n);
    p.B = Mb * Mb.transpose() + 0.01 * Matrix::Identity(n, n);
    p.n = p.m = n;
    const Matrix y = oracle::random_orthonormal(n, 1, g);
    const double a = y.col(0).dot(p.A * y.col(0)), b = y.col(0).dot(p.B * y.col(0));
    const double s = optimal_scales(p, y)(0);
    const double phi = s * s * a + b / (s * s);
    const double grid = oracle::grid_min_phi(a, b);
    worst = std::max(worst, (phi - grid) / grid);
    if (phi > grid * (1 + 1e-14)) ++bad;
  }
  return {bad == 0, std::to_string(bad) + "/100 cases where a grid point beat s; worst (phi(s) - grid min) / grid min = " +
                        fmt(worst)};
}

Outcome c3_exact_fit() {
  int ok = 0, total = 0;
  double worst_E = 0, worst_X = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::Index r = std::array<Eigen::Index, 3>{1, 3, 6}[seed % 3];
    const auto ef = oracle::exact_fit(40, 12, r, 3000 + seed);
    const auto p = reduce({ef.D, ef.T});
    for (Backend b : {Backend::CG_O, Backend::GMRES_O, Backend::CG_L}) {
      SolverConfig c;
      c.backend = b;
      const auto sol = solve_rank_r(p, r, c);
      const double dx = (sol.X - ef.Xstar).norm() / ef.Xstar.norm();
      worst_E = std::max(worst_E, sol.E);
      worst_X = std::max(worst_X, dx);
      ++total;
      if (sol.E <= 1e-8 && dx <= 1e-6) ++ok;
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " (instance, backend) runs recovered X*; max E = " +
                           fmt(worst_E) + ", max ||X - X*|| / ||X*|| = " + fmt(worst_X)};
}

Outcome c4_orthogonality() {
  std::vector<double> small;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SolverConfig c;
    c.backend = Backend::GMRES_O;
    small.push_back(solve_rank_r(oracle::random_instance(20, 10, 4000 + seed), 5, c).orth_residual);
  }
  SolverConfig c;
  c.backend = Backend::GMRES_O;
  const auto big = solve_rank_r(oracle::random_instance(100, 50, 4100), 50, c);
  const double med = median(small);
  return {med <= 1e-6 && big.orth_residual <= 1e-3,
          "20x10 r=5 median orth = " + fmt(med) + " (bound 1e-6); 100x50 r=50 orth = " + fmt(big.orth_residual) +
              " (bound 1e-3, converged=" + std::to_string(big.converged) + ", " + std::to_string(big.newton_iters) +
              " iterations)"};
}

Outcome c5_quadratic() {
  // Same instances as criterion 3. The default least-squares start hits X* at once,
  // so each run starts from Y* perturbed by 5% Gaussian noise to expose the tail.
  const double floor = 1e-11;  // below this the subspace error is roundoff
  int good = 0;
  std::vector<double> slopes;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::Index r = std::array<Eigen::Index, 3>{1, 3, 6}[seed % 3];
    const auto ef = oracle::exact_fit(40, 12, r, 3000 + seed);
    SplitMix64 g(5000 + seed);
    SolverConfig c;
    c.initial_guess = compact_qr(ef.Ystar + 0.05 * g.gaussian_matrix(12, r)).Q;
    std::vector<double> err{oracle::subspace_distance(*c.initial_guess, ef.Ystar)};
    c.on_iteration = [&](const IterationInfo& it) { err.push_back(oracle::subspace_distance(it.Y, ef.Ystar)); };
    solve_rank_r(ProblemInstance{ef.D, ef.T}, r, c);
    while (!err.empty() && err.back() < floor) err.pop_back();
    if (err.size() < 4) {
      slopes.push_back(0);
      continue;
    }
    std::vector<double> x, y;
    for (std::size_t k = err.size() - 4; k + 1 < err.size(); ++k) {
      x.push_back(std::log(err[k]));
      y.push_back(std::log(err[k + 1]));
    }
    const double sl = fit_slope(x, y);
    slopes.push_back(sl);
    if (sl >= 1.8) ++good;
  }
  return {good >= 16, std::to_string(good) + "/20 seeds with tail slope >= 1.8 (need 16); median slope " +
                          fmt(median(slopes))};
}

Outcome c6_backends() {
  int all_conv = 0, agree = 0;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Eigen::Index n = 4 + seed % 13, m = 2 * n, r = std::max<Eigen::Index>(1, n / 2);
    const auto p = reduce(oracle::random_instance(m, n, 6000 + seed));
    std::vector<RankRSolution> sols;
    for (Backend b : {Backend::CG_O, Backend::GMRES_O, Backend::CG_L}) {
      SolverConfig c;
      c.backend = b;
      sols.push_back(solve_rank_r(p, r, c));
    }
    if (!(sols[0].converged && sols[1].converged && sols[2].converged)) continue;
    ++all_conv;
    double d = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) d = std::max(d, (sols[i].X - sols[j].X).norm());
    worst = std::max(worst, d);
    if (d <= 1e-6) ++agree;
  }
  // refusal at n*r > 4000 (n = 80, r = 51 gives 4080)
  bool refused = false;
  double refuse_s = 0;
  {
    const auto p = reduce(oracle::random_instance(100, 80, 6100));
    SolverConfig c;
    c.backend = Backend::CG_L;
    const auto t0 = Clock::now();
    try {
      solve_rank_r(p, 51, c);
    } catch (const ResourceLimitError&) {
      refused = true;
    }
    refuse_s = std::chrono::duration<double>(Clock::now() - t0).count();
  }
  const bool pass = all_conv >= 10 && agree == all_conv && refused && refuse_s < 5;
  return {pass, std::to_string(agree) + "/" + std::to_string(all_conv) + " all-converged instances agree (max pairwise " +
                    fmt(worst) + ", of 20, need >= 10 comparable); cg-l refusal at n*r=4080: " +
                    (refused ? "yes" : "no") + " after " + fmt(refuse_s) + " s"};
}

Outcome c7_qep() {
  int ok = 0;
  double worst_res = 0, worst_gap = -1e300;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = reduce(oracle::random_instance(20, 5, 7000 + seed));
    QepReport rep;
    const auto q = solve_rank1_qep(p, {}, &rep);
    const auto nw = solve_rank_r(p, 1, SolverConfig{});
    double res = 0;
    for (const auto& ch : rep.candidates) res = std::max(res, std::max(ch.residual_u, ch.residual_v) / ch.residual_scale);
    const double gap = (q.E - nw.E) / (1 + std::abs(nw.E));
    worst_res = std::max(worst_res, res);
    worst_gap = std::max(worst_gap, gap);
    if (res <= 1e-7 && gap <= 1e-6) ++ok;
  }
  return {ok == 20, std::to_string(ok) + "/20; max scaled KKT residual " + fmt(worst_res) +
                        ", max (E_qep - E_newton) / (1 + |E|) = " + fmt(worst_gap)};
}

Outcome c8_min_rank() {
  int ok = 0, total = 0;
  std::string ranks;
  for (Eigen::Index rstar : {2, 5}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ++total;
      // exact fit plus small noise, so the rank-r* E is positive and 10x of it is a usable bound
      const auto ef = oracle::exact_fit(30, 8, rstar, 8000 + 10 * rstar + seed);
      SplitMix64 g(8100 + seed);
      const auto p = reduce({ef.D, ef.T + 1e-3 * g.gaussian_matrix(30, 8)});
      const DriverConfig cfg;
      const double Er = solve_one_rank(p, int(rstar), cfg).E;
      bool good = Er > 0;
      int prev = 1 << 30;
      ranks += (ranks.empty() ? "" : " | ") + std::string("r*=") + std::to_string(rstar) + ":";
      for (double mult : {10.0, 30.0, 100.0, 1e3, 1e4}) {
        const auto res = solve_min_rank(p, mult * Er, cfg);
        ranks += " " + std::to_string(res.rank);
        if (mult == 10.0 && !(res.satisfied && res.rank <= rstar)) good = false;
        if (res.rank > prev) good = false;
        prev = res.rank;
      }
      if (good) ++ok;
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " instances; ranks for e = {10,30,100,1e3,1e4} x E(r*): " + ranks};
}

Outcome c9_correlation() {
  std::string why;
  bool pass = true;
  {
    const Matrix I = Matrix::Identity(4, 4);
    const auto res = solve_correlation({I, I, I});
    const double d = (res.solution.best.X - I).norm();
    if (!(d <= 1e-10 && res.Std <= 1e-10)) pass = false;
    why += "identity fixture ||X - I|| = " + fmt(d) + ", Std = " + fmt(res.Std);
  }
  {
    SplitMix64 g(9000);
    const Matrix M = g.gaussian_matrix(5, 5);
    const Matrix C = M * M.transpose() + Matrix::Identity(5, 5);
    const auto res = solve_correlation({C, Matrix(0, 5), Matrix(0, 5)});
    if (!(res.solution.best.E <= 1e-8 && res.Std <= 1e-9)) pass = false;
    why += "; anchor-only E = " + fmt(res.solution.best.E) + ", Std = " + fmt(res.Std);
  }
  int ok = 0;
  double worst_psd = 0, worst_std = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SplitMix64 g(9100 + seed);
    const Matrix C0 = g.uniform_matrix(10, 10);
    const CorrelationInstance ci{0.5 * (C0 + C0.transpose()), g.uniform_matrix(20, 10), g.uniform_matrix(20, 10)};
    const auto res = solve_correlation(ci);
    const Matrix& X = res.solution.best.X;
    Matrix D(30, 10), T(30, 10);
    D << Matrix::Identity(10, 10), ci.P;
    T << ci.C, ci.Q;
    const double psd = oracle::lambda_min(X) / std::max(oracle::lambda_max(X), 1e-300);
    const double dstd = std::abs(res.Std - oracle::entrywise_std(D * X - T));
    worst_psd = std::min(worst_psd, psd);
    worst_std = std::max(worst_std, dstd);
    if (psd >= -1e-8 && dstd <= 1e-12) ++ok;
  }
  if (ok != 10) pass = false;
  why += "; random " + std::to_string(ok) + "/10 (min lambda_min/lambda_max " + fmt(worst_psd) + ", max Std gap " +
         fmt(worst_std) + ")";
  return {pass, why};
}

Outcome c10_profile() {
  using bench::BenchmarkRecord;
  auto rec = [](const std::string& p, const std::string& s, double t, bool ok) {
    BenchmarkRecord r;
    r.problem_id = p;
    r.solver_id = s;
    r.elapsed_seconds = t;
    r.converged = ok;
    r.E = ok ? 1.0 : std::numeric_limits<double>::infinity();
    return r;
  };
  const auto hand = bench::dolan_more_profile({rec("p1", "s1", 1, true), rec("p1", "s2", 2, true), rec("p2", "s1", 2, true),
                                               rec("p2", "s2", 2, true)});
  double r11 = -1, r21 = -1, r22 = -1;
  for (const auto& c : hand) {
    if (c.solver_id == "s1") r11 = c.rho_at(1);
    if (c.solver_id == "s2") r21 = c.rho_at(1), r22 = c.rho_at(2);
  }
  const bool hand_ok = r11 == 1.0 && r21 == 0.5 && r22 == 1.0;

  SplitMix64 g(10000);
  std::vector<BenchmarkRecord> recs;
  for (int p = 0; p < 100; ++p)
    for (const char* s : {"cg-o", "gmres-o", "cg-l"})
      recs.push_back(rec("p" + std::to_string(p), s, g.uniform(1e-4, 1.0), g.uniform() > 0.15));
  int bad = 0;
  std::size_t curves = 0;
  for (const auto& c : bench::dolan_more_profile(recs)) {
    ++curves;
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      if (c.points[i].rho < 0 || c.points[i].rho > 1) ++bad;
      if (i && (c.points[i].tau < c.points[i - 1].tau || c.points[i].rho < c.points[i - 1].rho)) ++bad;
    }
  }
  return {hand_ok && bad == 0 && curves == 3,
          "hand rho_s1(1) = " + fmt(r11) + ", rho_s2(1) = " + fmt(r21) + ", rho_s2(2) = " + fmt(r22) + "; " +
              std::to_string(recs.size()) + " records, " + std::to_string(curves) + " curves, " + std::to_string(bad) +
              " monotonicity violations"};
}

Outcome c11_nonnegativity() {
  double min_E = 1e300, worst_rel = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    SplitMix64 g(11000 + seed);
    const Eigen::Index n = 1 + seed % 8, r = 1 + seed % n, m = n + seed % 5;
    const ProblemInstance inst{g.uniform_matrix(m, n, -1, 1), g.uniform_matrix(m, n, -1, 1)};
    const FactorPair f = random_factors(g, n, r);
    const double E = objective_value(reduce(inst), f);
    const double sos = oracle::sos_objective(inst.D, inst.T, f.Y, f.s);
    min_E = std::min(min_E, E);
    worst_rel = std::max(worst_rel, std::abs(E - sos) / std::max(std::abs(sos), 1.0));
  }
  return {min_E >= -1e-10 && worst_rel <= 1e-8,
          "min E = " + fmt(min_E) + " (bound -1e-10), max relative gap to SOS form " + fmt(worst_rel) + " (bound 1e-8)"};
}

std::vector<std::string> e_column(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> col;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (int k = 0; k < 8 && std::getline(ss, cell, ','); ++k) {
    }
    col.push_back(cell);
  }
  return col;
}

Outcome c12_reproducible() {
  const std::string dir = PSDTLS_WORK_DIR;
  const std::string a = dir + "/accept_records_a.csv", b = dir + "/accept_records_b.csv";
  const std::string base = std::string(PSDTLS_CLI_PATH) + " bench --sizes 12x6,20x10 --trials 3 --seed 42 --out ";
  auto sys = [](const std::string& cmd) {
    const int st = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  const int ca = sys(base + a), cb = sys(base + b + " --jobs 2");
  const auto ea = e_column(a), eb = e_column(b);
  const bool pass = ca == 0 && cb == 0 && !ea.empty() && ea == eb;
  return {pass, "exit codes " + std::to_string(ca) + "/" + std::to_string(cb) + ", " + std::to_string(ea.size()) +
                    " records, E columns " + (ea == eb ? "identical" : "differ") + " (second run with --jobs 2)"};
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  report(1, "gradient vs central differences", 10, c1_gradient);
  report(2, "scale optimality vs 10^4-point grid", 10, c2_scales);
  report(3, "exact-fit recovery, all backends", 60, c3_exact_fit);
  report(4, "orthogonality at 20x10 r=5 and 100x50 r=50", 120, c4_orthogonality);
  report(5, "quadratic tail of the subspace error", 0, c5_quadratic);
  report(6, "backend agreement and cg-l refusal", 0, c6_backends);
  report(7, "rank-1 QEP residuals and cross-check", 0, c7_qep);
  report(8, "minimum-rank correctness and monotonicity", 0, c8_min_rank);
  report(9, "correlation driver fixtures and random cases", 0, c9_correlation);
  report(10, "Dolan-More profile hand example and monotonicity", 0, c10_profile);
  report(11, "nonnegativity and SOS agreement of E", 0, c11_nonnegativity);
  report(12, "bench reproducibility with a fixed seed", 0, c12_reproducible);
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
