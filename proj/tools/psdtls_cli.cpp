// psdtls command-line front end. Exit codes: 0 ok, 1 solver failure, 2 usage or I/O.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <psdtls/psdtls.hpp>

namespace {

using namespace psdtls;

struct CommonOpts {
  SolverConfig cfg;
  std::string backend = "gmres-o";
  std::string init = "ls";
  std::string variant = "transposed";
  std::string hessian = "eliminated";
  int jobs = 1;
  bool no_qep = false;
  bool no_precond = false;
};

void add_solver_opts(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--backend", o.backend, "Newton-equation solver: cg-o, gmres-o or cg-l")
      ->check(CLI::IsMember({"cg-o", "gmres-o", "cg-l"}));
  sub->add_option("--eps", o.cfg.eps, "relative stop tolerance on ||Y_new - Y||");
  sub->add_option("--delta", o.cfg.delta, "absolute stop tolerance on ||Y_new - Y||");
  sub->add_option("--max-iter", o.cfg.max_newton_iters, "Newton iteration cap");
  sub->add_option("--seed", o.cfg.seed, "seed for the Gaussian start");
  sub->add_option("--lin-tol", o.cfg.lin_tol, "relative residual target of the linear solve");
  sub->add_option("--lin-max-iter", o.cfg.lin_max_iters, "Krylov iteration cap (0: n*r, 3*n*r for CGNR)");
  sub->add_option("--restart", o.cfg.gmres_restart, "GMRES restart length (0: min(n*r, 200))");
  sub->add_option("--init", o.init, "starting point: ls, gaussian or c-eigen")
      ->check(CLI::IsMember({"ls", "gaussian", "c-eigen"}));
  sub->add_option("--variant", o.variant, "curvature term: transposed or untransposed")
      ->check(CLI::IsMember({"transposed", "untransposed"}));
  sub->add_option("--hessian", o.hessian, "Hessian model: eliminated, fixed or displayed")
      ->check(CLI::IsMember({"eliminated", "fixed", "displayed"}));
  sub->add_flag("--no-precond", o.no_precond, "plain GMRES without the block preconditioner");
}

SolverConfig finish(const CommonOpts& o) {
  SolverConfig c = o.cfg;
  c.backend = bench::parse_backend(o.backend);
  c.init = o.init == "ls" ? InitStrategy::least_squares : o.init == "gaussian" ? InitStrategy::gaussian : InitStrategy::c_eigen;
  c.curvature = o.variant == "transposed" ? CurvatureVariant::transposed : CurvatureVariant::untransposed;
  c.hessian = o.hessian == "eliminated" ? HessianModel::eliminated_scale
              : o.hessian == "fixed"    ? HessianModel::fixed_scale
                                        : HessianModel::displayed;
  c.precondition = !o.no_precond;
  c.validate();
  return c;
}

DriverConfig driver(const CommonOpts& o) {
  DriverConfig d;
  d.solver = finish(o);
  d.jobs = o.jobs;
  d.rank1_qep = !o.no_qep;
  return d;
}

ProblemInstance load_instance(const std::string& dpath, const std::string& tpath) {
  ProblemInstance inst{read_matrix_file(dpath), read_matrix_file(tpath)};
  if (inst.D.rows() != inst.T.rows() || inst.D.cols() != inst.T.cols())
    throw DimensionError(dpath + " and " + tpath + " have different shapes");
  if (inst.D.cols() < 1 || inst.D.rows() < inst.D.cols())
    throw DimensionError("need m >= n >= 1, got " + std::to_string(inst.D.rows()) + "x" + std::to_string(inst.D.cols()));
  return inst;
}

std::vector<bench::GeneratorSpec> parse_sizes(const std::string& s, int trials, std::uint64_t seed, double a, double b) {
  std::vector<bench::GeneratorSpec> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw CLI::ValidationError("--sizes", "expected MxN, got '" + item + "'");
    bench::GeneratorSpec g;
    try {
      g.m = std::stol(item.substr(0, x));
      g.n = std::stol(item.substr(x + 1));
    } catch (const std::exception&) {
      throw CLI::ValidationError("--sizes", "expected MxN, got '" + item + "'");
    }
    g.trials = trials;
    g.seed = seed;
    g.a = a;
    g.b = b;
    g.validate();
    out.push_back(g);
  }
  if (out.empty()) throw CLI::ValidationError("--sizes", "no sizes given");
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Positive semi-definite total least squares: fit D X ~ T with X symmetric PSD."};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  CommonOpts o;
  std::string dpath, tpath, out, trace, report, cpath, ppath, qpath;
  int rank = 1;
  double bound = 0;

  auto* sr = app.add_subcommand("solve-rank", "fixed-rank solve");
  sr->add_option("--data", dpath, "D matrix file")->required()->check(CLI::ExistingFile);
  sr->add_option("--target", tpath, "T matrix file")->required()->check(CLI::ExistingFile);
  sr->add_option("--rank", rank, "rank r")->required();
  sr->add_option("--out", out, "write X here")->required();
  sr->add_option("--trace", trace, "per-iteration CSV trace");
  add_solver_opts(sr, o);

  auto* ps = app.add_subcommand("psdtls", "rank sweep r = 1..n, keep the best E");
  ps->add_option("--data", dpath, "D matrix file")->required()->check(CLI::ExistingFile);
  ps->add_option("--target", tpath, "T matrix file")->required()->check(CLI::ExistingFile);
  ps->add_option("--out", out, "write X here")->required();
  ps->add_option("--report", report, "per-rank CSV (r,E,converged,residual)");
  ps->add_option("--jobs", o.jobs, "ranks solved concurrently");
  ps->add_flag("--no-qep", o.no_qep, "solve r = 1 with Newton instead of the QEP route");
  add_solver_opts(ps, o);

  auto* mr = app.add_subcommand("minrank", "smallest rank with E below a bound");
  mr->add_option("--data", dpath, "D matrix file")->required()->check(CLI::ExistingFile);
  mr->add_option("--target", tpath, "T matrix file")->required()->check(CLI::ExistingFile);
  mr->add_option("--bound", bound, "error bound e")->required()->check(CLI::PositiveNumber);
  mr->add_option("--out", out, "write X here");
  mr->add_flag("--no-qep", o.no_qep, "solve r = 1 with Newton instead of the QEP route");
  add_solver_opts(mr, o);

  auto* co = app.add_subcommand("corr", "correlation-type problem with D = [I; P], T = [C; Q]");
  co->add_option("--c", cpath, "anchor C (n x n)")->required()->check(CLI::ExistingFile);
  co->add_option("--p", ppath, "P (m x n)")->check(CLI::ExistingFile);
  co->add_option("--q", qpath, "Q (m x n)")->check(CLI::ExistingFile);
  co->add_option("--out", out, "write X here")->required();
  co->add_option("--jobs", o.jobs, "ranks solved concurrently");
  co->add_flag("--no-qep", o.no_qep, "solve r = 1 with Newton instead of the QEP route");
  add_solver_opts(co, o);

  std::string sizes = "20x10", solvers = "cg-o,gmres-o,cg-l";
  int trials = 10, bench_rank = 0, bench_jobs = 1;
  std::uint64_t bench_seed = 0;
  double ea = 0.0, eb = 1.0;
  auto* bn = app.add_subcommand("bench", "seeded random suite, one CSV record per run");
  bn->add_option("--sizes", sizes, "comma-separated MxN list");
  bn->add_option("--trials", trials, "instances per size")->check(CLI::PositiveNumber);
  bn->add_option("--seed", bench_seed, "suite seed");
  bn->add_option("--solvers", solvers, "comma-separated backends");
  bn->add_option("--rank", bench_rank, "fixed rank (0: n/2, -1: full sweep)");
  bn->add_option("--a", ea, "entry interval lower end");
  bn->add_option("--b", eb, "entry interval upper end");
  bn->add_option("--jobs", bench_jobs, "runs executed concurrently");
  bn->add_option("--out", out, "records CSV")->required();

  std::string in, prefix;
  auto* pf = app.add_subcommand("profile", "Dolan-More time profiles from a records CSV");
  pf->add_option("--in", in, "records CSV")->required()->check(CLI::ExistingFile);
  pf->add_option("--out-prefix", prefix, "writes <prefix>_<solver>.dat")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::cout << std::setprecision(17);
  try {
    if (*sr) {
      SolverConfig cfg = finish(o);
      cfg.trace_path = trace;
      const ProblemInstance inst = load_instance(dpath, tpath);
      if (rank < 1 || rank > inst.D.cols()) {
        std::cerr << "error: --rank must be in 1.." << inst.D.cols() << "\n";
        return 2;
      }
      const RankRSolution sol = solve_rank_r(inst, rank, cfg);
      write_matrix_file(out, sol.X);
      std::cout << "E=" << sol.E << "\north_residual=" << sol.orth_residual << "\niterations=" << sol.newton_iters
                << "\nconverged=" << (sol.converged ? 1 : 0) << "\n";
      return sol.converged ? 0 : 1;
    }
    if (*ps) {
      const ProblemInstance inst = load_instance(dpath, tpath);
      const PsdtlsSolution sol = solve_psdtls(inst, driver(o));
      write_matrix_file(out, sol.best.X);
      if (!report.empty()) {
        std::ofstream rep(report);
        if (!rep) throw IoError("cannot write " + report);
        rep << "r,E,converged,residual\n" << std::setprecision(17);
        for (std::size_t r = 0; r < sol.per_rank_E.size(); ++r)
          rep << r + 1 << ',' << sol.per_rank_E[r] << ',' << (sol.per_rank_status[r] ? 1 : 0) << ','
              << sol.per_rank_residual[r] << '\n';
      }
      std::cout << "rank=" << sol.best_rank << "\nE=" << sol.best.E << "\north_residual=" << sol.best.orth_residual
                << "\n";
      return 0;
    }
    if (*mr) {
      const ProblemInstance inst = load_instance(dpath, tpath);
      const MinRankResult res = solve_min_rank(inst, bound, driver(o));
      if (!out.empty()) write_matrix_file(out, res.solution.X);
      std::cout << "rank=" << res.rank << "\nE=" << res.solution.E << "\nsatisfied=" << (res.satisfied ? 1 : 0) << "\n";
      return 0;
    }
    if (*co) {
      CorrelationInstance ci;
      ci.C = read_matrix_file(cpath);
      const Eigen::Index n = ci.C.cols();
      if (ppath.empty() != qpath.empty()) {
        std::cerr << "error: --p and --q go together\n";
        return 2;
      }
      ci.P = ppath.empty() ? Matrix(0, n) : read_matrix_file(ppath);
      ci.Q = qpath.empty() ? Matrix(0, n) : read_matrix_file(qpath);
      const CorrelationResult res = solve_correlation(ci, driver(o));
      write_matrix_file(out, res.solution.best.X);
      std::cout << "rank=" << res.solution.best_rank << "\nE=" << res.solution.best.E << "\nStd=" << res.Std << "\n";
      return 0;
    }
    if (*bn) {
      const auto specs = parse_sizes(sizes, trials, bench_seed, ea, eb);
      std::vector<bench::SolverEntry> entries;
      for (const auto& id : split(solvers)) {
        bench::parse_backend(id);
        entries.push_back({id, "", {}});
      }
      // rank depends on the size, so each entry resolves it per instance
      for (auto& e : entries) {
        const std::string id = e.id;
        const int rk = bench_rank;
        e.rank_label = rk < 0 ? "sweep" : rk == 0 ? "n/2" : std::to_string(rk);
        e.solve = [id, rk](const ProblemInstance& inst) {
          const int n = static_cast<int>(inst.D.cols());
          const int r = rk < 0 ? 0 : rk == 0 ? std::max(1, n / 2) : std::min(rk, n);
          return bench::make_solver(id, r).solve(inst);
        };
      }
      auto recs = bench::run_suite(specs, entries, bench_jobs);
      for (auto& r : recs)
        if (r.r == "n/2") r.r = std::to_string(std::max<Eigen::Index>(1, r.n / 2));
      bench::write_records_file(out, recs);
      std::cout << std::setprecision(6);
      std::cout << "size solver runs converged mean_seconds mean_E mean_orth\n";
      for (const auto& row : bench::summarize(recs))
        std::cout << row.m << "x" << row.n << ' ' << row.solver_id << ' ' << row.runs << ' ' << row.converged << ' '
                  << row.mean_elapsed << ' ' << row.mean_E << ' ' << row.mean_orth << '\n';
      return 0;
    }
    if (*pf) {
      const auto recs = bench::read_records_file(in);
      const auto curves = bench::dolan_more_profile(recs);
      for (const auto& c : curves) {
        const std::string path = prefix + "_" + c.solver_id + ".dat";
        bench::write_profile_file(path, c);
        std::cout << c.solver_id << " rho(1)=" << c.rho_at(1.0) << " -> " << path << "\n";
      }
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
