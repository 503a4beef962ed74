#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "drivers.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "objective.hpp"
#include "rng.hpp"
#include "stiefel_newton.hpp"

namespace psdtls::bench {

struct GeneratorSpec {
  Eigen::Index m = 20, n = 10;
  double a = 0.0, b = 1.0;
  int trials = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(b > a)) throw Error("GeneratorSpec: need b > a");
    if (n < 1 || m < n) throw Error("GeneratorSpec: need m >= n >= 1");
    if (trials < 1) throw Error("GeneratorSpec: need trials >= 1");
  }
};

// D then T, row by row, from one splitmix64 stream keyed on (seed, trial).
inline ProblemInstance generate_instance(const GeneratorSpec& spec, int trial_index) {
  spec.validate();
  SplitMix64 g(derive_seed(spec.seed, static_cast<std::uint64_t>(trial_index)));
  ProblemInstance inst;
  inst.D = g.uniform_matrix(spec.m, spec.n, spec.a, spec.b);
  inst.T = g.uniform_matrix(spec.m, spec.n, spec.a, spec.b);
  return inst;
}

// FNV-1a over the raw bytes of D and T.
inline std::uint64_t instance_hash(const ProblemInstance& inst) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&](const Matrix& M) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(M.data());
    for (std::size_t i = 0; i < sizeof(double) * std::size_t(M.size()); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  eat(inst.D);
  eat(inst.T);
  return h;
}

struct SolveOutcome {
  double E = std::numeric_limits<double>::infinity();
  double orth_residual = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
};

struct SolverEntry {
  std::string id;
  std::string rank_label;  // "5" or "sweep"
  std::function<SolveOutcome(const ProblemInstance&)> solve;
};

struct BenchmarkRecord {
  std::string problem_id;
  std::string solver_id;
  Eigen::Index m = 0, n = 0;
  std::string r;
  std::uint64_t seed = 0;
  double elapsed_seconds = 0;
  double E = std::numeric_limits<double>::infinity();
  double orth_residual = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  std::uint64_t instance_hash = 0;  // fairness check, not written to CSV
};

inline Backend parse_backend(const std::string& s) {
  if (s == "cg-o") return Backend::CG_O;
  if (s == "gmres-o") return Backend::GMRES_O;
  if (s == "cg-l") return Backend::CG_L;
  throw Error("unknown backend '" + s + "' (expected cg-o, gmres-o or cg-l)");
}

// Fixed rank r (r <= 0 runs the full sweep).
inline SolverEntry make_solver(const std::string& backend, int r, const SolverConfig& base = {}) {
  SolverConfig cfg = base;
  cfg.backend = parse_backend(backend);
  cfg.trace_path.clear();
  SolverEntry s;
  s.id = backend;
  s.rank_label = r > 0 ? std::to_string(r) : "sweep";
  s.solve = [cfg, r](const ProblemInstance& inst) {
    SolveOutcome o;
    if (r > 0) {
      const auto sol = solve_rank_r(inst, std::min<Eigen::Index>(r, inst.D.cols()), cfg);
      o = {sol.E, sol.orth_residual, sol.converged};
    } else {
      DriverConfig dc;
      dc.solver = cfg;
      const auto sol = solve_psdtls(inst, dc);
      o = {sol.best.E, sol.best.orth_residual, sol.best.converged};
    }
    return o;
  };
  return s;
}

inline std::string problem_id(const GeneratorSpec& s, int trial) {
  return std::to_string(s.m) + "x" + std::to_string(s.n) + "-s" + std::to_string(s.seed) + "-t" + std::to_string(trial);
}

// Records come back in (spec, trial, solver) order whatever the schedule.
inline std::vector<BenchmarkRecord> run_suite(const std::vector<GeneratorSpec>& specs,
                                              const std::vector<SolverEntry>& solvers, int jobs = 1) {
  if (specs.empty() || solvers.empty()) throw Error("run_suite: need at least one spec and one solver");
  struct Task {
    std::size_t spec, solver;
    int trial;
  };
  std::vector<Task> tasks;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    specs[i].validate();
    for (int t = 0; t < specs[i].trials; ++t)
      for (std::size_t j = 0; j < solvers.size(); ++j) tasks.push_back({i, j, t});
  }
  std::vector<BenchmarkRecord> out(tasks.size());
  auto run = [&](std::size_t k) {
    const Task& tk = tasks[k];
    const GeneratorSpec& sp = specs[tk.spec];
    const SolverEntry& sv = solvers[tk.solver];
    const ProblemInstance inst = generate_instance(sp, tk.trial);
    BenchmarkRecord rec;
    rec.problem_id = problem_id(sp, tk.trial);
    rec.solver_id = sv.id;
    rec.m = sp.m;
    rec.n = sp.n;
    rec.r = sv.rank_label;
    rec.seed = sp.seed;
    rec.instance_hash = instance_hash(inst);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SolveOutcome o = sv.solve(inst);
      rec.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.E = o.converged ? o.E : std::numeric_limits<double>::infinity();
      rec.orth_residual = o.orth_residual;
      rec.converged = o.converged;
    } catch (const std::exception&) {
      rec.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    out[k] = std::move(rec);
  };
  const int nj = std::max(1, jobs);
  if (nj == 1) {
    for (std::size_t k = 0; k < tasks.size(); ++k) run(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < nj; ++t)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < tasks.size(); k = next++) run(k);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

inline const char* kRecordsHeader = "problem_id,solver_id,m,n,r,seed,elapsed_seconds,E,orth_residual,converged";

inline void write_records(std::ostream& out, const std::vector<BenchmarkRecord>& recs) {
  out << kRecordsHeader << '\n' << std::setprecision(17);
  for (const auto& r : recs)
    out << r.problem_id << ',' << r.solver_id << ',' << r.m << ',' << r.n << ',' << r.r << ',' << r.seed << ','
        << r.elapsed_seconds << ',' << r.E << ',' << r.orth_residual << ',' << (r.converged ? 1 : 0) << '\n';
}

inline void write_records_file(const std::string& path, const std::vector<BenchmarkRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_records(out, recs);
  if (!out) throw IoError("write failed for " + path);
}

namespace detail {

inline double parse_real(const std::string& s, int line) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ParseError("bad number '" + s + "'", line);
    return v;
  } catch (const std::logic_error&) {
    throw ParseError("bad number '" + s + "'", line);
  }
}

}  // namespace detail

inline std::vector<BenchmarkRecord> read_records(std::istream& in) {
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty records file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRecordsHeader) throw ParseError("unexpected header '" + line + "'", line_no);
  std::vector<BenchmarkRecord> recs;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw ParseError("expected 10 fields, got " + std::to_string(f.size()), line_no);
    BenchmarkRecord r;
    r.problem_id = f[0];
    r.solver_id = f[1];
    r.m = static_cast<Eigen::Index>(detail::parse_real(f[2], line_no));
    r.n = static_cast<Eigen::Index>(detail::parse_real(f[3], line_no));
    r.r = f[4];
    try {
      r.seed = std::stoull(f[5]);
    } catch (const std::logic_error&) {
      throw ParseError("bad seed '" + f[5] + "'", line_no);
    }
    r.elapsed_seconds = detail::parse_real(f[6], line_no);
    r.E = detail::parse_real(f[7], line_no);
    r.orth_residual = detail::parse_real(f[8], line_no);
    if (f[9] != "0" && f[9] != "1") throw ParseError("converged must be 0 or 1", line_no);
    r.converged = f[9] == "1";
    if (!(r.elapsed_seconds >= 0)) throw ParseError("negative elapsed time", line_no);
    recs.push_back(std::move(r));
  }
  return recs;
}

inline std::vector<BenchmarkRecord> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_records(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ":" + std::to_string(e.line) + ": " + e.what(), e.line);
  }
}

struct ProfilePoint {
  double tau;
  double rho;
};

struct ProfileCurve {
  std::string solver_id;
  std::vector<ProfilePoint> points;
  double rho_at(double tau) const {
    double r = 0.0;
    for (const auto& p : points)
      if (p.tau <= tau) r = p.rho;
    return r;
  }
};

// Time profile. Failed runs have ratio +inf. Each curve is sampled at tau = 1 and at
// every finite ratio seen for any solver, so all curves share one abscissa.
// Repeated (problem, solver) records are averaged over their converged runs.
inline std::vector<ProfileCurve> dolan_more_profile(const std::vector<BenchmarkRecord>& recs) {
  std::vector<std::string> problems, solvers;
  std::map<std::string, std::size_t> pidx, sidx;
  for (const auto& r : recs) {
    if (pidx.emplace(r.problem_id, problems.size()).second) problems.push_back(r.problem_id);
    if (sidx.emplace(r.solver_id, solvers.size()).second) solvers.push_back(r.solver_id);
  }
  if (solvers.empty()) throw Error("dolan_more_profile: no records");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> tsum(problems.size(), std::vector<double>(solvers.size(), 0.0));
  std::vector<std::vector<int>> tcnt(problems.size(), std::vector<int>(solvers.size(), 0));
  for (const auto& r : recs) {
    if (!r.converged) continue;
    tsum[pidx[r.problem_id]][sidx[r.solver_id]] += r.elapsed_seconds;
    tcnt[pidx[r.problem_id]][sidx[r.solver_id]] += 1;
  }
  std::vector<std::vector<double>> ratio(problems.size(), std::vector<double>(solvers.size(), inf));
  bool any = false;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    double best = inf;
    for (std::size_t s = 0; s < solvers.size(); ++s)
      if (tcnt[p][s] > 0) best = std::min(best, tsum[p][s] / tcnt[p][s]);
    if (best == inf) continue;
    any = true;
    for (std::size_t s = 0; s < solvers.size(); ++s) {
      if (tcnt[p][s] == 0) continue;
      const double t = tsum[p][s] / tcnt[p][s];
      ratio[p][s] = best > 0 ? t / best : (t > 0 ? inf : 1.0);
    }
  }
  if (!any) throw Error("dolan_more_profile: no problem has a successful run");

  std::vector<double> taus{1.0};
  for (const auto& row : ratio)
    for (double v : row)
      if (std::isfinite(v)) taus.push_back(v);
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  std::vector<ProfileCurve> curves;
  const double np = double(problems.size());
  for (std::size_t s = 0; s < solvers.size(); ++s) {
    ProfileCurve c{solvers[s], {}};
    for (double tau : taus) {
      int cnt = 0;
      for (std::size_t p = 0; p < problems.size(); ++p)
        if (ratio[p][s] <= tau) ++cnt;
      c.points.push_back({tau, cnt / np});
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

inline void write_profile(std::ostream& out, const ProfileCurve& c) {
  out << std::setprecision(17);
  for (const auto& p : c.points) out << p.tau << ' ' << p.rho << '\n';
}

inline void write_profile_file(const std::string& path, const ProfileCurve& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_profile(out, c);
}

struct SummaryRow {
  Eigen::Index m = 0, n = 0;
  std::string solver_id;
  int runs = 0, converged = 0;
  double mean_elapsed = 0, mean_E = 0, mean_orth = 0;  // over converged runs
};

inline std::vector<SummaryRow> summarize(const std::vector<BenchmarkRecord>& recs) {
  std::vector<SummaryRow> rows;
  auto find = [&](const BenchmarkRecord& r) -> SummaryRow& {
    for (auto& row : rows)
      if (row.m == r.m && row.n == r.n && row.solver_id == r.solver_id) return row;
    rows.push_back({r.m, r.n, r.solver_id});
    return rows.back();
  };
  for (const auto& r : recs) {
    SummaryRow& row = find(r);
    ++row.runs;
    if (!r.converged) continue;
    ++row.converged;
    row.mean_elapsed += r.elapsed_seconds;
    row.mean_E += r.E;
    row.mean_orth += r.orth_residual;
  }
  for (auto& row : rows) {
    if (row.converged == 0) {
      row.mean_elapsed = row.mean_E = row.mean_orth = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    row.mean_elapsed /= row.converged;
    row.mean_E /= row.converged;
    row.mean_orth /= row.converged;
  }
  return rows;
}

}  // namespace psdtls::bench
