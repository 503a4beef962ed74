#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace psdtls {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct AsymmetricInput : Error { using Error::Error; };
struct SingularScaleError : Error { using Error::Error; };
struct DegenerateColumnError : Error {
  DegenerateColumnError(const std::string& what, int col) : Error(what), column(col) {}
  int column;
};
struct SingularA : Error { using Error::Error; };
struct NoRealCandidate : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };

// Thrown when a Krylov backend stops short of lin_tol. Carries its best iterate.
struct NonconvergedLinearSolve : Error {
  NonconvergedLinearSolve(const std::string& what, Eigen::MatrixXd best, double res, int its)
      : Error(what), best_delta(std::move(best)), residual(res), iterations(its) {}
  Eigen::MatrixXd best_delta;
  double residual;
  int iterations;
};

// CG_L refuses systems it would have to materialize beyond its size budget.
struct ResourceLimitError : Error { using Error::Error; };

struct AllRanksFailed : Error {
  AllRanksFailed(const std::string& what, std::vector<std::string> diag)
      : Error(what), per_rank(std::move(diag)) {}
  std::vector<std::string> per_rank;
};

// File could not be opened or written.
struct IoError : Error { using Error::Error; };

struct ParseError : Error {
  ParseError(const std::string& what, int line_no) : Error(what), line(line_no) {}
  int line;
};

}  // namespace psdtls
