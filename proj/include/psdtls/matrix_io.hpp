#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "errors.hpp"
#include "linalg.hpp"

namespace psdtls {

// Text format: "rows cols" on line 1, then one whitespace-separated row per line.
// Blank lines are skipped. Errors name the 1-based line that broke.
inline Matrix read_matrix(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("empty matrix file", line_no + 1);
  long rows = -1, cols = -1;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> rows >> cols) || (hs >> extra) || rows < 0 || cols < 0)
      throw ParseError("bad header, expected 'rows cols'", line_no);
  }
  Matrix M(rows, cols);
  for (long i = 0; i < rows; ++i) {
    if (!next_line()) throw ParseError("expected " + std::to_string(rows) + " rows, got " + std::to_string(i), line_no + 1);
    std::istringstream ls(line);
    std::string tok;
    long j = 0;
    while (ls >> tok) {
      if (j >= cols) throw ParseError("too many entries in row", line_no);
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw ParseError("not a number: '" + tok + "'", line_no);
      }
      if (used != tok.size()) throw ParseError("not a number: '" + tok + "'", line_no);
      if (!std::isfinite(v)) throw ParseError("non-finite entry '" + tok + "'", line_no);
      M(i, j++) = v;
    }
    if (j != cols) throw ParseError("expected " + std::to_string(cols) + " entries, got " + std::to_string(j), line_no);
  }
  if (next_line()) throw ParseError("trailing data after " + std::to_string(rows) + " rows", line_no);
  return M;
}

inline Matrix read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_matrix(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ":" + std::to_string(e.line) + ": " + e.what(), e.line);
  }
}

inline void write_matrix(std::ostream& out, const Matrix& M) {
  out << M.rows() << ' ' << M.cols() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j) out << ' ';
      out << M(i, j);
    }
    out << '\n';
  }
}

inline void write_matrix_file(const std::string& path, const Matrix& M) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_matrix(out, M);
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace psdtls
