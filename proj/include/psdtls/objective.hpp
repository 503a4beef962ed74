#pragma once

#include <algorithm>
#include <cmath>
#include <vector>
#include <string>

#include "errors.hpp"
#include "linalg.hpp"

namespace psdtls {

struct ProblemInstance {
  Matrix D;  // data, m x n
  Matrix T;  // target, m x n
};

struct ReducedProblem {
  Matrix A;    // D^T D
  Matrix B;    // T^T T
  Matrix C;    // D^T T + T^T D
  Matrix DtT;  // D^T T, kept for the least-squares warm start
  Eigen::Index m = 0, n = 0;
};

struct FactorPair {
  Matrix Y;  // n x r, orthonormal columns
  Vector s;  // r positive scales, X = Y diag(s^2) Y^T
};

struct ErrorPair {
  Matrix deltaD;
  Matrix deltaT;
};

enum class ScaleMode {
  strict,   // degenerate columns throw
  clamped,  // ratio b/a clamped to [1e-8, 1e8]; used inside the solver
};

inline void check_instance(const ProblemInstance& inst) {
  if (inst.D.rows() != inst.T.rows() || inst.D.cols() != inst.T.cols())
    throw DimensionError("D is " + std::to_string(inst.D.rows()) + "x" + std::to_string(inst.D.cols()) + " but T is " +
                         std::to_string(inst.T.rows()) + "x" + std::to_string(inst.T.cols()));
}

inline ReducedProblem reduce(const ProblemInstance& inst) {
  check_instance(inst);
  ReducedProblem p;
  p.m = inst.D.rows();
  p.n = inst.D.cols();
  p.A = sym(inst.D.transpose() * inst.D);
  p.B = sym(inst.T.transpose() * inst.T);
  p.DtT = inst.D.transpose() * inst.T;
  p.C = p.DtT + p.DtT.transpose();
  return p;
}

// Column quadratic forms y_i^T M y_i.
inline Vector column_forms(const Matrix& M, const Matrix& Y) {
  return (Y.array() * (M * Y).array()).colwise().sum().transpose();
}

inline void check_scales(const Vector& s) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(std::abs(s(i)) >= 1e-13) || !std::isfinite(s(i)))
      throw SingularScaleError("scale s_" + std::to_string(i) + " is zero or non-finite");
}

inline ErrorPair error_pair(const ProblemInstance& inst, const FactorPair& f) {
  check_instance(inst);
  const Matrix X = factors_to_X(f.Y, f.s);
  const Matrix Xp = pseudo_inverse_from_factors(f.Y, f.s);
  ErrorPair e;
  e.deltaT = inst.D * X - inst.T;
  e.deltaD = (inst.D - inst.T * Xp) * (f.Y * f.Y.transpose());
  return e;
}

// E = sum_i s_i^2 a_i - c_i + s_i^-2 b_i
inline double objective_value(const ReducedProblem& p, const FactorPair& f) {
  check_scales(f.s);
  const Vector a = column_forms(p.A, f.Y), b = column_forms(p.B, f.Y), c = column_forms(p.C, f.Y);
  const Vector s2 = f.s.array().square();
  return (s2.array() * a.array() - c.array() + b.array() / s2.array()).sum();
}

// Magnitude of the terms summed in objective_value; sets the roundoff scale of E.
inline double objective_scale(const ReducedProblem& p, const FactorPair& f) {
  const Vector a = column_forms(p.A, f.Y), b = column_forms(p.B, f.Y), c = column_forms(p.C, f.Y);
  const Vector s2 = f.s.array().square();
  return (s2.array() * a.array().abs() + c.array().abs() + b.array().abs() / s2.array()).sum();
}

// dE/dY with S held fixed.
inline Matrix gradient_Y(const ReducedProblem& p, const FactorPair& f) {
  check_scales(f.s);
  const Vector s2 = f.s.array().square();
  const Vector is2 = s2.array().inverse();
  return 2 * (p.A * f.Y * s2.asDiagonal() - p.C * f.Y + p.B * f.Y * is2.asDiagonal());
}

// W(delta) = 2(A delta S^2 - C delta + B delta S^-2)
inline Matrix curvature_W(const ReducedProblem& p, const Vector& s, const Matrix& delta) {
  const Vector s2 = s.array().square();
  const Vector is2 = s2.array().inverse();
  return 2 * (p.A * delta * s2.asDiagonal() - p.C * delta + p.B * delta * is2.asDiagonal());
}

// The displayed F_YY action:
//   A d S^2 - Y S^2 d^T A Y - C d + Y d^T C Y + B d S^-2 - Y S^-2 d^T B Y.
// Equal to (W - Y W^T Y) / 2 for W above.
inline Matrix hessian_apply(const ReducedProblem& p, const FactorPair& f, const Matrix& delta) {
  check_scales(f.s);
  const Matrix& Y = f.Y;
  const Vector s2 = f.s.array().square();
  const Vector is2 = s2.array().inverse();
  return p.A * delta * s2.asDiagonal() - Y * s2.asDiagonal() * delta.transpose() * p.A * Y - p.C * delta +
         Y * delta.transpose() * p.C * Y + p.B * delta * is2.asDiagonal() -
         Y * is2.asDiagonal() * delta.transpose() * p.B * Y;
}

inline Vector optimal_scales(const ReducedProblem& p, const Matrix& Y, ScaleMode mode = ScaleMode::strict) {
  const Vector a = column_forms(p.A, Y);
  Vector b = column_forms(p.B, Y);
  const double anorm = p.A.norm();
  const double afloor = 1e-13 * (anorm > 0 ? anorm : 1.0);
  Vector s(Y.cols());
  for (Eigen::Index i = 0; i < Y.cols(); ++i) {
    double ai = a(i);
    const double bi = std::max(b(i), 1e-13);
    if (!(ai > afloor)) {
      if (mode == ScaleMode::strict)
        throw DegenerateColumnError("column " + std::to_string(i) + " has y^T A y = " + std::to_string(ai) +
                                        " (at or below 1e-13*||A||)",
                                    static_cast<int>(i));
      ai = afloor;
    }
    double ratio = bi / ai;
    if (mode == ScaleMode::clamped) ratio = std::clamp(ratio, 1e-8, 1e8);
    s(i) = std::sqrt(std::sqrt(ratio));
  }
  return s;
}

// Coupling from eliminating s through s_i = (b_i/a_i)^(1/4): column i of the
// curvature loses (K_i^T d_i) K_i * w_i with K_i = 4(s_i A y_i - s_i^-3 B y_i) and
// w_i = 1/(8 a_i). Columns whose scale sits on the clamp or a floor keep w_i = 0,
// since s does not move with y there.
struct ScaleCoupling {
  Matrix K;
  Vector w;
};

// Columns whose clamped-mode scale sits on the ratio clamp or a floor.
inline std::vector<bool> clamped_mask(const ReducedProblem& p, const Matrix& Y) {
  const Vector a = column_forms(p.A, Y), b = column_forms(p.B, Y);
  const double afloor = 1e-13 * std::max(p.A.norm(), 1.0e-300);
  std::vector<bool> out(Y.cols());
  for (Eigen::Index i = 0; i < Y.cols(); ++i) {
    const double ratio = b(i) / a(i);
    out[i] = !(a(i) > afloor) || !(b(i) > 1e-13) || !(ratio > 1e-8 && ratio < 1e8);
  }
  return out;
}

inline int clamped_columns(const ReducedProblem& p, const Matrix& Y) {
  const auto m = clamped_mask(p, Y);
  return static_cast<int>(std::count(m.begin(), m.end(), true));
}

inline ScaleCoupling scale_coupling(const ReducedProblem& p, const Matrix& Y, const Vector& s) {
  const Eigen::Index r = Y.cols();
  ScaleCoupling out{Matrix::Zero(Y.rows(), r), Vector::Zero(r)};
  const Vector a = column_forms(p.A, Y);
  const auto clamped = clamped_mask(p, Y);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (clamped[i]) continue;
    const double si = s(i);
    out.K.col(i) = 4 * (si * (p.A * Y.col(i)) - (p.B * Y.col(i)) / (si * si * si));
    out.w(i) = 1.0 / (8 * a(i));
  }
  return out;
}

// d/dt F_Y(Y + t d, s(Y + t d)) at t = 0, s from optimal_scales.
inline Matrix reduced_curvature_W(const ReducedProblem& p, const Matrix& Y, const Vector& s, const Matrix& d,
                                  const ScaleCoupling& sc) {
  Matrix w = curvature_W(p, s, d);
  const Vector coeff = ((sc.K.array() * d.array()).colwise().sum().transpose() * sc.w.array()).matrix();
  w -= sc.K * coeff.asDiagonal();
  return w;
}

inline Matrix reduced_curvature_W(const ReducedProblem& p, const Matrix& Y, const Vector& s, const Matrix& d) {
  return reduced_curvature_W(p, Y, s, d, scale_coupling(p, Y, s));
}

}  // namespace psdtls
