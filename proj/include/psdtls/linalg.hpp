#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace psdtls {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix sym(const Matrix& X) { return 0.5 * (X + X.transpose()); }
inline Matrix skew(const Matrix& X) { return 0.5 * (X - X.transpose()); }

inline double orth_residual(const Matrix& Y) {
  return (Y.transpose() * Y - Matrix::Identity(Y.cols(), Y.cols())).norm();
}

struct SpectralDecomposition {
  Matrix U;
  Vector eigenvalues;  // non-increasing
  Matrix reconstruct() const { return U * eigenvalues.asDiagonal() * U.transpose(); }
};

struct CompactQR {
  Matrix Q;
  Matrix R;
};

// Cyclic Jacobi. Quadratically convergent once off-diagonal mass is small; at the
// sizes used here (n up to a few hundred) a handful of sweeps suffices.
inline SpectralDecomposition spectral_decomposition(const Matrix& A_in) {
  if (A_in.rows() != A_in.cols()) throw DimensionError("spectral_decomposition: matrix is not square");
  const Eigen::Index n = A_in.rows();
  const double anorm = A_in.norm();
  if ((A_in - A_in.transpose()).norm() > 1e-10 * anorm)
    throw AsymmetricInput("spectral_decomposition: input is not symmetric");
  Matrix A = sym(A_in);
  Matrix V = Matrix::Identity(n, n);

  auto off = [&] {
    double s = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < j; ++i) s += 2 * A(i, j) * A(i, j);
    return std::sqrt(s);
  };

  const double target = std::numeric_limits<double>::epsilon() * 1e-2 * anorm;
  for (int sweep = 0; sweep < 100 && anorm > 0; ++sweep) {
    if (off() <= target) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        if (std::abs(apq) < 1e-300) {
          A(p, q) = A(q, p) = 0.0;
          continue;
        }
        const double theta = (A(q, q) - A(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        // A <- J^T A J with J the (p,q) rotation
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        A(p, q) = A(q, p) = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return A(a, a) > A(b, b); });
  SpectralDecomposition out{Matrix(n, n), Vector(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.eigenvalues(k) = A(idx[k], idx[k]);
    out.U.col(k) = V.col(idx[k]);
  }
  return out;
}

// Eigenvalues above n*eps*lambda_max count as nonzero.
inline int numerical_rank(const Vector& eigenvalues) {
  if (eigenvalues.size() == 0) return 0;
  const double lmax = eigenvalues.maxCoeff();
  if (lmax <= 0) return 0;
  const double tol = eigenvalues.size() * std::numeric_limits<double>::epsilon() * lmax;
  return static_cast<int>((eigenvalues.array() > tol).count());
}

// Householder QR, thin form. diag(R) >= 0. A zero column leaves the reflector at
// identity, so Q gets the matching canonical vector and R a zero row.
inline CompactQR compact_qr(const Matrix& M) {
  const Eigen::Index n = M.rows(), r = M.cols();
  if (n < r) throw DimensionError("compact_qr: more columns than rows");
  Matrix R = M;
  std::vector<Vector> refl(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    Vector x = R.block(k, k, n - k, 1);
    const double nx = x.norm();
    Vector v = x;
    if (nx > 0) {
      v(0) += (x(0) >= 0 ? nx : -nx);
      const double nv = v.norm();
      if (nv > 0) v /= nv;
    } else {
      v.setZero();
    }
    refl[k] = v;
    if (v.squaredNorm() > 0) {
      auto blk = R.block(k, k, n - k, r - k);
      blk -= 2 * v * (v.transpose() * blk);
    }
  }
  Matrix Q = Matrix::Identity(n, r);
  for (Eigen::Index k = r - 1; k >= 0; --k) {
    const Vector& v = refl[k];
    if (v.squaredNorm() == 0) continue;
    auto blk = Q.block(k, 0, n - k, r);
    blk -= 2 * v * (v.transpose() * blk);
  }
  Matrix Rt = R.topRows(r).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < r; ++k) {
    if (Rt(k, k) < 0) {
      Rt.row(k) *= -1;
      Q.col(k) *= -1;
    }
  }
  return {Q, Rt};
}

// Pade(6) with scaling and squaring.
inline Matrix matrix_exp(const Matrix& W) {
  if (W.rows() != W.cols()) throw DimensionError("matrix_exp: matrix is not square");
  const Eigen::Index k = W.rows();
  if (k == 0) return W;
  const double norm1 = W.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const Matrix X = W / std::ldexp(1.0, squarings);

  constexpr int q = 6;
  double c = 1.0;
  Matrix Xp = Matrix::Identity(k, k);
  Matrix N = Xp, Dn = Xp;
  for (int j = 1; j <= q; ++j) {
    c *= double(q - j + 1) / double(j * (2 * q - j + 1));
    Xp = Xp * X;
    N += c * Xp;
    Dn += ((j % 2) ? -c : c) * Xp;
  }
  Matrix E = Dn.partialPivLu().solve(N);
  for (int i = 0; i < squarings; ++i) E = E * E;
  return E;
}

// X = Y S^2 Y^T  =>  pinv(X) = Y S^-2 Y^T.
inline Matrix pseudo_inverse_from_factors(const Matrix& Y, const Vector& s) {
  if (Y.cols() != s.size()) throw DimensionError("pseudo_inverse_from_factors: Y and s disagree in size");
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(std::abs(s(i)) >= 1e-13)) throw SingularScaleError("pseudo_inverse_from_factors: scale " + std::to_string(i) + " is numerically zero");
  Vector inv2 = s.array().square().inverse();
  return Y * inv2.asDiagonal() * Y.transpose();
}

inline Matrix factors_to_X(const Matrix& Y, const Vector& s) {
  Matrix X = Y * s.array().square().matrix().asDiagonal() * Y.transpose();
  return sym(X);
}

}  // namespace psdtls
