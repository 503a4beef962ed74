#pragma once

#include <cmath>
#include <vector>

namespace psdtls::krylov {

// Generic over any vector type with +, -, scalar *, and cwiseProduct().sum()
// (Eigen vectors and matrices both qualify; the Newton solver feeds n x r matrices).
template <class V>
double inner(const V& a, const V& b) {
  return a.cwiseProduct(b).sum();
}

template <class V>
struct Result {
  V x;
  double residual = 0;  // ||b - A x|| at exit
  int iterations = 0;
  bool converged = false;
};

// Plain CG for a symmetric operator. Breaks off on nonpositive curvature.
template <class V, class Op>
Result<V> cg(const Op& apply, const V& b, double tol, int max_iters) {
  Result<V> out{b * 0.0};
  V r = b, p = b;
  double rr = inner(r, r);
  out.residual = std::sqrt(rr);
  if (out.residual <= tol) {
    out.converged = true;
    return out;
  }
  for (int k = 0; k < max_iters; ++k) {
    V q = apply(p);
    const double pq = inner(p, q);
    if (!(pq > 0)) break;
    const double alpha = rr / pq;
    out.x += alpha * p;
    r -= alpha * q;
    const double rr_new = inner(r, r);
    out.iterations = k + 1;
    out.residual = std::sqrt(rr_new);
    if (out.residual <= tol) break;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  V rt = b - apply(out.x);
  out.residual = std::sqrt(inner(rt, rt));
  out.converged = out.residual <= tol;
  return out;
}

// CG on the normal equations (CGLS form): min ||b - A x||.
template <class V, class Op, class Adj>
Result<V> cgnr(const Op& apply, const Adj& adjoint, const V& b, double tol, int max_iters) {
  Result<V> out{b * 0.0};
  V r = b;
  V s = adjoint(r);
  V p = s;
  double gamma = inner(s, s);
  out.residual = std::sqrt(inner(r, r));
  if (out.residual <= tol) {
    out.converged = true;
    return out;
  }
  for (int k = 0; k < max_iters && gamma > 0; ++k) {
    V q = apply(p);
    const double qq = inner(q, q);
    if (!(qq > 0)) break;
    const double alpha = gamma / qq;
    out.x += alpha * p;
    r -= alpha * q;
    out.iterations = k + 1;
    out.residual = std::sqrt(inner(r, r));
    if (out.residual <= tol) break;
    s = adjoint(r);
    const double gamma_new = inner(s, s);
    p = s + (gamma_new / gamma) * p;
    gamma = gamma_new;
  }
  V rt = b - apply(out.x);
  out.residual = std::sqrt(inner(rt, rt));
  out.converged = out.residual <= tol;
  return out;
}

// Restarted GMRES(m), modified Gram-Schmidt, Givens rotations on the Hessenberg.
// prec is a right preconditioner M: iterates on apply(M(.)), so the residual tested
// is the true one.
template <class V, class Op, class Prec>
Result<V> gmres(const Op& apply, const V& b, double tol, int max_iters, int restart, const Prec& prec) {
  Result<V> out{b * 0.0};
  if (restart < 1) restart = 1;
  V r = b;
  double beta = std::sqrt(inner(r, r));
  out.residual = beta;
  if (beta <= tol) {
    out.converged = true;
    return out;
  }
  int total = 0;
  while (total < max_iters) {
    std::vector<V> basis;
    basis.reserve(restart + 1);
    basis.push_back(r / beta);
    std::vector<std::vector<double>> H(restart + 1, std::vector<double>(restart, 0.0));
    std::vector<double> cs(restart, 0.0), sn(restart, 0.0), g(restart + 1, 0.0);
    g[0] = beta;
    int j = 0;
    for (; j < restart && total < max_iters; ++j, ++total) {
      V w = apply(prec(basis[j]));
      for (int i = 0; i <= j; ++i) {
        H[i][j] = inner(w, basis[i]);
        w -= H[i][j] * basis[i];
      }
      const double hn = std::sqrt(inner(w, w));
      H[j + 1][j] = hn;
      for (int i = 0; i < j; ++i) {
        const double t = cs[i] * H[i][j] + sn[i] * H[i + 1][j];
        H[i + 1][j] = -sn[i] * H[i][j] + cs[i] * H[i + 1][j];
        H[i][j] = t;
      }
      const double den = std::hypot(H[j][j], H[j + 1][j]);
      cs[j] = den > 0 ? H[j][j] / den : 1.0;
      sn[j] = den > 0 ? H[j + 1][j] / den : 0.0;
      H[j][j] = den;
      H[j + 1][j] = 0.0;
      g[j + 1] = -sn[j] * g[j];
      g[j] = cs[j] * g[j];
      const bool done = std::abs(g[j + 1]) <= tol || hn == 0.0;
      if (!done) basis.push_back(w / hn);
      if (done) {
        ++j;
        ++total;
        break;
      }
    }
    // back-substitution on the j x j triangle
    std::vector<double> yk(j, 0.0);
    for (int i = j - 1; i >= 0; --i) {
      double acc = g[i];
      for (int k = i + 1; k < j; ++k) acc -= H[i][k] * yk[k];
      yk[i] = H[i][i] != 0.0 ? acc / H[i][i] : 0.0;
    }
    V step = basis[0] * 0.0;
    for (int i = 0; i < j; ++i) step += yk[i] * basis[i];
    out.x += prec(step);
    r = b - apply(out.x);
    beta = std::sqrt(inner(r, r));
    out.residual = beta;
    out.iterations = total;
    if (beta <= tol) break;
    if (j == 0) break;
  }
  out.converged = out.residual <= tol;
  return out;
}

template <class V, class Op>
Result<V> gmres(const Op& apply, const V& b, double tol, int max_iters, int restart) {
  return gmres(apply, b, tol, max_iters, restart, [](const V& v) -> V { return v; });
}

}  // namespace psdtls::krylov
