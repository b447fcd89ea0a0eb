#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ipr/core.hpp"

namespace ipr {

// Small dense matrix routines on rank-2 Tensors. Everything here operates on
// matrices of kernel-sized dimension (typically <= 9x9) or desk-scale SDL
// instances, so plain O(n^3) algorithms are used throughout.

inline Tensor mat_mul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  if (b.extent(0) != k) throw std::invalid_argument("mat_mul: shape mismatch");
  Tensor c({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a(i, l);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) c(i, j) += av * b(l, j);
    }
  return c;
}

inline Tensor mat_transpose(const Tensor& a) {
  Tensor t({a.extent(1), a.extent(0)});
  for (std::size_t i = 0; i < a.extent(0); ++i)
    for (std::size_t j = 0; j < a.extent(1); ++j) t(j, i) = a(i, j);
  return t;
}

inline Tensor mat_vec(const Tensor& a, const std::vector<double>& x) {
  const std::size_t n = a.extent(0), m = a.extent(1);
  if (x.size() != m) throw std::invalid_argument("mat_vec: shape mismatch");
  Tensor y({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

// Gauss-Jordan inverse with partial pivoting.
inline Tensor mat_inverse(const Tensor& a) {
  const std::size_t n = a.extent(0);
  if (a.extent(1) != n) throw std::invalid_argument("mat_inverse: not square");
  Tensor w = a;
  Tensor inv({n, n});
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(w(r, col)) > std::abs(w(piv, col))) piv = r;
    if (w(piv, col) == 0.0)
      throw std::runtime_error("mat_inverse: singular matrix");
    if (piv != col)
      for (std::size_t j = 0; j < n; ++j) {
        std::swap(w(piv, j), w(col, j));
        std::swap(inv(piv, j), inv(col, j));
      }
    const double d = w(col, col);
    for (std::size_t j = 0; j < n; ++j) {
      w(col, j) /= d;
      inv(col, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = w(r, col);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        w(r, j) -= f * w(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

// Solve (A + ridge*I) x = b for symmetric positive semi-definite A.
inline std::vector<double> solve_spd(Tensor a, std::vector<double> b, double ridge) {
  const std::size_t n = a.extent(0);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += ridge;
  // Cholesky-free: Gauss with partial pivoting is plenty at these sizes.
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) throw std::runtime_error("solve_spd: singular system");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(piv, j), a(col, j));
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x[j];
    x[ii] = s / a(ii, ii);
  }
  return x;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> sym_eigenvalues(Tensor a, int sweeps = 64) {
  const std::size_t n = a.extent(0);
  for (int s = 0; s < sweeps; ++s) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  return ev;
}

// 2-norm condition number via the eigenvalues of A^T A.
inline double condition_number(const Tensor& a) {
  auto ev = sym_eigenvalues(mat_mul(mat_transpose(a), a));
  double lo = HUGE_VAL, hi = 0.0;
  for (double v : ev) {
    v = std::max(v, 0.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo <= 0.0) return HUGE_VAL;
  return std::sqrt(hi / lo);
}

}  // namespace ipr
