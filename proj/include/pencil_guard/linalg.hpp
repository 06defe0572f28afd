#pragma once

#include <cmath>
#include <complex>
#include <optional>

#include "pencil_guard/matrix.hpp"

namespace pencil_guard::linalg {

/// Complex plane rotation G = [c s; -conj(s) c] with real c, chosen so that
/// G * [a; b] = [r; 0].
struct Givens {
  double c = 1.0;
  cdouble s{0.0, 0.0};
  cdouble r{0.0, 0.0};

  static Givens zeroing(cdouble a, cdouble b) {
    Givens g;
    const double abs_b = std::abs(b);
    if (abs_b == 0.0) {
      g.r = a;
      return g;
    }
    const double abs_a = std::abs(a);
    if (abs_a == 0.0) {
      g.c = 0.0;
      g.s = std::conj(b) / abs_b;
      g.r = abs_b;
      return g;
    }
    const double norm = std::hypot(abs_a, abs_b);
    const cdouble phase = a / abs_a;
    g.c = abs_a / norm;
    g.s = phase * std::conj(b) / norm;
    g.r = phase * norm;
    return g;
  }

  /// Rows i, j of m over columns [col_begin, col_end) become G applied to them.
  void apply_rows(ComplexMatrix& m, std::size_t i, std::size_t j, std::size_t col_begin,
                  std::size_t col_end) const {
    auto ri = m.row(i);
    auto rj = m.row(j);
    const cdouble sc = std::conj(s);
    for (std::size_t k = col_begin; k < col_end; ++k) {
      const cdouble x = ri[k];
      const cdouble y = rj[k];
      ri[k] = c * x + s * y;
      rj[k] = -sc * x + c * y;
    }
  }

  /// Columns (lo, hi) of m over rows [row_begin, row_end) are right-multiplied
  /// by [c s; -conj(s) c], so that col_hi' = c*col_hi + s*col_lo and
  /// col_lo' = -conj(s)*col_hi + c*col_lo. Built from zeroing(m(r,hi), m(r,lo))
  /// this annihilates m(r, lo).
  void apply_cols(ComplexMatrix& m, std::size_t lo, std::size_t hi, std::size_t row_begin,
                  std::size_t row_end) const {
    const cdouble sc = std::conj(s);
    for (std::size_t k = row_begin; k < row_end; ++k) {
      const cdouble x = m(k, hi);
      const cdouble y = m(k, lo);
      m(k, hi) = c * x + s * y;
      m(k, lo) = -sc * x + c * y;
    }
  }

  /// Accumulates a left rotation on rows (i, j) into Q, where the factorization
  /// reads Q^H A Z: Q <- Q G^H on columns (i, j).
  void accumulate_left(ComplexMatrix& q, std::size_t i, std::size_t j) const {
    const cdouble sc = std::conj(s);
    for (std::size_t k = 0; k < q.rows(); ++k) {
      const cdouble x = q(k, i);
      const cdouble y = q(k, j);
      q(k, i) = c * x + sc * y;
      q(k, j) = -s * x + c * y;
    }
  }
};

/// LU factorization with partial pivoting, P A = L U packed in one matrix.
struct LuFactor {
  ComplexMatrix lu;
  std::vector<std::size_t> perm;
  int sign = 1;
  bool singular = false;

  static LuFactor compute(const ComplexMatrix& a) {
    require_square(a, "LU input");
    const std::size_t n = a.rows();
    LuFactor f{a, std::vector<std::size_t>(n), 1, false};
    for (std::size_t i = 0; i < n; ++i) f.perm[i] = i;
    auto& m = f.lu;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t piv = k;
      double best = std::abs(m(k, k));
      for (std::size_t i = k + 1; i < n; ++i) {
        const double v = std::abs(m(i, k));
        if (v > best) {
          best = v;
          piv = i;
        }
      }
      if (best == 0.0) {
        f.singular = true;
        continue;
      }
      if (piv != k) {
        for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(piv, j));
        std::swap(f.perm[k], f.perm[piv]);
        f.sign = -f.sign;
      }
      const cdouble pivot = m(k, k);
      for (std::size_t i = k + 1; i < n; ++i) {
        const cdouble factor = m(i, k) / pivot;
        m(i, k) = factor;
        if (factor == cdouble{}) continue;
        auto ri = m.row(i);
        auto rk = m.row(k);
        for (std::size_t j = k + 1; j < n; ++j) ri[j] -= factor * rk[j];
      }
    }
    return f;
  }

  cdouble determinant() const {
    cdouble d = static_cast<double>(sign);
    for (std::size_t i = 0; i < lu.rows(); ++i) d *= lu(i, i);
    return d;
  }

  /// Solves A X = B column by column; requires a nonsingular factor.
  ComplexMatrix solve(const ComplexMatrix& b) const {
    const std::size_t n = lu.rows();
    if (b.rows() != n) fail(ErrorCode::DimensionMismatch, "LU solve right-hand side");
    ComplexMatrix x(n, b.cols());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < b.cols(); ++j) x(i, j) = b(perm[i], j);
    }
    for (std::size_t j = 0; j < b.cols(); ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        cdouble acc = x(i, j);
        for (std::size_t k = 0; k < i; ++k) acc -= lu(i, k) * x(k, j);
        x(i, j) = acc;
      }
      for (std::size_t ii = n; ii-- > 0;) {
        cdouble acc = x(ii, j);
        for (std::size_t k = ii + 1; k < n; ++k) acc -= lu(ii, k) * x(k, j);
        x(ii, j) = acc / lu(ii, ii);
      }
    }
    return x;
  }
};

inline cdouble determinant(const ComplexMatrix& a) { return LuFactor::compute(a).determinant(); }

/// Inverse via LU, or nullopt when a zero pivot shows up.
inline std::optional<ComplexMatrix> inverse(const ComplexMatrix& a) {
  auto f = LuFactor::compute(a);
  if (f.singular) return std::nullopt;
  return f.solve(ComplexMatrix::identity(a.rows()));
}

inline double norm1(const ComplexMatrix& a) {
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

/// Inverse of an upper-triangular matrix by back substitution.
inline ComplexMatrix upper_triangular_inverse(const ComplexMatrix& u) {
  const std::size_t n = u.rows();
  ComplexMatrix inv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    inv(j, j) = 1.0 / u(j, j);
    for (std::size_t ii = j; ii-- > 0;) {
      cdouble acc{};
      for (std::size_t k = ii + 1; k <= j; ++k) acc += u(ii, k) * inv(k, j);
      inv(ii, j) = -acc / u(ii, ii);
    }
  }
  return inv;
}

}  // namespace pencil_guard::linalg
