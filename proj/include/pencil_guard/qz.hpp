#pragma once

// Generalized Schur (QZ) decomposition of a complex pencil (M1, M2):
//   Q^H M1 Z = T,  Q^H M2 Z = S,  T and S upper triangular, Q and Z unitary.
// Complex single-shift iteration on the Hessenberg-triangular form; no
// balancing, no randomness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include "pencil_guard/linalg.hpp"
#include "pencil_guard/matrix.hpp"

namespace pencil_guard {

struct Pencil {
  ComplexMatrix m1;
  ComplexMatrix m2;

  std::size_t order() const noexcept { return m1.rows(); }

  void validate() const {
    require_square(m1, "M1");
    require_square(m2, "M2");
    if (m1.rows() != m2.rows()) {
      fail(ErrorCode::DimensionMismatch, "pencil orders " + std::to_string(m1.rows()) + " and " +
                                             std::to_string(m2.rows()) + " differ");
    }
    require_finite(m1, "M1");
    require_finite(m2, "M2");
  }
};

struct HessenbergTriangular {
  ComplexMatrix q0;
  ComplexMatrix z0;
  ComplexMatrix h;
  ComplexMatrix r;
};

struct QzFactorization {
  ComplexMatrix q;
  ComplexMatrix z;
  ComplexMatrix t;
  ComplexMatrix s;
  double residual_t = 0.0;
  double residual_s = 0.0;
  std::size_t iterations_used = 0;

  std::size_t order() const noexcept { return t.rows(); }
};

struct QzOptions {
  /// 0 means the default budget of 30 * n sweeps.
  std::size_t max_sweeps = 0;
  double tol = 1e-12;
};

enum class EigenKind : std::uint8_t { Finite, Infinite, Indeterminate };

struct Eigenvalue {
  cdouble alpha;
  cdouble beta;
  /// alpha / beta for finite entries, the replacement value for indeterminate
  /// ones, and unused (zero) for infinite ones.
  cdouble lambda;
  EigenKind kind = EigenKind::Finite;
  /// Position on the diagonal of (T, S).
  std::size_t diagonal_index = 0;

  bool finite() const noexcept { return kind != EigenKind::Infinite; }
};

/// Eigenvalues in canonical order: infinite entries first, then descending
/// modulus, near-ties broken by descending phase angle.
struct GeneralizedEigenvalues {
  std::vector<Eigenvalue> values;
  double tol_beta = 0.0;

  std::size_t size() const noexcept { return values.size(); }
  const Eigenvalue& operator[](std::size_t i) const { return values[i]; }
};

namespace qz_detail {

inline double relative_residual(const ComplexMatrix& q, const ComplexMatrix& m,
                                const ComplexMatrix& z, const ComplexMatrix& target) {
  auto diff = matmul(matmul(adjoint(q), m), z);
  diff -= target;
  return frobenius_norm(diff) / std::max(1.0, frobenius_norm(m));
}

/// Working state of the iteration: (h, b) plus accumulated Q, Z.
struct State {
  ComplexMatrix h;
  ComplexMatrix b;
  ComplexMatrix q;
  ComplexMatrix z;
  std::size_t n = 0;

  // Row rotation on (i, i+1) starting at column col_begin.
  void rotate_rows(const linalg::Givens& g, std::size_t i, std::size_t col_h, std::size_t col_b) {
    g.apply_rows(h, i, i + 1, col_h, n);
    g.apply_rows(b, i, i + 1, col_b, n);
    g.accumulate_left(q, i, i + 1);
  }

  // Column rotation on (j-1, j) over rows [0, row_h_end) / [0, row_b_end).
  void rotate_cols(const linalg::Givens& g, std::size_t j, std::size_t row_h_end,
                   std::size_t row_b_end) {
    g.apply_cols(h, j - 1, j, 0, row_h_end);
    g.apply_cols(b, j - 1, j, 0, row_b_end);
    g.apply_cols(z, j - 1, j, 0, n);
  }
};

inline void reduce_to_hessenberg_triangular(State& st) {
  const std::size_t n = st.n;
  // QR of B by Givens rotations from the bottom of every column.
  for (std::size_t j = 0; j + 1 < n; ++j) {
    for (std::size_t i = n - 1; i > j; --i) {
      if (st.b(i, j) == cdouble{}) continue;
      const auto g = linalg::Givens::zeroing(st.b(i - 1, j), st.b(i, j));
      st.rotate_rows(g, i - 1, 0, j);
      st.b(i, j) = 0.0;
    }
  }
  // Annihilate A below the first subdiagonal while keeping B triangular.
  for (std::size_t j = 0; j + 2 < n; ++j) {
    for (std::size_t i = n - 1; i >= j + 2; --i) {
      if (st.h(i, j) != cdouble{}) {
        const auto g = linalg::Givens::zeroing(st.h(i - 1, j), st.h(i, j));
        st.rotate_rows(g, i - 1, j, i - 1);
        st.h(i, j) = 0.0;
      }
      if (st.b(i, i - 1) != cdouble{}) {
        const auto g = linalg::Givens::zeroing(st.b(i, i), st.b(i, i - 1));
        st.rotate_cols(g, i, n, i + 1);
        st.b(i, i - 1) = 0.0;
      }
    }
  }
}

/// Eigenvalue of the trailing 2x2 pencil closest to h22/b22, or nullopt when
/// the 2x2 B block is too close to singular to form B^{-1}.
inline std::optional<cdouble> wilkinson_shift(const ComplexMatrix& h, const ComplexMatrix& b,
                                              std::size_t k) {
  const cdouble a11 = h(k - 1, k - 1), a12 = h(k - 1, k), a21 = h(k, k - 1), a22 = h(k, k);
  const cdouble b11 = b(k - 1, k - 1), b12 = b(k - 1, k), b22 = b(k, k);
  const double bscale = std::abs(b11) + std::abs(b12) + std::abs(b22);
  if (bscale == 0.0 || std::abs(b11) <= 1e-14 * bscale || std::abs(b22) <= 1e-14 * bscale) {
    return std::nullopt;
  }
  // C = A B^{-1} for the 2x2 block; B^{-1} = [1/b11, -b12/(b11 b22); 0, 1/b22].
  const cdouble i11 = 1.0 / b11, i12 = -b12 / (b11 * b22), i22 = 1.0 / b22;
  const cdouble c11 = a11 * i11;
  const cdouble c12 = a11 * i12 + a12 * i22;
  const cdouble c21 = a21 * i11;
  const cdouble c22 = a21 * i12 + a22 * i22;
  const cdouble half_tr = 0.5 * (c11 + c22);
  const cdouble disc = std::sqrt(0.25 * (c11 - c22) * (c11 - c22) + c12 * c21);
  const cdouble r1 = half_tr + disc;
  const cdouble r2 = half_tr - disc;
  const cdouble target = a22 / b22;
  const cdouble shift = std::abs(r1 - target) <= std::abs(r2 - target) ? r1 : r2;
  if (!std::isfinite(shift.real()) || !std::isfinite(shift.imag())) return std::nullopt;
  return shift;
}

inline bool negligible_subdiagonal(const ComplexMatrix& h, std::size_t k, double tol,
                                   double floor) {
  const double sub = std::abs(h(k, k - 1));
  const double ref = std::abs(h(k, k)) + std::abs(h(k - 1, k - 1));
  return sub <= tol * ref || sub <= floor;
}

inline bool negligible_diagonal(const ComplexMatrix& b, std::size_t j, std::size_t lo,
                                std::size_t hi, double tol, double floor) {
  const double d = std::abs(b(j, j));
  double ref = 0.0;
  if (j > lo) ref += std::abs(b(j - 1, j));
  if (j < hi) ref += std::abs(b(j, j + 1));
  return d <= tol * ref || d <= floor;
}

/// Moves a zero at b(j, j) inside the block [lo, hi] down to b(hi, hi) and
/// splits off the resulting infinite eigenvalue, or splits it off at the top
/// when j == lo.
inline void chase_zero_diagonal(State& st, std::size_t j, std::size_t lo, std::size_t hi) {
  const std::size_t n = st.n;
  st.b(j, j) = 0.0;
  if (j == lo) {
    const auto g = linalg::Givens::zeroing(st.h(lo, lo), st.h(lo + 1, lo));
    st.rotate_rows(g, lo, lo, lo + 1);
    st.h(lo + 1, lo) = 0.0;
    st.b(lo + 1, lo) = 0.0;
    return;
  }
  for (std::size_t jch = j; jch < hi; ++jch) {
    auto g = linalg::Givens::zeroing(st.b(jch, jch + 1), st.b(jch + 1, jch + 1));
    st.rotate_rows(g, jch, jch - 1, jch + 1);
    st.b(jch + 1, jch + 1) = 0.0;
    g = linalg::Givens::zeroing(st.h(jch + 1, jch), st.h(jch + 1, jch - 1));
    st.rotate_cols(g, jch, jch + 2, jch + 1);
    st.h(jch + 1, jch - 1) = 0.0;
  }
  const auto g = linalg::Givens::zeroing(st.h(hi, hi), st.h(hi, hi - 1));
  st.rotate_cols(g, hi, hi + 1, hi + 1);
  st.h(hi, hi - 1) = 0.0;
  st.b(hi, hi - 1) = 0.0;
  (void)n;
}

/// One implicit single-shift sweep over the unreduced block [lo, hi].
inline void qz_sweep(State& st, std::size_t lo, std::size_t hi, cdouble shift) {
  const std::size_t n = st.n;
  cdouble x = st.h(lo, lo) - shift * st.b(lo, lo);
  cdouble y = st.h(lo + 1, lo);
  for (std::size_t j = lo; j < hi; ++j) {
    if (j > lo) {
      x = st.h(j, j - 1);
      y = st.h(j + 1, j - 1);
    }
    auto g = linalg::Givens::zeroing(x, y);
    st.rotate_rows(g, j, j > lo ? j - 1 : j, j);
    if (j > lo) st.h(j + 1, j - 1) = 0.0;
    g = linalg::Givens::zeroing(st.b(j + 1, j + 1), st.b(j + 1, j));
    st.rotate_cols(g, j + 1, std::min(j + 3, n), j + 2);
    st.b(j + 1, j) = 0.0;
  }
}

}  // namespace qz_detail

/// Unitary q0, z0 with q0^H M1 z0 upper Hessenberg and q0^H M2 z0 upper triangular.
inline HessenbergTriangular hessenberg_triangular_reduce(const Pencil& pencil) {
  pencil.validate();
  const std::size_t n = pencil.order();
  qz_detail::State st{pencil.m1, pencil.m2, ComplexMatrix::identity(n),
                      ComplexMatrix::identity(n), n};
  qz_detail::reduce_to_hessenberg_triangular(st);
  return {std::move(st.q), std::move(st.z), std::move(st.h), std::move(st.b)};
}

inline QzFactorization qz_decompose(const Pencil& pencil, const QzOptions& options = {}) {
  pencil.validate();
  const std::size_t n = pencil.order();
  if (options.tol <= 0.0) fail(ErrorCode::InvalidArgument, "QZ tolerance must be positive");
  const std::size_t max_sweeps = options.max_sweeps == 0 ? 30 * std::max<std::size_t>(n, 1)
                                                         : options.max_sweeps;
  const double tol = options.tol;

  qz_detail::State st{pencil.m1, pencil.m2, ComplexMatrix::identity(n),
                      ComplexMatrix::identity(n), n};
  qz_detail::reduce_to_hessenberg_triangular(st);

  constexpr double ulp = std::numeric_limits<double>::epsilon();
  const double h_floor = std::max(ulp * frobenius_norm(st.h), std::numeric_limits<double>::min());
  const double b_floor = std::max(ulp * frobenius_norm(st.b), std::numeric_limits<double>::min());

  std::size_t sweeps = 0;
  std::size_t stalled = 0;
  cdouble exceptional{0.0, 0.0};
  std::size_t hi = n == 0 ? 0 : n - 1;

  while (n > 0) {
    if (hi == 0) break;
    // Locate the top of the trailing unreduced block.
    std::size_t lo = hi;
    while (lo > 0) {
      if (qz_detail::negligible_subdiagonal(st.h, lo, tol, h_floor)) {
        st.h(lo, lo - 1) = 0.0;
        break;
      }
      --lo;
    }
    if (lo == hi) {
      --hi;
      stalled = 0;
      continue;
    }
    // A negligible diagonal entry of B means an infinite eigenvalue to split off.
    bool chased = false;
    for (std::size_t j = lo; j <= hi; ++j) {
      if (qz_detail::negligible_diagonal(st.b, j, lo, hi, tol, b_floor)) {
        qz_detail::chase_zero_diagonal(st, j, lo, hi);
        chased = true;
        break;
      }
    }
    if (chased) {
      stalled = 0;
      continue;
    }
    if (sweeps >= max_sweeps) throw ConvergenceFailure(hi - lo + 1, max_sweeps);
    ++sweeps;
    ++stalled;

    cdouble shift;
    if (stalled % 10 == 0) {
      // Ad-hoc shift to break cycles: perturb by the size of the trailing coupling.
      exceptional += st.h(hi, hi - 1) / st.b(hi - 1, hi - 1);
      shift = st.h(hi, hi) / st.b(hi, hi) + exceptional;
    } else if (auto w = qz_detail::wilkinson_shift(st.h, st.b, hi)) {
      shift = *w;
    } else {
      shift = st.h(hi, hi) / st.b(hi, hi);
    }
    qz_detail::qz_sweep(st, lo, hi, shift);
  }

  // Deflation cleanup: the strict lower triangles hold only negligible values.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      st.h(i, j) = 0.0;
      st.b(i, j) = 0.0;
    }
  }

  QzFactorization f;
  f.residual_t = qz_detail::relative_residual(st.q, pencil.m1, st.z, st.h);
  f.residual_s = qz_detail::relative_residual(st.q, pencil.m2, st.z, st.b);
  f.q = std::move(st.q);
  f.z = std::move(st.z);
  f.t = std::move(st.h);
  f.s = std::move(st.b);
  f.iterations_used = sweeps;
  return f;
}

namespace qz_detail {

/// Infinite entries first (stable), then descending modulus; entries whose
/// moduli agree to 1e-12 relative are ordered by descending phase.
inline void canonical_sort(std::vector<Eigenvalue>& v) {
  std::stable_sort(v.begin(), v.end(), [](const Eigenvalue& a, const Eigenvalue& b) {
    const bool ai = a.kind == EigenKind::Infinite;
    const bool bi = b.kind == EigenKind::Infinite;
    if (ai != bi) return ai;
    if (ai) return false;
    return std::abs(a.lambda) > std::abs(b.lambda);
  });
  std::size_t start = 0;
  while (start < v.size() && v[start].kind == EigenKind::Infinite) ++start;
  while (start < v.size()) {
    const double head = std::abs(v[start].lambda);
    std::size_t end = start + 1;
    while (end < v.size() && head - std::abs(v[end].lambda) <= 1e-12 * head) ++end;
    std::stable_sort(v.begin() + static_cast<std::ptrdiff_t>(start),
                     v.begin() + static_cast<std::ptrdiff_t>(end),
                     [](const Eigenvalue& a, const Eigenvalue& b) {
                       return std::arg(a.lambda) > std::arg(b.lambda);
                     });
    start = end;
  }
}

inline double componentwise_median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size();
  return m % 2 == 1 ? xs[m / 2] : 0.5 * (xs[m / 2 - 1] + xs[m / 2]);
}

}  // namespace qz_detail

/// Reads (alpha, beta) = (t_ii, s_ii), classifies each pair, replaces
/// indeterminate ratios by a jittered median of their finite diagonal
/// neighbours, and sorts canonically. tol_beta <= 0 selects the default
/// 1e-12 * ||S||_F / n.
inline GeneralizedEigenvalues generalized_eigenvalues(const QzFactorization& fact,
                                                      double tol_beta = 0.0,
                                                      std::uint64_t seed = 0) {
  const std::size_t n = fact.order();
  GeneralizedEigenvalues out;
  out.tol_beta = tol_beta > 0.0 ? tol_beta
                                : (n == 0 ? 0.0 : 1e-12 * frobenius_norm(fact.s) / static_cast<double>(n));
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigenvalue& e = out.values[i];
    e.alpha = fact.t(i, i);
    e.beta = fact.s(i, i);
    e.diagonal_index = i;
    const double ab = std::abs(e.beta);
    const double aa = std::abs(e.alpha);
    if (ab > out.tol_beta) {
      e.kind = EigenKind::Finite;
      e.lambda = e.alpha / e.beta;
    } else if (aa > out.tol_beta) {
      e.kind = EigenKind::Infinite;
      e.lambda = 0.0;
    } else {
      e.kind = EigenKind::Indeterminate;
    }
  }
  // Indeterminate replacement: up to two nearest finite ratios on each side.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1e-3, 1e-3);
  for (std::size_t i = 0; i < n; ++i) {
    if (out.values[i].kind != EigenKind::Indeterminate) continue;
    std::vector<double> re, im;
    auto take = [&](std::size_t k) {
      if (out.values[k].kind == EigenKind::Finite) {
        re.push_back(out.values[k].lambda.real());
        im.push_back(out.values[k].lambda.imag());
        return true;
      }
      return false;
    };
    int found = 0;
    for (std::size_t k = i; k-- > 0 && found < 2;) found += take(k) ? 1 : 0;
    found = 0;
    for (std::size_t k = i + 1; k < n && found < 2; ++k) found += take(k) ? 1 : 0;
    cdouble base{0.0, 0.0};
    if (!re.empty()) base = {qz_detail::componentwise_median(re), qz_detail::componentwise_median(im)};
    out.values[i].lambda = base * (1.0 + jitter(rng));
  }
  qz_detail::canonical_sort(out.values);
  return out;
}

/// Standard Schur eigenvalues of m, computed as the pencil (m, I).
inline GeneralizedEigenvalues schur_eigenvalues(const ComplexMatrix& m, const QzOptions& options = {}) {
  require_square(m, "Schur input");
  return generalized_eigenvalues(qz_decompose({m, ComplexMatrix::identity(m.rows())}, options));
}

struct DetProbe {
  cdouble lhs;
  cdouble rhs;
};

/// lhs = det(M1 - lambda M2) by LU; rhs = det(Q Z^H) * prod(t_ii - lambda s_ii).
inline DetProbe det_pencil_probe(const Pencil& pencil, const QzFactorization& fact, cdouble lambda) {
  const std::size_t n = pencil.order();
  if (n > 12) fail(ErrorCode::OrderTooLarge, "determinant probe limited to n <= 12, got " + std::to_string(n));
  auto shifted = pencil.m1 - pencil.m2 * lambda;
  DetProbe p;
  p.lhs = linalg::determinant(shifted);
  cdouble prod = linalg::determinant(matmul(fact.q, adjoint(fact.z)));
  for (std::size_t i = 0; i < n; ++i) prod *= fact.t(i, i) - lambda * fact.s(i, i);
  p.rhs = prod;
  return p;
}

/// ||Z^H (M2^{-1} Q) - S^{-1}||_F / ||S^{-1}||_F. Refuses M2 whose 1-norm
/// condition number exceeds 1e12.
inline double inverse_identity_check(const Pencil& pencil, const QzFactorization& fact) {
  const std::size_t n = pencil.order();
  if (n > 64) fail(ErrorCode::OrderTooLarge, "inverse identity check limited to n <= 64");
  auto inv = linalg::inverse(pencil.m2);
  if (!inv) fail(ErrorCode::SingularM2, "M2 has a zero pivot");
  const double cond = linalg::norm1(pencil.m2) * linalg::norm1(*inv);
  if (!(cond <= 1e12)) fail(ErrorCode::SingularM2, "M2 condition estimate " + std::to_string(cond));
  auto lhs = matmul(adjoint(fact.z), matmul(*inv, fact.q));
  const auto s_inv = linalg::upper_triangular_inverse(fact.s);
  lhs -= s_inv;
  return frobenius_norm(lhs) / frobenius_norm(s_inv);
}

}  // namespace pencil_guard
