#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pencil_guard/qz.hpp"

using namespace pencil_guard;

namespace {

void expect_valid(const Pencil& p, const QzFactorization& f) {
  const double n = static_cast<double>(p.order());
  EXPECT_LE(f.residual_t, 1e-10);
  EXPECT_LE(f.residual_s, 1e-10);
  EXPECT_LE(unitarity_defect(f.q), 1e-10 * n);
  EXPECT_LE(unitarity_defect(f.z), 1e-10 * n);
  for (std::size_t i = 0; i < p.order(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      EXPECT_EQ(f.t(i, j), cdouble{});
      EXPECT_EQ(f.s(i, j), cdouble{});
    }
  }
}

std::vector<cdouble> finite_lambdas(const GeneralizedEigenvalues& e) {
  std::vector<cdouble> out;
  for (const auto& v : e.values) out.push_back(v.lambda);
  return out;
}

}  // namespace

TEST(HessenbergTriangular, IdentityPencilIsFixed) {
  const auto id = ComplexMatrix::identity(4);
  const auto ht = hessenberg_triangular_reduce({id, id});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = i == j ? 1.0 : 0.0;
      EXPECT_NEAR(std::abs(ht.h(i, j)), expect, 1e-15);
      EXPECT_NEAR(std::abs(ht.r(i, j)), expect, 1e-15);
    }
  }
}

TEST(HessenbergTriangular, RandomPencilStructureAndResiduals) {
  std::mt19937_64 rng(6);
  Pencil p{oracle::random_real(6, rng), oracle::random_real(6, rng)};
  const auto ht = hessenberg_triangular_reduce(p);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      if (i > j + 1) {
        EXPECT_EQ(ht.h(i, j), cdouble{});
      }
      if (i > j) {
        EXPECT_EQ(ht.r(i, j), cdouble{});
      }
    }
  }
  EXPECT_LE(qz_detail::relative_residual(ht.q0, p.m1, ht.z0, ht.h), 1e-10);
  EXPECT_LE(qz_detail::relative_residual(ht.q0, p.m2, ht.z0, ht.r), 1e-10);
  EXPECT_LE(unitarity_defect(ht.q0), 6e-10);
  EXPECT_LE(unitarity_defect(ht.z0), 6e-10);
}

TEST(HessenbergTriangular, AlreadyReducedInputOnlyChangesPhases) {
  ComplexMatrix a{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}, {0.0, 7.0, 8.0}};
  ComplexMatrix b{{2.0, 1.0, 1.0}, {0.0, 3.0, 1.0}, {0.0, 0.0, 4.0}};
  const auto ht = hessenberg_triangular_reduce({a, b});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(std::abs(ht.h(i, j)), std::abs(a(i, j)), 1e-14);
      EXPECT_NEAR(std::abs(ht.r(i, j)), std::abs(b(i, j)), 1e-14);
    }
  }
}

TEST(HessenbergTriangular, RejectsBadInput) {
  EXPECT_THROW(hessenberg_triangular_reduce({ComplexMatrix(2, 2), ComplexMatrix(3, 3)}), Error);
  ComplexMatrix nan = ComplexMatrix::identity(2);
  nan(0, 1) = std::numeric_limits<double>::infinity();
  try {
    hessenberg_triangular_reduce({nan, ComplexMatrix::identity(2)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteInput);
  }
}

TEST(Qz, DiagonalPencil) {
  ComplexMatrix a{{2.0, 0.0}, {0.0, 3.0}};
  const auto f = qz_decompose({a, ComplexMatrix::identity(2)});
  const auto e = generalized_eigenvalues(f);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_NEAR(std::abs(e[0].lambda - 3.0), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(e[1].lambda - 2.0), 0.0, 1e-14);
}

TEST(Qz, RandomPencilSatisfiesInvariantsAndDeterminantIdentity) {
  std::mt19937_64 rng(16);
  Pencil p{oracle::random_real(16, rng), oracle::random_real(16, rng)};
  const auto f = qz_decompose(p);
  expect_valid(p, f);
  // n = 16 exceeds the probe guard, so check the identity on the leading 12x12 sub-pencil.
  Pencil small{ComplexMatrix(12, 12), ComplexMatrix(12, 12)};
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      small.m1(i, j) = p.m1(i, j);
      small.m2(i, j) = p.m2(i, j);
    }
  const auto fs = qz_decompose(small);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    const cdouble lambda{d(rng), d(rng)};
    const auto probe = det_pencil_probe(small, fs, lambda);
    EXPECT_LE(std::abs(probe.lhs - probe.rhs), 1e-8 * (1.0 + std::abs(probe.lhs)));
  }
}

TEST(Qz, EqualPencilHasUnitEigenvalues) {
  std::mt19937_64 rng(3);
  const auto m = oracle::random_real(10, rng);
  const auto f = qz_decompose({m, m});
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(std::abs(f.t(i, i) / f.s(i, i) - 1.0), 0.0, 1e-8);
}

TEST(Qz, IsDeterministic) {
  std::mt19937_64 rng(5);
  Pencil p{oracle::random_complex(12, rng), oracle::random_complex(12, rng)};
  const auto a = qz_decompose(p);
  const auto b = qz_decompose(p);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.t, b.t);
  EXPECT_EQ(a.s, b.s);
}

TEST(Qz, SingularSecondMatrixGivesInfiniteEigenvalue) {
  std::mt19937_64 rng(8);
  auto a = oracle::random_real(6, rng);
  auto b = oracle::random_real(6, rng);
  for (std::size_t i = 0; i < 6; ++i) b(i, 5) = b(i, 0) + 2.0 * b(i, 1);  // rank 5
  Pencil p{a, b};
  const auto f = qz_decompose(p);
  expect_valid(p, f);
  const auto e = generalized_eigenvalues(f, 1e-10);
  EXPECT_EQ(e[0].kind, EigenKind::Infinite);
  EXPECT_NE(e[1].kind, EigenKind::Infinite);
}

TEST(Qz, ExactZeroOnDiagonalIsChased) {
  // B upper triangular with an exact zero in the middle of the diagonal.
  std::mt19937_64 rng(21);
  auto a = oracle::random_real(5, rng);
  auto b = oracle::random_real(5, rng);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < i; ++j) b(i, j) = 0.0;
  b(2, 2) = 0.0;
  Pencil p{a, b};
  const auto f = qz_decompose(p);
  expect_valid(p, f);
  const auto e = generalized_eigenvalues(f, 1e-10);
  int infinite = 0;
  for (const auto& v : e.values) infinite += v.kind == EigenKind::Infinite ? 1 : 0;
  EXPECT_EQ(infinite, 1);
}

TEST(Qz, ZeroMatrixPencilStillFactorizes) {
  Pencil p{ComplexMatrix(4, 4), ComplexMatrix(4, 4)};
  const auto f = qz_decompose(p);
  const auto e = generalized_eigenvalues(f);
  for (const auto& v : e.values) EXPECT_EQ(v.kind, EigenKind::Indeterminate);
}

TEST(Qz, ConvergenceFailureReportsBlock) {
  std::mt19937_64 rng(9);
  Pencil p{oracle::random_real(8, rng), oracle::random_real(8, rng)};
  try {
    qz_decompose(p, {.max_sweeps = 1, .tol = 1e-12});
    FAIL() << "expected ConvergenceFailure";
  } catch (const ConvergenceFailure& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConvergenceFailure);
    EXPECT_GE(e.unconverged_block(), 2u);
  }
}

TEST(GeneralizedEigenvalues, DiagonalFactorsAndOrdering) {
  QzFactorization f;
  f.t = ComplexMatrix{{2.0, 0.0}, {0.0, 3.0}};
  f.s = ComplexMatrix::identity(2);
  const auto e = generalized_eigenvalues(f);
  EXPECT_EQ(e[0].lambda, cdouble(3.0));
  EXPECT_EQ(e[1].lambda, cdouble(2.0));
}

TEST(GeneralizedEigenvalues, TwoByTwoMatchesQuadraticRoots) {
  ComplexMatrix m1{{1.0, 2.0}, {3.0, 4.0}};
  ComplexMatrix m2{{1.0, 0.0}, {0.0, 2.0}};
  const auto e = generalized_eigenvalues(qz_decompose({m1, m2}));
  // det(M1 - l M2) = 2 l^2 - 6 l - 2 (expanded by hand).
  EXPECT_NEAR(e[0].lambda.real(), (3.0 + std::sqrt(13.0)) / 2.0, 1e-12);
  EXPECT_NEAR(e[1].lambda.real(), (3.0 - std::sqrt(13.0)) / 2.0, 1e-12);
  EXPECT_NEAR(e[0].lambda.imag(), 0.0, 1e-12);
  EXPECT_NEAR((3.0 + std::sqrt(13.0)) / 2.0, 3.30278, 1e-5);
}

TEST(GeneralizedEigenvalues, ZeroBetaIsInfinite) {
  QzFactorization f;
  f.t = ComplexMatrix{{5.0, 1.0}, {0.0, 2.0}};
  f.s = ComplexMatrix{{0.0, 1.0}, {0.0, 1.0}};
  const auto e = generalized_eigenvalues(f);
  EXPECT_EQ(e[0].kind, EigenKind::Infinite);
  EXPECT_EQ(e[1].kind, EigenKind::Finite);
  EXPECT_EQ(e[1].lambda, cdouble(2.0));
}

TEST(GeneralizedEigenvalues, IndeterminateReplacedNearNeighbours) {
  QzFactorization f;
  f.t = ComplexMatrix::diagonal(std::vector<cdouble>{4.0, 0.0, 2.0, 1.0});
  f.s = ComplexMatrix::diagonal(std::vector<cdouble>{1.0, 0.0, 1.0, 1.0});
  const auto a = generalized_eigenvalues(f, 0.0, 7);
  const auto b = generalized_eigenvalues(f, 0.0, 7);
  const auto it = std::find_if(a.values.begin(), a.values.end(),
                               [](const Eigenvalue& e) { return e.kind == EigenKind::Indeterminate; });
  ASSERT_NE(it, a.values.end());
  // neighbours {4} on the left, {2, 1} on the right -> median 2
  EXPECT_NEAR(it->lambda.real(), 2.0, 2.0 * 1e-3);
  EXPECT_NE(it->lambda.real(), 2.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].lambda, b[i].lambda);
}

TEST(SchurEigenvalues, UpperTriangularReturnsDiagonal) {
  ComplexMatrix m{{1.0, 5.0, 2.0}, {0.0, -4.0, 1.0}, {0.0, 0.0, 2.5}};
  const auto e = schur_eigenvalues(m);
  EXPECT_NEAR(std::abs(e[0].lambda - cdouble(-4.0)), 0.0, 1e-13);
  EXPECT_NEAR(std::abs(e[1].lambda - cdouble(2.5)), 0.0, 1e-13);
  EXPECT_NEAR(std::abs(e[2].lambda - cdouble(1.0)), 0.0, 1e-13);
  for (const auto& v : e.values) EXPECT_NEAR(std::abs(v.beta), 1.0, 1e-12);
}

TEST(SchurEigenvalues, RotationMatrixSpectrum) {
  ComplexMatrix m{{0.0, 1.0}, {-1.0, 0.0}};
  const auto e = schur_eigenvalues(m);
  EXPECT_NEAR(std::abs(e[0].lambda - cdouble(0.0, 1.0)), 0.0, 1e-13);
  EXPECT_NEAR(std::abs(e[1].lambda - cdouble(0.0, -1.0)), 0.0, 1e-13);
}

TEST(SchurEigenvalues, MatchesCharacteristicPolynomialOracle) {
  std::mt19937_64 rng(88);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = oracle::random_real(8, rng);
    const auto roots = oracle::poly_roots(
        oracle::pencil_characteristic_polynomial(m, ComplexMatrix::identity(8)));
    const auto e = schur_eigenvalues(m);
    EXPECT_LE(oracle::matched_relative_error(finite_lambdas(e), roots), 1e-6);
  }
}

TEST(DetProbe, IdentityPencil) {
  const auto id = ComplexMatrix::identity(3);
  const auto f = qz_decompose({id, id});
  auto p0 = det_pencil_probe({id, id}, f, 0.0);
  EXPECT_NEAR(std::abs(p0.lhs - 1.0), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(p0.rhs - 1.0), 0.0, 1e-14);
  auto p1 = det_pencil_probe({id, id}, f, 1.0);
  EXPECT_NEAR(std::abs(p1.lhs), 0.0, 1e-14);
  EXPECT_NEAR(std::abs(p1.rhs), 0.0, 1e-14);
}

TEST(DetProbe, RandomPencilAgreesWithCofactorDeterminant) {
  std::mt19937_64 rng(55);
  Pencil p{oracle::random_complex(5, rng), oracle::random_complex(5, rng)};
  const auto f = qz_decompose(p);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int k = 0; k < 5; ++k) {
    const cdouble lambda{d(rng), d(rng)};
    const auto probe = det_pencil_probe(p, f, lambda);
    const cdouble brute = oracle::cofactor_det(p.m1 - p.m2 * lambda);
    EXPECT_LE(std::abs(probe.lhs - brute), 1e-10 * (1.0 + std::abs(brute)));
    EXPECT_LE(std::abs(probe.lhs - probe.rhs), 1e-8 * (1.0 + std::abs(probe.lhs)));
  }
}

TEST(DetProbe, RefusesLargeOrder) {
  const auto id = ComplexMatrix::identity(13);
  const auto f = qz_decompose({id, id});
  try {
    det_pencil_probe({id, id}, f, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OrderTooLarge);
  }
}

TEST(InverseIdentity, IdentityAndRandomPencils) {
  const auto id = ComplexMatrix::identity(4);
  EXPECT_LE(inverse_identity_check({id, id}, qz_decompose({id, id})), 1e-14);
  std::mt19937_64 rng(12);
  Pencil p{oracle::random_real(8, rng), oracle::random_real(8, rng)};
  for (std::size_t i = 0; i < 8; ++i) p.m2(i, i) += 6.0;  // well conditioned
  EXPECT_LE(inverse_identity_check(p, qz_decompose(p)), 1e-8);
}

TEST(InverseIdentity, NearSingularM2IsRejected) {
  std::vector<cdouble> d{1.0, 1e-15, 1.0, 1.0};
  Pencil p{ComplexMatrix::identity(4), ComplexMatrix::diagonal(d)};
  const auto f = qz_decompose(p);
  try {
    inverse_identity_check(p, f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularM2);
  }
}

TEST(QzProperty, OracleEquivalenceSmallPencils) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + trial % 4;
    Pencil p{oracle::random_complex(n, rng), oracle::random_complex(n, rng)};
    const auto e = generalized_eigenvalues(qz_decompose(p));
    const auto roots = oracle::poly_roots(oracle::pencil_characteristic_polynomial(p.m1, p.m2));
    EXPECT_LE(oracle::matched_relative_error(finite_lambdas(e), roots), 1e-6) << "n=" << n;
  }
}
