#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pencil_guard/chordal.hpp"

using namespace pencil_guard;

namespace {

ComplexMatrix random_unitary(std::size_t n, std::mt19937_64& rng) {
  // Gram-Schmidt on a complex Gaussian matrix
  auto a = oracle::random_complex(n, rng);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      cdouble proj{};
      for (std::size_t i = 0; i < n; ++i) proj += std::conj(a(i, k)) * a(i, j);
      for (std::size_t i = 0; i < n; ++i) a(i, j) -= proj * a(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += std::norm(a(i, j));
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) a(i, j) /= norm;
  }
  return a;
}

Eigenvalue finite_ev(cdouble z) { return {z, 1.0, z, EigenKind::Finite, 0}; }
Eigenvalue infinite_ev() { return {1.0, 0.0, 0.0, EigenKind::Infinite, 0}; }

}  // namespace

TEST(Chordal, AnchorValues) {
  EXPECT_NEAR(chordal_distance(0.0, 1.0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(chordal_distance(1.0, -1.0), 1.0, 1e-15);
  EXPECT_EQ(chordal_distance(cdouble(2, 3), cdouble(2, 3)), 0.0);
  EXPECT_NEAR(chordal_distance(cdouble(0, 1), cdouble(0, -1)), 1.0, 1e-15);
}

TEST(Chordal, InfinityUsesSphericalLimit) {
  EXPECT_EQ(chordal_distance(infinite_ev(), infinite_ev()), 0.0);
  EXPECT_NEAR(chordal_distance(infinite_ev(), finite_ev(0.0)), 1.0, 1e-15);
  EXPECT_NEAR(chordal_distance(finite_ev(2.0), infinite_ev()), 1.0 / std::sqrt(5.0), 1e-15);
  // continuity: a huge finite point is close to infinity
  EXPECT_NEAR(chordal_distance(finite_ev(1e9), finite_ev(3.0)), chordal_distance(infinite_ev(), finite_ev(3.0)), 1e-8);
}

TEST(Chordal, MetricPropertiesOnRandomTriples) {
  std::mt19937_64 rng(4);
  std::cauchy_distribution<double> heavy(0.0, 1.0);
  std::size_t violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const cdouble a{heavy(rng), heavy(rng)}, b{heavy(rng), heavy(rng)}, c{heavy(rng), heavy(rng)};
    const double ab = chordal_distance(a, b), bc = chordal_distance(b, c), ac = chordal_distance(a, c);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, 1.0);
    ASSERT_EQ(ab, chordal_distance(b, a));
    if (ac > ab + bc + 1e-12) ++violations;
  }
  EXPECT_EQ(violations, 0u);
}

TEST(Chordal, VectorDistanceLengthsAndMatching) {
  GeneralizedEigenvalues e1{{finite_ev(1.0), finite_ev(5.0)}, 0.0};
  GeneralizedEigenvalues e2{{finite_ev(5.0), finite_ev(1.0)}, 0.0};
  const auto canonical = chordal_vector_distance(e1, e2);
  ASSERT_EQ(canonical.size(), 2u);
  EXPECT_GT(canonical[0], 0.1);
  const auto matched = chordal_vector_distance(e1, e2, Alignment::Matching);
  EXPECT_EQ(matched[0], 0.0);
  EXPECT_EQ(matched[1], 0.0);
  GeneralizedEigenvalues e3{{finite_ev(1.0)}, 0.0};
  try {
    chordal_vector_distance(e1, e3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
}

TEST(Chordal, HungarianMatchesBruteForce) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + trial % 6;
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (auto& row : cost)
      for (auto& c : row) c = u(rng);
    const auto match = chordal_detail::hungarian(cost);
    double got = 0.0;
    for (std::size_t i = 0; i < n; ++i) got += cost[i][match[i]];
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += cost[i][perm[i]];
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(Bound, IdentityExample) {
  const auto eye = ComplexMatrix::identity(3);
  ComplexVector e1{1.0, 0.0, 0.0};
  const auto b = perturbation_bound(eye, eye, 1.0, e1, e1, 0.01);
  ASSERT_TRUE(b.has_value());
  EXPECT_NEAR(*b, 0.005, 1e-15);
  // probes are normalized internally
  ComplexVector scaled{4.0, 0.0, 0.0};
  EXPECT_NEAR(*perturbation_bound(eye, eye, 1.0, scaled, scaled, 0.01), 0.005, 1e-15);
}

TEST(Bound, OrthogonalProbeIsUnbounded) {
  const auto eye = ComplexMatrix::identity(3);
  ComplexVector x{1.0, 0.0, 0.0}, y{0.0, 1.0, 0.0};
  EXPECT_FALSE(perturbation_bound(eye, eye, 1.0, x, y, 0.01).has_value());
  EXPECT_THROW(perturbation_bound(eye, ComplexMatrix::identity(2), 1.0, x, y, 0.01), Error);
}

TEST(Epsilon, TrivialCases) {
  std::mt19937_64 rng(1);
  const auto m = oracle::random_complex(5, rng);
  EXPECT_EQ(epsilon_of(m, m), 0.0);
  ComplexMatrix d(3, 3);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  d(2, 2) = 0.5;
  EXPECT_NEAR(epsilon_of(d, ComplexMatrix(3, 3)), 3.0, 1e-12);
  EXPECT_THROW(epsilon_of(m, ComplexMatrix(4, 4)), Error);
}

TEST(Epsilon, AgreesWithJacobiOracle) {
  std::mt19937_64 rng(21);
  for (std::size_t n : {2u, 5u, 8u, 16u, 64u}) {
    const auto a = oracle::random_complex(n, rng);
    const auto b = oracle::random_complex(n, rng);
    const double expect = oracle::jacobi_spectral_norm(a - b);
    EXPECT_NEAR(epsilon_of(a, b) / expect, 1.0, 1e-6) << "n=" << n;
  }
}

TEST(Epsilon, ScalesLinearly) {
  std::mt19937_64 rng(5);
  const auto m = oracle::random_complex(12, rng);
  const auto e = oracle::random_complex(12, rng);
  auto scaled = e;
  scaled *= cdouble(2.5);
  EXPECT_NEAR(epsilon_of(m, m + scaled), 2.5 * epsilon_of(m, m + e), 1e-9 * epsilon_of(m, m + scaled));
}

TEST(GammaStudy, IdenticalPairsGiveZero) {
  std::mt19937_64 rng(2);
  std::vector<StudyPair> data;
  for (int i = 0; i < 4; ++i) {
    const auto m = oracle::random_complex(6, rng);
    data.push_back({"p" + std::to_string(i), m, m, i % 2 ? PerturbationTag::noisy(0.01) : PerturbationTag::attacked("FGSM")});
  }
  StudyOptions opts;
  opts.probes = 4;
  const auto report = gamma_study(data, opts);
  ASSERT_EQ(report.tags.size(), 2u);
  for (const auto& t : report.tags) {
    EXPECT_EQ(t.count, 2u);
    EXPECT_NEAR(t.gamma_mean, 0.0, 1e-12);
    EXPECT_NEAR(t.epsilon_mean, 0.0, 1e-12);
  }
}

TEST(GammaStudy, DeterministicAcrossWorkerCounts) {
  std::mt19937_64 rng(3);
  std::vector<StudyPair> data;
  for (int i = 0; i < 6; ++i) {
    const auto m = oracle::random_complex(8, rng);
    auto e = oracle::random_complex(8, rng);
    e *= cdouble(0.05);
    data.push_back({"q" + std::to_string(i), m, m + e, PerturbationTag::noisy(0.05)});
  }
  StudyOptions opts;
  opts.seed = 9;
  opts.workers = 1;
  const auto a = gamma_study(data, opts);
  opts.workers = 3;
  const auto b = gamma_study(data, opts);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_GT(a.tags.at(0).gamma_mean, 0.0);
}

TEST(GammaStudy, GateAndSkipPolicy) {
  std::mt19937_64 rng(6);
  const auto m = oracle::random_complex(4, rng);
  auto far = m;
  far(0, 0) += 10.0;
  std::vector<StudyPair> data{{"ok", m, m, PerturbationTag::noisy(0.01)}, {"far", m, far, PerturbationTag::attacked("EA")}};
  StudyOptions opts;
  opts.epsilon_max = 1.0;
  EXPECT_THROW(gamma_study(data, opts), Error);
  opts.skip_failures = true;
  const auto report = gamma_study(data, opts);
  ASSERT_EQ(report.skipped.size(), 1u);
  EXPECT_NE(report.skipped[0].find("far"), std::string::npos);
  EXPECT_EQ(report.tags.size(), 1u);
  opts.probes = 0;
  EXPECT_THROW(gamma_study(data, opts), Error);
}

TEST(GammaStudy, InvariantUnderJointUnitarySimilarity) {
  std::mt19937_64 rng(12);
  const std::size_t n = 8;
  const auto m = oracle::random_complex(n, rng);
  auto e = oracle::random_complex(n, rng);
  e *= cdouble(1e-3);
  const auto mt = m + e;
  const auto u = random_unitary(n, rng);
  const auto rot = [&](const ComplexMatrix& a) { return matmul(matmul(u, a), adjoint(u)); };

  // ratio pairing: chords depend on the pencil eigenvalues alone
  auto chords = [](const ComplexMatrix& a, const ComplexMatrix& b) {
    StudyOptions opts;
    opts.pairing = ChordPairing::Ratio;
    opts.probes = 1;
    std::vector<ChordalRecord> records;
    study_pair({"u", a, b, PerturbationTag::noisy(0.01)}, opts, &records);
    std::vector<double> c;
    for (const auto& r : records) c.push_back(r.chord);
    std::sort(c.begin(), c.end());
    return c;
  };
  const auto c0 = chords(m, mt);
  const auto c1 = chords(rot(m), rot(mt));
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(c0[i], c1[i], 1e-8);

  Rng prng(1);
  const auto x = random_unit_vector(n, prng);
  const auto y = random_unit_vector(n, prng);
  const auto ux = matvec<cdouble>(u, x);
  const auto uy = matvec<cdouble>(u, y);
  const double eps0 = epsilon_of(m, mt), eps1 = epsilon_of(rot(m), rot(mt));
  EXPECT_NEAR(eps0, eps1, 1e-10);
  EXPECT_NEAR(*perturbation_bound(m, mt, 1.0, x, y, eps0), *perturbation_bound(rot(m), rot(mt), 1.0, ux, uy, eps1), 1e-8);
}

TEST(GammaStudy, DiagonalPairingInvariantUnderCommonPhase) {
  std::mt19937_64 rng(14);
  const auto m = oracle::random_complex(8, rng);
  auto e = oracle::random_complex(8, rng);
  e *= cdouble(1e-3);
  const auto mt = m + e;
  const cdouble phase = std::polar(1.0, 0.7);
  auto pm = m, pmt = mt;
  pm *= phase;
  pmt *= phase;
  StudyOptions opts;
  opts.pairing = ChordPairing::Diagonal;
  const auto a = study_pair({"d", m, mt, PerturbationTag::attacked("FGSM")}, opts);
  const auto b = study_pair({"d", pm, pmt, PerturbationTag::attacked("FGSM")}, opts);
  EXPECT_NEAR(a.gamma, b.gamma, 1e-10);
  EXPECT_NEAR(a.epsilon, b.epsilon, 1e-12);
}

TEST(GammaStudy, RatioPairingRecordsAndCsv) {
  std::mt19937_64 rng(13);
  const auto m = oracle::random_complex(5, rng);
  auto e = oracle::random_complex(5, rng);
  e *= cdouble(1e-6);
  StudyOptions opts;
  opts.pairing = ChordPairing::Ratio;
  opts.probes = 3;
  std::vector<ChordalRecord> records;
  const auto s = study_pair({"r", m, m + e, PerturbationTag::attacked("FGSM")}, opts, &records);
  EXPECT_EQ(records.size(), 15u);
  for (const auto& r : records) {
    EXPECT_GE(r.chord, 0.0);
    EXPECT_LE(r.chord, 1.0);
    EXPECT_LT(std::abs(r.lambda_pert - 1.0), 1e-3);
    if (r.bound) {
      EXPECT_NEAR(r.gamma_slack, std::max(0.0, r.chord - *r.bound), 1e-15);
    }
  }
  const auto report = aggregate_studies({s});
  const auto csv = report.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "tag,count,gamma_mean,gamma_std,gamma_norm_mean,epsilon_mean,bound_violation_rate");
  EXPECT_NE(csv.find("ATTACK(FGSM),1,"), std::string::npos);
}

TEST(Tag, LabelRoundTrip) {
  for (const auto& t : {PerturbationTag::clean(), PerturbationTag::noisy(0.02), PerturbationTag::attacked("BIM-a")}) {
    EXPECT_EQ(PerturbationTag::parse(t.label()), t);
  }
  EXPECT_EQ(PerturbationTag::noisy(0.05).label(), "NOISY(0.05)");
  EXPECT_THROW(PerturbationTag::parse("LOUD"), Error);
}
