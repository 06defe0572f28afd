#pragma once

// Chordal metric on the extended complex plane, the first-order perturbation
// bound for pencil eigenvalues, and the per-tag gamma slack study.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "pencil_guard/perturbation.hpp"
#include "pencil_guard/qz.hpp"
#include "pencil_guard/rng.hpp"

namespace pencil_guard {

/// |a - b| / (sqrt(1 + |a|^2) sqrt(1 + |b|^2)); the Riemann-sphere chord, in [0, 1].
inline double chordal_distance(cdouble a, cdouble b) {
  const double num = std::abs(a - b);
  if (num == 0.0) return 0.0;
  const double d = num / (std::hypot(1.0, std::abs(a)) * std::hypot(1.0, std::abs(b)));
  return std::min(d, 1.0);
}

/// Spherical extension: chord(inf, b) = 1 / sqrt(1 + |b|^2), chord(inf, inf) = 0.
inline double chordal_distance(const Eigenvalue& a, const Eigenvalue& b) {
  const bool ai = a.kind == EigenKind::Infinite;
  const bool bi = b.kind == EigenKind::Infinite;
  if (ai && bi) return 0.0;
  if (ai) return 1.0 / std::hypot(1.0, std::abs(b.lambda));
  if (bi) return 1.0 / std::hypot(1.0, std::abs(a.lambda));
  return chordal_distance(a.lambda, b.lambda);
}

enum class Alignment { Canonical, Matching };

namespace chordal_detail {

/// Minimum-cost perfect assignment (Hungarian algorithm, O(n^3)).
/// Returns col_for_row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_for_row(n);
  for (std::size_t j = 1; j <= n; ++j) col_for_row[p[j] - 1] = j - 1;
  return col_for_row;
}

}  // namespace chordal_detail

/// Elementwise chordal distances between two eigenvalue lists, paired by
/// canonical position or by a minimum-total-chord assignment.
inline std::vector<double> chordal_vector_distance(const GeneralizedEigenvalues& e1,
                                                   const GeneralizedEigenvalues& e2,
                                                   Alignment alignment = Alignment::Canonical) {
  if (e1.size() != e2.size()) {
    fail(ErrorCode::LengthMismatch, "eigenvalue lists of length " + std::to_string(e1.size()) +
                                        " and " + std::to_string(e2.size()));
  }
  const std::size_t n = e1.size();
  std::vector<double> out(n);
  if (alignment == Alignment::Canonical) {
    for (std::size_t i = 0; i < n; ++i) out[i] = chordal_distance(e1[i], e2[i]);
    return out;
  }
  std::vector<std::vector<double>> cost(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) cost[i][j] = chordal_distance(e1[i], e2[j]);
  const auto match = chordal_detail::hungarian(cost);
  for (std::size_t i = 0; i < n; ++i) out[i] = cost[i][match[i]];
  return out;
}

namespace chordal_detail {

inline cdouble bilinear(const ComplexMatrix& m, std::span<const cdouble> x, std::span<const cdouble> y) {
  cdouble acc{};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    cdouble row{};
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) row += r[j] * x[j];
    acc += std::conj(y[i]) * row;
  }
  return acc;
}

inline ComplexVector normalized(std::span<const cdouble> v) {
  double s = 0.0;
  for (auto z : v) s += abs2(z);
  ComplexVector out(v.begin(), v.end());
  if (s == 0.0) return out;
  const double inv = 1.0 / std::sqrt(s);
  for (auto& z : out) z *= inv;
  return out;
}

/// Largest eigenvalue of the symmetric tridiagonal (alpha, beta) by Sturm bisection.
inline double tridiagonal_max_eigenvalue(const std::vector<double>& alpha, const std::vector<double>& beta) {
  const std::size_t k = alpha.size();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < k; ++i) {
    const double r = (i > 0 ? std::abs(beta[i - 1]) : 0.0) + (i + 1 < k ? std::abs(beta[i]) : 0.0);
    lo = std::min(lo, alpha[i] - r);
    hi = std::max(hi, alpha[i] + r);
  }
  auto count_above = [&](double x) {
    // number of eigenvalues greater than x = k - (number of negative pivots of T - xI)
    std::size_t negatives = 0;
    double d = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double b2 = i > 0 ? beta[i - 1] * beta[i - 1] : 0.0;
      d = alpha[i] - x - (i > 0 ? b2 / d : 0.0);
      if (d == 0.0) d = -1e-300;
      if (d < 0.0) ++negatives;
    }
    return k - negatives;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (count_above(mid) >= 1) lo = mid; else hi = mid;
  }
  return hi;
}

}  // namespace chordal_detail

/// Spectral norm of m - m_tilde: 50 power steps on Delta^H Delta, with the
/// Krylov vectors they generate orthonormalized (Lanczos) and the top Ritz
/// value extracted.
inline double epsilon_of(const ComplexMatrix& m, const ComplexMatrix& m_tilde, std::size_t steps = 50) {
  if (m.rows() != m_tilde.rows() || m.cols() != m_tilde.cols()) {
    fail(ErrorCode::DimensionMismatch, "epsilon_of operands differ in shape");
  }
  const auto delta = m - m_tilde;
  const std::size_t n = delta.cols();
  if (n == 0 || frobenius_norm(delta) == 0.0) return 0.0;
  const auto delta_h = adjoint(delta);
  auto apply = [&](const ComplexVector& v) {
    const auto w = matvec<cdouble>(delta, v);
    return matvec<cdouble>(delta_h, w);
  };
  steps = std::min(steps, n);
  std::vector<ComplexVector> basis;
  std::vector<double> alpha, beta;
  ComplexVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(static_cast<double>(3 * i + 1));
  v = chordal_detail::normalized(v);
  for (std::size_t k = 0; k < steps; ++k) {
    basis.push_back(v);
    auto w = apply(v);
    double a = 0.0;
    for (std::size_t i = 0; i < n; ++i) a += (std::conj(v[i]) * w[i]).real();
    alpha.push_back(a);
    // full reorthogonalization, twice
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        cdouble proj{};
        for (std::size_t i = 0; i < n; ++i) proj += std::conj(b[i]) * w[i];
        for (std::size_t i = 0; i < n; ++i) w[i] -= proj * b[i];
      }
    }
    double nb = 0.0;
    for (auto z : w) nb += abs2(z);
    nb = std::sqrt(nb);
    if (nb <= 1e-14 * std::max(1.0, std::abs(a)) || k + 1 == steps) break;
    beta.push_back(nb);
    for (auto& z : w) z /= nb;
    v = std::move(w);
  }
  beta.resize(alpha.size() > 0 ? alpha.size() - 1 : 0);
  const double top = chordal_detail::tridiagonal_max_eigenvalue(alpha, beta);
  return std::sqrt(std::max(top, 0.0));
}

/// eps / |y^H M x + y^H M~ x| for x, y normalized internally; nullopt marks
/// UNBOUNDED (denominator below 1e-300). `lambda` identifies the eigenvalue
/// the probe is attached to and does not enter the formula.
inline std::optional<double> perturbation_bound(const ComplexMatrix& m, const ComplexMatrix& m_tilde,
                                                [[maybe_unused]] cdouble lambda,
                                                std::span<const cdouble> x, std::span<const cdouble> y,
                                                double epsilon) {
  if (m.rows() != m_tilde.rows() || m.cols() != m_tilde.cols() || x.size() != m.cols() ||
      y.size() != m.rows()) {
    fail(ErrorCode::DimensionMismatch, "perturbation_bound operand shapes disagree");
  }
  const auto xn = chordal_detail::normalized(x);
  const auto yn = chordal_detail::normalized(y);
  const double denom = std::abs(chordal_detail::bilinear(m, xn, yn) + chordal_detail::bilinear(m_tilde, xn, yn));
  if (!(denom >= 1e-300)) return std::nullopt;
  return epsilon / denom;
}

// ---------------------------------------------------------------------------
// Gamma study

/// How the two eigenvalue sequences of a clean/perturbed pair are formed from
/// the factorization of the pencil (clean, perturbed).
enum class ChordPairing {
  /// lambda_clean = t_ii, lambda_pert = s_ii on the shared Schur basis.
  Diagonal,
  /// lambda_clean = 1 (the eigenvalue of the unperturbed pencil (M, M)),
  /// lambda_pert = t_ii / s_ii.
  Ratio,
};

struct ChordalRecord {
  cdouble lambda_clean;
  cdouble lambda_pert;
  double chord = 0.0;
  /// nullopt = UNBOUNDED.
  std::optional<double> bound;
  double gamma_slack = 0.0;
  double epsilon = 0.0;
  PerturbationTag perturbation_tag;
};

struct StudyPair {
  std::string id;
  ComplexMatrix clean;
  ComplexMatrix perturbed;
  PerturbationTag tag;
};

struct PairStudy {
  std::string id;
  PerturbationTag tag;
  double epsilon = 0.0;
  double gamma = 0.0;
  double gamma_norm = 0.0;
  double violation_rate = 0.0;
  double mean_modulus = 0.0;
};

struct StudyOptions {
  std::size_t probes = 8;
  std::uint64_t seed = 0;
  /// Pairs with epsilon above this cap fail the perturbation gate.
  double epsilon_max = std::numeric_limits<double>::infinity();
  ChordPairing pairing = ChordPairing::Ratio;
  /// true: failing pairs are logged and skipped; false: the error propagates.
  bool skip_failures = false;
  std::size_t workers = 1;
  QzOptions qz{};
};

struct TagSummary {
  std::string tag;
  std::size_t count = 0;
  double gamma_mean = 0.0;
  double gamma_std = 0.0;
  double gamma_norm_mean = 0.0;
  double epsilon_mean = 0.0;
  double bound_violation_rate = 0.0;
  std::optional<double> victim_accuracy;
};

struct SeparationReport {
  std::vector<TagSummary> tags;
  std::vector<std::string> skipped;

  const TagSummary* find(const std::string& tag) const {
    for (const auto& t : tags)
      if (t.tag == tag) return &t;
    return nullptr;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tags"] = nlohmann::ordered_json::array();
    for (const auto& t : tags) {
      nlohmann::ordered_json o;
      o["tag"] = t.tag;
      o["count"] = t.count;
      o["gamma_mean"] = t.gamma_mean;
      o["gamma_std"] = t.gamma_std;
      o["gamma_norm_mean"] = t.gamma_norm_mean;
      o["epsilon_mean"] = t.epsilon_mean;
      o["bound_violation_rate"] = t.bound_violation_rate;
      o["victim_accuracy"] = t.victim_accuracy ? nlohmann::ordered_json(*t.victim_accuracy) : nullptr;
      j["tags"].push_back(o);
    }
    j["skipped"] = skipped;
    return j;
  }

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "tag,count,gamma_mean,gamma_std,gamma_norm_mean,epsilon_mean,bound_violation_rate\n";
    for (const auto& t : tags) {
      out << t.tag << ',' << t.count << ',' << t.gamma_mean << ',' << t.gamma_std << ','
          << t.gamma_norm_mean << ',' << t.epsilon_mean << ',' << t.bound_violation_rate << '\n';
    }
    return out.str();
  }
};

/// Chord, bound and slack for one clean/perturbed pair over seeded unit probes.
/// Returns the per-eigenvalue, per-probe records when `records` is non-null.
inline PairStudy study_pair(const StudyPair& pair, const StudyOptions& options,
                            std::vector<ChordalRecord>* records = nullptr) {
  if (options.probes == 0) fail(ErrorCode::InvalidArgument, "gamma study needs at least one probe");
  PairStudy out{pair.id, pair.tag};
  out.epsilon = epsilon_of(pair.clean, pair.perturbed);
  if (out.epsilon > options.epsilon_max) {
    fail(ErrorCode::InvalidArgument, "pair " + pair.id + " violates the perturbation gate: epsilon " +
                                         std::to_string(out.epsilon) + " > " + std::to_string(options.epsilon_max));
  }
  const auto fact = qz_decompose({pair.clean, pair.perturbed}, options.qz);
  const std::size_t n = fact.order();

  std::vector<cdouble> lc(n), lp(n);
  std::vector<double> chord(n);
  double modulus = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const cdouble t = fact.t(i, i), s = fact.s(i, i);
    if (options.pairing == ChordPairing::Diagonal) {
      lc[i] = t;
      lp[i] = s;
      chord[i] = chordal_distance(t, s);
      modulus += 0.5 * (std::abs(t) + std::abs(s));
    } else {
      Eigenvalue clean_ev{1.0, 1.0, 1.0, EigenKind::Finite, i};
      Eigenvalue pert_ev{t, s, 0.0, EigenKind::Finite, i};
      if (std::abs(s) > 0.0) {
        pert_ev.lambda = t / s;
      } else if (std::abs(t) > 0.0) {
        pert_ev.kind = EigenKind::Infinite;
      } else {
        pert_ev.lambda = 1.0;
      }
      lc[i] = 1.0;
      lp[i] = pert_ev.lambda;
      chord[i] = chordal_distance(clean_ev, pert_ev);
      modulus += pert_ev.kind == EigenKind::Infinite ? 0.0 : std::abs(pert_ev.lambda);
    }
  }
  out.mean_modulus = n > 0 ? modulus / static_cast<double>(n) : 0.0;

  const std::uint64_t pair_key = hash_id(pair.id);
  double slack_sum = 0.0;
  std::size_t violations = 0;
  for (std::size_t p = 0; p < options.probes; ++p) {
    Rng rng(derive_seed(options.seed, {pair_key, p}));
    const auto x = random_unit_vector(n, rng);
    const auto y = random_unit_vector(n, rng);
    const auto bound = perturbation_bound(pair.clean, pair.perturbed, 1.0, x, y, out.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      double slack = 0.0;
      if (bound) {
        slack = std::max(0.0, chord[i] - *bound);
        if (chord[i] > *bound) ++violations;
      }
      slack_sum += slack;
      if (records) {
        records->push_back({lc[i], lp[i], chord[i], bound, slack, out.epsilon, pair.tag});
      }
    }
  }
  const double cells = static_cast<double>(n * options.probes);
  out.gamma = n > 0 ? slack_sum / cells : 0.0;
  out.violation_rate = n > 0 ? static_cast<double>(violations) / cells : 0.0;
  out.gamma_norm = out.mean_modulus > 0.0 ? out.gamma / out.mean_modulus : 0.0;
  return out;
}

/// Aggregates pair studies per tag; tags are emitted in lexicographic order and
/// every statistic is a sum over pairs, so the result does not depend on the
/// order of `studies`.
inline SeparationReport aggregate_studies(const std::vector<PairStudy>& studies) {
  struct Acc {
    std::size_t count = 0;
    double g = 0, g2 = 0, gn = 0, eps = 0, viol = 0;
  };
  std::map<std::string, Acc> acc;
  for (const auto& s : studies) {
    auto& a = acc[s.tag.label()];
    ++a.count;
    a.g += s.gamma;
    a.g2 += s.gamma * s.gamma;
    a.gn += s.gamma_norm;
    a.eps += s.epsilon;
    a.viol += s.violation_rate;
  }
  SeparationReport report;
  for (const auto& [tag, a] : acc) {
    const double c = static_cast<double>(a.count);
    TagSummary t;
    t.tag = tag;
    t.count = a.count;
    t.gamma_mean = a.g / c;
    t.gamma_std = std::sqrt(std::max(0.0, a.g2 / c - t.gamma_mean * t.gamma_mean));
    t.gamma_norm_mean = a.gn / c;
    t.epsilon_mean = a.eps / c;
    t.bound_violation_rate = a.viol / c;
    report.tags.push_back(t);
  }
  return report;
}

inline SeparationReport gamma_study(const std::vector<StudyPair>& dataset, const StudyOptions& options) {
  if (options.probes == 0) fail(ErrorCode::InvalidArgument, "gamma study needs at least one probe");
  std::vector<std::optional<PairStudy>> results(dataset.size());
  std::vector<std::string> errors(dataset.size());
  parallel_for(dataset.size(), resolve_workers(options.workers), [&](std::size_t i) {
    try {
      results[i] = study_pair(dataset[i], options);
    } catch (const Error& e) {
      if (!options.skip_failures) throw Error(e.code(), "pair " + dataset[i].id + ": " + e.what());
      errors[i] = dataset[i].id + ": " + e.what();
    }
  });
  std::vector<PairStudy> ok;
  std::vector<std::string> skipped;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (results[i]) ok.push_back(*results[i]);
    else if (!errors[i].empty()) {
      std::clog << "gamma_study: skipped " << errors[i] << '\n';
      skipped.push_back(errors[i]);
    }
  }
  auto report = aggregate_studies(ok);
  report.skipped = std::move(skipped);
  return report;
}

}  // namespace pencil_guard
