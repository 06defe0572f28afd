#pragma once

// White-box attacks on the MLP (FGSM, BIM-a, BIM-b, JSMA, CW-L2), the
// surrogate-transfer Opt attack, evasion on the SVM, and label flipping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "pencil_guard/chordal.hpp"
#include "pencil_guard/spectrogram.hpp"
#include "pencil_guard/victims.hpp"

namespace pencil_guard {

enum class AttackName { Fgsm, BimA, BimB, Jsma, Cwa, Opt, Ea, Lfa };

inline std::string to_string(AttackName a) {
  switch (a) {
    case AttackName::Fgsm: return "FGSM";
    case AttackName::BimA: return "BIM-a";
    case AttackName::BimB: return "BIM-b";
    case AttackName::Jsma: return "JSMA";
    case AttackName::Cwa: return "CWA";
    case AttackName::Opt: return "OPT";
    case AttackName::Ea: return "EA";
    case AttackName::Lfa: return "LFA";
  }
  return "FGSM";
}

inline AttackName parse_attack(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  std::replace(s.begin(), s.end(), '_', '-');
  for (auto a : {AttackName::Fgsm, AttackName::BimA, AttackName::BimB, AttackName::Jsma, AttackName::Cwa, AttackName::Opt,
                 AttackName::Ea, AttackName::Lfa}) {
    auto name = to_string(a);
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (name == s) return a;
  }
  fail(ErrorCode::InvalidArgument, "unknown attack '" + s + "'");
}

struct AttackSpec {
  AttackName name = AttackName::Fgsm;
  /// infinity-norm budget (FGSM, BIM).
  double eps = 0.03;
  double step = 0.005;
  std::size_t iterations = 20;
  bool targeted = false;
  std::uint64_t seed = 0;
  /// JSMA: max fraction of pixels touched and per-pixel increment.
  double budget_fraction = 0.1;
  double theta = 0.5;
  /// CW / Opt.
  double c_init = 1.0;
  std::size_t search_steps = 5;
  double learning_rate = 0.01;
  double confidence = 0.0;
  /// LFA.
  double flip_fraction = 0.2;
};

struct ValidRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct AttackResult {
  Spectrogram adversarial;
  bool success = false;
  double epsilon_realized = 0.0;
  std::size_t iterations = 0;
  /// Realized epsilon exceeds the configured perturbation cap.
  bool over_cap = false;
};

namespace attack_detail {

inline Vec flatten(const Spectrogram& s) { return {s.data.data().begin(), s.data.data().end()}; }

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline AttackResult finish(const Spectrogram& clean, const Vec& x, AttackName name, bool success, std::size_t iters,
                           double cap) {
  AttackResult r;
  r.adversarial = clean;
  std::copy(x.begin(), x.end(), r.adversarial.data.data().begin());
  r.adversarial.tag = PerturbationTag::attacked(to_string(name));
  r.success = success;
  r.iterations = iters;
  r.epsilon_realized = epsilon_of(to_complex(clean.data), to_complex(r.adversarial.data));
  r.over_cap = r.epsilon_realized > cap;
  return r;
}

/// Untargeted CW margin Z_y - max_{j != y} Z_j (targeted: max_{j != t} Z_j - Z_t)
/// and the index of the competing logit.
inline std::pair<double, std::size_t> margin(const Vec& z, std::size_t y, bool targeted) {
  std::size_t other = y == 0 ? 1 : 0;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (j != y && z[j] > z[other]) other = j;
  return targeted ? std::pair{z[other] - z[y], other} : std::pair{z[y] - z[other], other};
}

/// L2 CW optimization in tanh space against `model`; returns the closest
/// input that `judge` accepts, or nullopt.
template <typename Judge>
std::optional<Vec> carlini_wagner(const Mlp& model, const Vec& x0, std::size_t label, const AttackSpec& spec,
                                  const ValidRange& range, Judge&& judge, std::size_t& iterations) {
  const std::size_t dim = x0.size();
  const double half = 0.5 * (range.hi - range.lo);
  auto to_x = [&](const Vec& w) {
    Vec x(dim);
    for (std::size_t d = 0; d < dim; ++d) x[d] = range.lo + half * (std::tanh(w[d]) + 1.0);
    return x;
  };
  Vec w0(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double u = std::clamp((x0[d] - range.lo) / half - 1.0, -1.0 + 1e-6, 1.0 - 1e-6);
    w0[d] = std::atanh(u);
  }
  double c = spec.c_init, c_lo = 0.0, c_hi = std::numeric_limits<double>::infinity();
  std::optional<Vec> best;
  double best_l2 = std::numeric_limits<double>::infinity();
  const std::size_t steps = spec.iterations;
  for (std::size_t search = 0; search < spec.search_steps; ++search) {
    Vec w = w0, m(dim, 0.0), v(dim, 0.0);
    bool found = false;
    double prev_loss = std::numeric_limits<double>::infinity();
    for (std::size_t it = 1; it <= steps; ++it) {
      ++iterations;
      const auto x = to_x(w);
      const auto z = model.logits(x);
      const auto [mg, other] = margin(z, label, spec.targeted);
      double l2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) l2 += (x[d] - x0[d]) * (x[d] - x0[d]);
      const double hinge = std::max(mg, -spec.confidence);
      const double loss = l2 + c * hinge;
      if (mg <= -spec.confidence && judge(x)) {
        found = true;
        if (l2 < best_l2) {
          best_l2 = l2;
          best = x;
        }
      }
      // abandon a search step that has stopped improving
      if (it % std::max<std::size_t>(1, steps / 10) == 0) {
        if (loss > 0.9999 * prev_loss) break;
        prev_loss = loss;
      }
      Vec gx(dim);
      for (std::size_t d = 0; d < dim; ++d) gx[d] = 2.0 * (x[d] - x0[d]);
      if (mg > -spec.confidence) {
        Vec cot(z.size(), 0.0);
        cot[label] = spec.targeted ? -c : c;
        cot[other] = spec.targeted ? c : -c;
        const auto gz = model.logit_gradient(x, cot);
        for (std::size_t d = 0; d < dim; ++d) gx[d] += gz[d];
      }
      const double c1 = 1.0 - std::pow(0.9, static_cast<double>(it));
      const double c2 = 1.0 - std::pow(0.999, static_cast<double>(it));
      for (std::size_t d = 0; d < dim; ++d) {
        const double t = std::tanh(w[d]);
        const double g = gx[d] * half * (1.0 - t * t);
        m[d] = 0.9 * m[d] + 0.1 * g;
        v[d] = 0.999 * v[d] + 0.001 * g * g;
        w[d] -= spec.learning_rate * (m[d] / c1) / (std::sqrt(v[d] / c2) + 1e-8);
      }
    }
    if (found) {
      c_hi = std::min(c_hi, c);
      c = 0.5 * (c_lo + c_hi);
    } else {
      c_lo = std::max(c_lo, c);
      c = std::isinf(c_hi) ? c * 10.0 : 0.5 * (c_lo + c_hi);
    }
  }
  return best;
}

}  // namespace attack_detail

/// x + eps sign(grad loss), clipped to the valid range.
inline AttackResult attack_fgsm(const Mlp& model, const Spectrogram& spec, double eps, const ValidRange& range = {},
                                double cap = std::numeric_limits<double>::infinity()) {
  auto x = attack_detail::flatten(spec);
  const auto label = spec.class_label;
  if (eps > 0.0) {
    const auto g = model.loss_gradient(x, label).second;
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = std::clamp(x[d] + eps * attack_detail::sign(g[d]), range.lo, range.hi);
  }
  return attack_detail::finish(spec, x, AttackName::Fgsm, model.predict(x) != label, 1, cap);
}

/// Iterated FGSM projected onto the eps ball. Variant a stops at the first
/// misclassification, variant b always runs every iteration.
inline AttackResult attack_bim(const Mlp& model, const Spectrogram& spec, double eps, double step, std::size_t iters,
                               bool stop_early, const ValidRange& range = {},
                               double cap = std::numeric_limits<double>::infinity()) {
  const auto x0 = attack_detail::flatten(spec);
  auto x = x0;
  const auto label = spec.class_label;
  const auto name = stop_early ? AttackName::BimA : AttackName::BimB;
  std::size_t used = 0;
  if (eps > 0.0) {
    for (std::size_t it = 0; it < iters; ++it) {
      if (stop_early && model.predict(x) != label) break;
      const auto g = model.loss_gradient(x, label).second;
      for (std::size_t d = 0; d < x.size(); ++d) {
        const double moved = x[d] + step * attack_detail::sign(g[d]);
        x[d] = std::clamp(std::clamp(moved, x0[d] - eps, x0[d] + eps), range.lo, range.hi);
      }
      ++used;
    }
  }
  return attack_detail::finish(spec, x, name, model.predict(x) != label, used, cap);
}

/// Greedy saliency-pair attack raising pixels by theta toward the runner-up
/// class (or the specified target when `target` >= 0).
inline AttackResult attack_jsma(const Mlp& model, const Spectrogram& spec, double budget_fraction, double theta,
                                const ValidRange& range = {}, int target = -1,
                                double cap = std::numeric_limits<double>::infinity()) {
  auto x = attack_detail::flatten(spec);
  const auto label = static_cast<std::size_t>(spec.class_label);
  const std::size_t dim = x.size();
  const auto max_touched = static_cast<std::size_t>(budget_fraction * static_cast<double>(dim));
  std::size_t t = static_cast<std::size_t>(target);
  if (target < 0) {
    const auto z = model.logits(x);
    t = attack_detail::margin(z, label, false).second;
  }
  std::vector<bool> active(dim, true);
  std::size_t touched = 0, iters = 0;
  constexpr std::size_t kCandidates = 48;
  while (touched + 2 <= max_touched && model.predict(x) == static_cast<int>(label) && theta != 0.0) {
    ++iters;
    Vec cot_t(model.classes(), 0.0), cot_o(model.classes(), 1.0);
    cot_t[t] = 1.0;
    cot_o[t] = 0.0;
    const auto alpha = model.logit_gradient(x, cot_t);
    const auto beta = model.logit_gradient(x, cot_o);
    const double dir = theta > 0.0 ? 1.0 : -1.0;
    std::vector<std::size_t> cand;
    for (std::size_t d = 0; d < dim; ++d) {
      if (!active[d]) continue;
      if ((dir > 0 && x[d] >= range.hi) || (dir < 0 && x[d] <= range.lo)) {
        active[d] = false;
        continue;
      }
      cand.push_back(d);
    }
    if (cand.size() < 2) break;
    const std::size_t keep = std::min(kCandidates, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(keep), cand.end(), [&](std::size_t a, std::size_t b) {
      const double sa = dir * (alpha[a] - beta[a]), sb = dir * (alpha[b] - beta[b]);
      return sa > sb || (sa == sb && a < b);
    });
    cand.resize(keep);
    double best = -1.0;
    std::size_t bp = dim, bq = dim;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      for (std::size_t j = i + 1; j < cand.size(); ++j) {
        const double a = dir * (alpha[cand[i]] + alpha[cand[j]]);
        const double b = dir * (beta[cand[i]] + beta[cand[j]]);
        if (a > 0.0 && b < 0.0 && a * -b > best) {
          best = a * -b;
          bp = cand[i];
          bq = cand[j];
        }
      }
    }
    if (bp == dim) {
      // no pair satisfies both sign conditions; fall back to the top two
      bp = cand[0];
      bq = cand[1];
    }
    for (auto p : {bp, bq}) {
      x[p] = std::clamp(x[p] + theta, range.lo, range.hi);
      active[p] = false;
      ++touched;
    }
  }
  return attack_detail::finish(spec, x, AttackName::Jsma, model.predict(x) != static_cast<int>(label), iters, cap);
}

/// Carlini-Wagner L2 with a binary search on c.
inline AttackResult attack_cwa(const Mlp& model, const Spectrogram& spec, const AttackSpec& cfg, const ValidRange& range = {},
                               double cap = std::numeric_limits<double>::infinity()) {
  const auto x0 = attack_detail::flatten(spec);
  const auto label = static_cast<std::size_t>(spec.class_label);
  std::size_t iters = 0;
  if (model.predict(x0) != static_cast<int>(label)) {
    return attack_detail::finish(spec, x0, AttackName::Cwa, true, 0, cap);
  }
  const auto best = attack_detail::carlini_wagner(
      model, x0, label, cfg, range, [&](const Vec& x) { return model.predict(x) != static_cast<int>(label); }, iters);
  return attack_detail::finish(spec, best ? *best : x0, AttackName::Cwa, best.has_value(), iters, cap);
}

/// CW optimization on an independently trained surrogate, judged on the victim.
inline AttackResult attack_opt(const Mlp& surrogate, const Mlp& victim, const Spectrogram& spec, const AttackSpec& cfg,
                               const ValidRange& range = {}, double cap = std::numeric_limits<double>::infinity()) {
  if (surrogate.input_dim() != victim.input_dim() || surrogate.classes() != victim.classes()) {
    fail(ErrorCode::GradientUnavailable, "surrogate and victim shapes differ");
  }
  const auto x0 = attack_detail::flatten(spec);
  const auto label = static_cast<std::size_t>(spec.class_label);
  std::size_t iters = 0;
  const auto best = attack_detail::carlini_wagner(
      surrogate, x0, label, cfg, range, [](const Vec&) { return true; }, iters);
  const Vec x = best ? *best : x0;
  return attack_detail::finish(spec, x, AttackName::Opt, victim.predict(x) != static_cast<int>(label), iters, cap);
}

/// Normalized gradient descent on f_y - max_{j != y} f_j of the SVM until the
/// label flips.
inline AttackResult attack_ea(const Svm& model, const Spectrogram& spec, double step, std::size_t iters,
                              const ValidRange& range = {}, double cap = std::numeric_limits<double>::infinity()) {
  auto x = attack_detail::flatten(spec);
  const auto label = static_cast<std::size_t>(spec.class_label);
  std::size_t used = 0;
  for (; used < iters; ++used) {
    const auto f = model.decision(x);
    if (argmax(f) != label) break;
    const auto other = attack_detail::margin(f, label, false).second;
    Vec w(f.size(), 0.0);
    w[label] = 1.0;
    w[other] = -1.0;
    const auto g = model.decision_gradient(x, w);
    double norm = std::sqrt(dot(g, g));
    if (norm == 0.0) break;
    for (std::size_t d = 0; d < x.size(); ++d) x[d] = std::clamp(x[d] - step * g[d] / norm, range.lo, range.hi);
  }
  return attack_detail::finish(spec, x, AttackName::Ea, model.predict(x) != static_cast<int>(label), used, cap);
}

struct LfaOutcome {
  Svm poisoned;
  std::vector<std::size_t> flipped;
  /// Test indices whose poisoned prediction differs from the clean prediction.
  std::vector<std::size_t> witnesses;
};

/// Flips the labels of the training points with the smallest decision margin
/// to their runner-up class and retrains. Ties in margin are ordered by a
/// seeded permutation.
inline LfaOutcome attack_lfa(const LabeledSet& train, const Svm& clean, const SvmConfig& cfg, double flip_fraction,
                             std::uint64_t seed, const LabeledSet& test) {
  if (!(flip_fraction > 0.0 && flip_fraction <= 0.4)) {
    fail(ErrorCode::InvalidArgument, "flip_fraction must lie in (0, 0.4]");
  }
  const std::size_t n = train.size();
  std::vector<double> margin(n);
  std::vector<std::size_t> runner(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = clean.decision(train.x[i]);
    const auto [m, other] = attack_detail::margin(f, static_cast<std::size_t>(train.y[i]), false);
    margin[i] = std::abs(m);
    runner[i] = other;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return margin[a] < margin[b]; });
  const auto count = static_cast<std::size_t>(std::llround(flip_fraction * static_cast<double>(n)));
  LfaOutcome out;
  out.flipped.assign(order.begin(), order.begin() + static_cast<long>(count));
  std::sort(out.flipped.begin(), out.flipped.end());
  LabeledSet poisoned = train;
  for (auto i : out.flipped) poisoned.y[i] = static_cast<int>(runner[i]);
  const int classes = train.classes();
  for (int c = 0; c < classes; ++c) {
    if (std::find(poisoned.y.begin(), poisoned.y.end(), c) == poisoned.y.end()) {
      fail(ErrorCode::DegenerateFlip, "flipping empties class " + std::to_string(c));
    }
  }
  out.poisoned = train_svm(poisoned, cfg, seed);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (out.poisoned.predict(test.x[i]) != clean.predict(test.x[i])) out.witnesses.push_back(i);
  }
  return out;
}

}  // namespace pencil_guard
