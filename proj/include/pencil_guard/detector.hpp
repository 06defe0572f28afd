#pragma once

// Eigenvalue features of spectrogram pencils, the logistic-regression
// detector trained on them, and ROC/AUC evaluation.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pencil_guard/qz.hpp"
#include "pencil_guard/rng.hpp"
#include "pencil_guard/spectrogram.hpp"
#include "pencil_guard/victims.hpp"

namespace pencil_guard {

enum class FeatureSource { PairQz, SingleSchur };
enum class FeatureLabel { Legitimate = 0, Adversarial = 1 };

struct FeatureConfig {
  std::size_t n = 0;
  double clip_cap = 30.0;
  std::string ordering = "canonical";

  bool operator==(const FeatureConfig&) const = default;
};

struct EigenFeature {
  Vec values;
  FeatureConfig config;
  FeatureSource source = FeatureSource::SingleSchur;
  /// Batch indices of the pair (PairQz only).
  std::size_t i = 0, j = 0;
  FeatureLabel label = FeatureLabel::Legitimate;
  int class_label = -1;
};

/// Clipped log-moduli of canonically ordered eigenvalues.
inline Vec log_moduli(const GeneralizedEigenvalues& ev, double clip_cap) {
  Vec out(ev.size());
  for (std::size_t k = 0; k < ev.size(); ++k) {
    const auto& e = ev[k];
    double v;
    if (e.kind == EigenKind::Infinite) v = clip_cap;
    else {
      const double mod = std::abs(e.lambda);
      v = mod > 0.0 ? std::log(mod) : -clip_cap;
    }
    out[k] = std::clamp(v, -clip_cap, clip_cap);
  }
  return out;
}

inline EigenFeature pair_feature(const RealMatrix& a, const RealMatrix& b, double clip_cap = 30.0,
                                 const QzOptions& qz = {}) {
  EigenFeature f;
  f.config = {a.rows(), clip_cap};
  f.source = FeatureSource::PairQz;
  f.values = log_moduli(generalized_eigenvalues(qz_decompose({to_complex(a), to_complex(b)}, qz)), clip_cap);
  return f;
}

inline EigenFeature extract_test_feature(const RealMatrix& m, double clip_cap = 30.0, const QzOptions& qz = {}) {
  if (m.rows() != m.cols()) fail(ErrorCode::DimensionMismatch, "test spectrogram must be square");
  EigenFeature f;
  f.config = {m.rows(), clip_cap};
  f.source = FeatureSource::SingleSchur;
  f.values = log_moduli(schur_eigenvalues(to_complex(m), qz), clip_cap);
  return f;
}

struct PairFeatures {
  std::vector<EigenFeature> legitimate;
  std::vector<EigenFeature> adversarial;
};

namespace detector_detail {

/// All intra-batch index pairs i != j (ordered) in a seeded order.
inline std::vector<std::pair<std::size_t, std::size_t>> shuffled_pairs(std::size_t size, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      if (i != j) out.emplace_back(i, j);
  Rng rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Computes up to `want` features from a batch, walking the seeded pair order
/// and skipping pairs whose factorization fails (at most `retries` of them).
inline std::vector<EigenFeature> batch_features(const std::vector<Spectrogram>& batch, std::size_t want,
                                                FeatureLabel label, int class_label, double clip_cap,
                                                std::uint64_t seed, std::size_t retries, std::size_t workers) {
  const auto order = shuffled_pairs(batch.size(), seed);
  want = std::min(want, order.size());
  std::vector<EigenFeature> out;
  std::size_t next = 0, failures = 0;
  while (out.size() < want && next < order.size()) {
    const std::size_t take = std::min(want - out.size(), order.size() - next);
    std::vector<std::optional<EigenFeature>> slot(take);
    parallel_for(take, workers, [&](std::size_t k) {
      const auto [i, j] = order[next + k];
      try {
        auto f = pair_feature(batch[i].data, batch[j].data, clip_cap);
        f.i = i;
        f.j = j;
        f.label = label;
        f.class_label = class_label;
        slot[k] = std::move(f);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ConvergenceFailure) throw;
      }
    });
    for (std::size_t k = 0; k < take; ++k) {
      if (slot[k]) {
        out.push_back(std::move(*slot[k]));
      } else {
        std::clog << "build_pair_features: pair (" << order[next + k].first << ", " << order[next + k].second
                  << ") of class " << class_label << " failed to factorize; resampling\n";
        if (++failures > retries) fail(ErrorCode::ConvergenceFailure, "too many failed pair factorizations");
      }
    }
    next += take;
  }
  return out;
}

}  // namespace detector_detail

/// Intra-class pair features from the legitimate and adversarial batches of
/// every class, balanced per class.
inline PairFeatures build_pair_features(const std::vector<std::vector<Spectrogram>>& legitimate,
                                        const std::vector<std::vector<Spectrogram>>& adversarial,
                                        std::size_t pairs_per_class, std::uint64_t seed, double clip_cap = 30.0,
                                        std::size_t workers = 1, std::size_t retries = 8) {
  if (legitimate.size() != adversarial.size()) {
    fail(ErrorCode::InsufficientBatch, "legitimate and adversarial batches cover different class counts");
  }
  PairFeatures out;
  if (pairs_per_class == 0) return out;
  for (std::size_t c = 0; c < legitimate.size(); ++c) {
    const auto& leg = legitimate[c];
    const auto& adv = adversarial[c];
    if (leg.size() < 2 || adv.size() < 2) {
      fail(ErrorCode::InsufficientBatch, "class " + std::to_string(c) + " has " + std::to_string(leg.size()) +
                                             " legitimate and " + std::to_string(adv.size()) +
                                             " adversarial members; at least 2 of each are needed");
    }
    const std::size_t available = std::min(leg.size() * (leg.size() - 1), adv.size() * (adv.size() - 1));
    const std::size_t want = std::min(pairs_per_class, available);
    const int label = static_cast<int>(c);
    auto l = detector_detail::batch_features(leg, want, FeatureLabel::Legitimate, label, clip_cap,
                                             derive_seed(seed, {c, 0}), retries, workers);
    auto a = detector_detail::batch_features(adv, want, FeatureLabel::Adversarial, label, clip_cap,
                                             derive_seed(seed, {c, 1}), retries, workers);
    const std::size_t keep = std::min(l.size(), a.size());
    l.resize(keep);
    a.resize(keep);
    std::move(l.begin(), l.end(), std::back_inserter(out.legitimate));
    std::move(a.begin(), a.end(), std::back_inserter(out.adversarial));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression

struct DetectorConfig {
  double reg_strength = 1.0;
  double grad_tol = 1e-6;
  std::size_t max_iterations = 200000;
};

struct DetectorModel {
  FeatureConfig config;
  /// One weight per feature column (zero for dropped columns) and a bias.
  Vec weights;
  double bias = 0.0;
  Vec mean;
  Vec scale;
  std::vector<std::size_t> dropped_columns;
  double reg_strength = 1.0;
  std::uint64_t seed = 0;
  std::string mode = "schur";
  std::vector<std::string> attacks_seen;
  double final_loss = 0.0;
  double final_grad_norm = 0.0;
  std::size_t iterations = 0;

  void check(const EigenFeature& f) const {
    if (f.config != config || f.values.size() != weights.size()) {
      fail(ErrorCode::ConfigMismatch, "feature config (n = " + std::to_string(f.config.n) + ", cap = " +
                                          std::to_string(f.config.clip_cap) + ") does not match the detector (n = " +
                                          std::to_string(config.n) + ", cap = " + std::to_string(config.clip_cap) + ")");
    }
  }

  double margin(const EigenFeature& f) const {
    check(f);
    double z = bias;
    for (std::size_t k = 0; k < weights.size(); ++k)
      if (weights[k] != 0.0) z += weights[k] * (f.values[k] - mean[k]) / scale[k];
    return z;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["feature"] = {{"n", config.n}, {"clip_cap", config.clip_cap}, {"ordering", config.ordering}};
    j["mode"] = mode;
    j["weights"] = weights;
    j["bias"] = bias;
    j["mean"] = mean;
    j["scale"] = scale;
    j["dropped_columns"] = dropped_columns;
    j["reg_strength"] = reg_strength;
    j["seed"] = seed;
    j["attacks_seen"] = attacks_seen;
    j["final_loss"] = final_loss;
    j["final_grad_norm"] = final_grad_norm;
    j["iterations"] = iterations;
    return j;
  }

  static DetectorModel from_json(const nlohmann::json& j) {
    DetectorModel m;
    m.config = {j.at("feature").at("n").get<std::size_t>(), j.at("feature").at("clip_cap").get<double>(),
                j.at("feature").at("ordering").get<std::string>()};
    m.mode = j.at("mode").get<std::string>();
    m.weights = j.at("weights").get<Vec>();
    m.bias = j.at("bias").get<double>();
    m.mean = j.at("mean").get<Vec>();
    m.scale = j.at("scale").get<Vec>();
    m.dropped_columns = j.at("dropped_columns").get<std::vector<std::size_t>>();
    m.reg_strength = j.at("reg_strength").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.attacks_seen = j.at("attacks_seen").get<std::vector<std::string>>();
    m.final_loss = j.at("final_loss").get<double>();
    m.final_grad_norm = j.at("final_grad_norm").get<double>();
    m.iterations = j.at("iterations").get<std::size_t>();
    if (m.weights.size() != m.config.n || m.mean.size() != m.config.n || m.scale.size() != m.config.n) {
      fail(ErrorCode::ConfigMismatch, "detector JSON has inconsistent vector lengths");
    }
    return m;
  }
};

namespace detector_detail {

inline double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double logistic(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

/// Mean logistic loss plus (reg / 2) |w|^2 over standardized rows; theta =
/// (w..., b). Returns the objective and fills the gradient.
inline double objective(const std::vector<Vec>& x, const std::vector<double>& y, double reg, const Vec& theta,
                        Vec& grad) {
  const std::size_t d = theta.size() - 1;
  grad.assign(theta.size(), 0.0);
  double loss = 0.0;
  for (std::size_t r = 0; r < x.size(); ++r) {
    double z = theta[d];
    for (std::size_t k = 0; k < d; ++k) z += theta[k] * x[r][k];
    loss += log1p_exp(z) - y[r] * z;
    const double err = logistic(z) - y[r];
    for (std::size_t k = 0; k < d; ++k) grad[k] += err * x[r][k];
    grad[d] += err;
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  loss *= inv;
  for (auto& g : grad) g *= inv;
  for (std::size_t k = 0; k < d; ++k) {
    loss += 0.5 * reg * theta[k] * theta[k];
    grad[k] += reg * theta[k];
  }
  return loss;
}

}  // namespace detector_detail

/// L2-regularized logistic regression on standardized features, ADVERSARIAL
/// as the positive class.
inline DetectorModel train_detector(const std::vector<EigenFeature>& legitimate,
                                    const std::vector<EigenFeature>& adversarial, const DetectorConfig& cfg,
                                    std::uint64_t seed) {
  if (legitimate.empty() || adversarial.empty()) {
    fail(ErrorCode::EmptyTrainingSet, "detector training needs both legitimate and adversarial features");
  }
  DetectorModel model;
  model.config = legitimate.front().config;
  model.reg_strength = cfg.reg_strength;
  model.seed = seed;
  const std::size_t n = model.config.n;
  std::vector<const EigenFeature*> rows;
  std::vector<double> y;
  for (const auto* set : {&legitimate, &adversarial}) {
    for (const auto& f : *set) {
      if (f.config != model.config || f.values.size() != n) {
        fail(ErrorCode::ConfigMismatch, "training features have inconsistent configs");
      }
      rows.push_back(&f);
      y.push_back(set == &adversarial ? 1.0 : 0.0);
    }
  }
  const double count = static_cast<double>(rows.size());
  model.mean.assign(n, 0.0);
  model.scale.assign(n, 1.0);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < n; ++k) {
    double s = 0.0;
    for (const auto* r : rows) s += r->values[k];
    const double mu = s / count;
    double v = 0.0;
    for (const auto* r : rows) v += (r->values[k] - mu) * (r->values[k] - mu);
    const double sd = std::sqrt(v / count);
    model.mean[k] = mu;
    if (sd > 1e-12 * std::max(1.0, std::abs(mu))) {
      model.scale[k] = sd;
      kept.push_back(k);
    } else {
      model.dropped_columns.push_back(k);
    }
  }
  if (!model.dropped_columns.empty()) {
    std::clog << "train_detector: dropped " << model.dropped_columns.size() << " zero-variance feature columns\n";
  }
  std::vector<Vec> x(rows.size(), Vec(kept.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < kept.size(); ++k)
      x[r][k] = (rows[r]->values[kept[k]] - model.mean[kept[k]]) / model.scale[kept[k]];

  Vec theta(kept.size() + 1), grad, trial_grad;
  Rng rng(seed);
  std::normal_distribution<double> init(0.0, 0.01);
  for (auto& t : theta) t = init(rng);
  double loss = detector_detail::objective(x, y, cfg.reg_strength, theta, grad);
  double step = 1.0;
  std::size_t it = 0;
  for (; it < cfg.max_iterations && std::sqrt(dot(grad, grad)) > cfg.grad_tol; ++it) {
    const double g2 = dot(grad, grad);
    Vec trial(theta.size());
    double trial_loss;
    for (;;) {
      for (std::size_t k = 0; k < theta.size(); ++k) trial[k] = theta[k] - step * grad[k];
      trial_loss = detector_detail::objective(x, y, cfg.reg_strength, trial, trial_grad);
      if (trial_loss <= loss - 0.5 * step * g2 || step < 1e-12) break;
      step *= 0.5;
    }
    theta.swap(trial);
    grad.swap(trial_grad);
    loss = trial_loss;
    step = std::min(step * 2.0, 1e3);
  }
  model.iterations = it;
  model.final_loss = loss;
  model.final_grad_norm = std::sqrt(dot(grad, grad));
  model.weights.assign(n, 0.0);
  for (std::size_t k = 0; k < kept.size(); ++k) model.weights[kept[k]] = theta[k];
  model.bias = theta.back();
  return model;
}

/// Probability that the feature is adversarial.
inline double score(const DetectorModel& model, const EigenFeature& f) {
  return detector_detail::logistic(model.margin(f));
}

// ---------------------------------------------------------------------------
// Evaluation

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct AucReport {
  double auc = 0.0;
  std::vector<RocPoint> roc;
  /// Per-class AUC for classes whose test items carry both labels.
  std::map<int, double> class_wise;
  std::optional<double> class_wise_mean;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["auc"] = auc;
    nlohmann::ordered_json cw = nlohmann::ordered_json::object();
    for (const auto& [c, a] : class_wise) cw[std::to_string(c)] = a;
    j["class_wise"] = cw;
    j["class_wise_mean"] = class_wise_mean ? nlohmann::ordered_json(*class_wise_mean) : nlohmann::ordered_json();
    auto& r = j["roc"] = nlohmann::ordered_json::array();
    for (const auto& p : roc) r.push_back({p.fpr, p.tpr});
    return j;
  }
};

/// Rank-statistic AUC with tied scores counted half.
inline double rank_auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t e = s;
    while (e < idx.size() && scores[idx[e]] == scores[idx[s]]) ++e;
    const double mid_rank = 0.5 * static_cast<double>(s + 1 + e);
    for (std::size_t k = s; k < e; ++k) {
      if (positive[idx[k]]) {
        rank_sum += mid_rank;
        pos += 1.0;
      } else {
        neg += 1.0;
      }
    }
    s = e;
  }
  if (pos == 0.0 || neg == 0.0) fail(ErrorCode::SingleClassTestSet, "AUC needs both labels in the test set");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// ROC points at every distinct score threshold, from (0, 0) to (1, 1).
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<int>& positive) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double pos = static_cast<double>(std::count(positive.begin(), positive.end(), 1));
  const double neg = static_cast<double>(positive.size()) - pos;
  if (pos == 0.0 || neg == 0.0) fail(ErrorCode::SingleClassTestSet, "ROC needs both labels in the test set");
  std::vector<RocPoint> out{{0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t e = s;
    while (e < idx.size() && scores[idx[e]] == scores[idx[s]]) {
      (positive[idx[e]] ? tp : fp) += 1.0;
      ++e;
    }
    out.push_back({fp / neg, tp / pos});
    s = e;
  }
  return out;
}

inline double trapezoid_auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t k = 1; k < roc.size(); ++k)
    area += (roc[k].fpr - roc[k - 1].fpr) * 0.5 * (roc[k].tpr + roc[k - 1].tpr);
  return area;
}

/// AUC of precomputed scores; `classes` (optional, same length) enables the
/// class-wise breakdown.
inline AucReport evaluate_auc(const std::vector<double>& scores, const std::vector<int>& positive,
                              const std::vector<int>& classes = {}) {
  if (scores.size() != positive.size() || (!classes.empty() && classes.size() != scores.size())) {
    fail(ErrorCode::LengthMismatch, "scores, labels and classes differ in length");
  }
  AucReport r;
  r.auc = rank_auc(scores, positive);
  r.roc = roc_curve(scores, positive);
  if (!classes.empty()) {
    std::map<int, std::pair<std::vector<double>, std::vector<int>>> by_class;
    for (std::size_t k = 0; k < scores.size(); ++k) {
      by_class[classes[k]].first.push_back(scores[k]);
      by_class[classes[k]].second.push_back(positive[k]);
    }
    double sum = 0.0;
    for (const auto& [c, sp] : by_class) {
      const auto pos = std::count(sp.second.begin(), sp.second.end(), 1);
      if (pos == 0 || pos == static_cast<long>(sp.second.size())) continue;
      r.class_wise[c] = rank_auc(sp.first, sp.second);
      sum += r.class_wise[c];
    }
    if (!r.class_wise.empty()) r.class_wise_mean = sum / static_cast<double>(r.class_wise.size());
  }
  return r;
}

inline AucReport evaluate_auc(const DetectorModel& model, const std::vector<EigenFeature>& features) {
  std::vector<double> scores;
  std::vector<int> positive, classes;
  for (const auto& f : features) {
    scores.push_back(model.margin(f));
    positive.push_back(f.label == FeatureLabel::Adversarial ? 1 : 0);
    classes.push_back(f.class_label);
  }
  return evaluate_auc(scores, positive, classes);
}

}  // namespace pencil_guard
