#pragma once

// Desk-scale victim classifiers: a rectifier MLP with softmax output and a
// one-vs-rest RBF SVM trained by SMO. Both expose input gradients.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "pencil_guard/error.hpp"
#include "pencil_guard/pgm1.hpp"
#include "pencil_guard/rng.hpp"

namespace pencil_guard {

using Vec = std::vector<double>;

struct LabeledSet {
  std::vector<Vec> x;
  std::vector<int> y;

  std::size_t size() const { return x.size(); }
  std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }
  int classes() const { return y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1; }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Vec softmax(std::span<const double> z) {
  Vec p(z.begin(), z.end());
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (auto& v : p) s += (v = std::exp(v - m));
  for (auto& v : p) v /= s;
  return p;
}

// ---------------------------------------------------------------------------
// MLP

struct MlpConfig {
  std::vector<std::size_t> hidden{128, 64};
  std::size_t epochs = 30;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
};

class Mlp {
 public:
  struct Layer {
    std::size_t in = 0, out = 0;
    Vec w;  // out x in, row-major
    Vec b;
  };

  /// Pre-activations and activations of every layer for one input.
  struct Trace {
    std::vector<Vec> z;
    std::vector<Vec> a;
  };

  Mlp() = default;

  Mlp(std::vector<std::size_t> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) fail(ErrorCode::InvalidArgument, "an MLP needs at least input and output sizes");
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      Layer layer{sizes_[l], sizes_[l + 1], Vec(sizes_[l] * sizes_[l + 1]), Vec(sizes_[l + 1], 0.0)};
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(layer.in)));
      for (auto& v : layer.w) v = g(rng);
      layers_.push_back(std::move(layer));
    }
  }

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t classes() const { return sizes_.back(); }
  std::vector<double>& loss_log() { return loss_log_; }
  const std::vector<double>& loss_log() const { return loss_log_; }

  Trace trace(std::span<const double> x) const {
    if (x.size() != input_dim()) fail(ErrorCode::GradientUnavailable, "input length does not match the model");
    Trace t;
    t.a.emplace_back(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      Vec z(L.out);
      for (std::size_t o = 0; o < L.out; ++o) z[o] = L.b[o] + dot({L.w.data() + o * L.in, L.in}, t.a.back());
      Vec a = z;
      if (l + 1 < layers_.size())
        for (auto& v : a) v = std::max(v, 0.0);
      t.z.push_back(std::move(z));
      t.a.push_back(std::move(a));
    }
    return t;
  }

  Vec logits(std::span<const double> x) const { return trace(x).a.back(); }
  Vec probabilities(std::span<const double> x) const { return softmax(logits(x)); }
  int predict(std::span<const double> x) const { return static_cast<int>(argmax(logits(x))); }

  /// Pulls a logit cotangent back to the input; accumulates parameter
  /// gradients into `grads` when given.
  Vec backward(const Trace& t, Vec delta, std::vector<Layer>* grads = nullptr) const {
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& L = layers_[l];
      if (grads) {
        auto& G = (*grads)[l];
        for (std::size_t o = 0; o < L.out; ++o) {
          if (delta[o] == 0.0) continue;
          G.b[o] += delta[o];
          double* row = G.w.data() + o * L.in;
          const auto& a = t.a[l];
          for (std::size_t i = 0; i < L.in; ++i) row[i] += delta[o] * a[i];
        }
      }
      Vec prev(L.in, 0.0);
      for (std::size_t o = 0; o < L.out; ++o) {
        if (delta[o] == 0.0) continue;
        const double* row = L.w.data() + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) prev[i] += delta[o] * row[i];
      }
      if (l > 0)
        for (std::size_t i = 0; i < L.in; ++i)
          if (t.z[l - 1][i] <= 0.0) prev[i] = 0.0;
      delta = std::move(prev);
    }
    return delta;
  }

  /// Cross-entropy loss at `label` and its gradient with respect to the input.
  std::pair<double, Vec> loss_gradient(std::span<const double> x, int label) const {
    const auto t = trace(x);
    const auto& z = t.a.back();
    const auto y = static_cast<std::size_t>(label);
    const std::size_t top = argmax(z);
    // log-sum-exp without the top term, so a saturated loss keeps its digits
    double rest = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j)
      if (j != top) rest += std::exp(z[j] - z[top]);
    const double loss = (z[top] - z[y]) + std::log1p(rest);
    Vec p(z.size());
    const double s = 1.0 + rest;
    double others = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      p[j] = (j == top ? 1.0 : std::exp(z[j] - z[top])) / s;
      if (j != y) others += p[j];
    }
    p[y] = -others;
    return {loss, backward(t, std::move(p))};
  }

  /// Gradient of sum_k cotangent[k] * logit_k with respect to the input.
  Vec logit_gradient(std::span<const double> x, Vec cotangent) const { return backward(trace(x), std::move(cotangent)); }

  double accuracy(const LabeledSet& data) const {
    if (data.size() == 0) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < data.size(); ++i) ok += predict(data.x[i]) == data.y[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(data.size());
  }

  nlohmann::ordered_json describe() const {
    nlohmann::ordered_json j;
    j["kind"] = "mlp";
    j["sizes"] = sizes_;
    j["activation"] = "relu";
    j["output"] = "softmax";
    j["loss_log"] = loss_log_;
    return j;
  }

  /// <dir>/<name>.json plus one PGM1 block per weight matrix and bias.
  void save(const std::filesystem::path& dir, const std::string& name) const {
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      pgm1::save(dir / (name + ".w" + std::to_string(l) + ".pgm1"), RealMatrix(L.out, L.in, L.w));
      pgm1::save(dir / (name + ".b" + std::to_string(l) + ".pgm1"), RealMatrix(L.out, 1, L.b));
    }
    std::ofstream out(dir / (name + ".json"), std::ios::trunc);
    out << describe().dump(2) << '\n';
  }

  static Mlp load(const std::filesystem::path& dir, const std::string& name) {
    std::ifstream in(dir / (name + ".json"));
    if (!in) fail(ErrorCode::MissingArtifact, "missing model " + (dir / (name + ".json")).string());
    const auto j = nlohmann::json::parse(in);
    Mlp m;
    m.sizes_ = j.at("sizes").get<std::vector<std::size_t>>();
    m.loss_log_ = j.at("loss_log").get<std::vector<double>>();
    for (std::size_t l = 0; l + 1 < m.sizes_.size(); ++l) {
      const auto w = pgm1::load_real(dir / (name + ".w" + std::to_string(l) + ".pgm1"));
      const auto b = pgm1::load_real(dir / (name + ".b" + std::to_string(l) + ".pgm1"));
      if (w.rows() != m.sizes_[l + 1] || w.cols() != m.sizes_[l]) fail(ErrorCode::CorruptHeader, "weight shape mismatch");
      m.layers_.push_back({m.sizes_[l], m.sizes_[l + 1], {w.data().begin(), w.data().end()}, {b.data().begin(), b.data().end()}});
    }
    return m;
  }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Layer> layers_;
  std::vector<double> loss_log_;
};

/// Minibatch Adam on cross-entropy with decoupled weight decay.
inline Mlp train_mlp(const LabeledSet& train, const MlpConfig& cfg, std::uint64_t seed) {
  if (train.size() == 0) fail(ErrorCode::EmptyTrainingSet, "no training samples");
  const int classes = train.classes();
  if (classes < 2) fail(ErrorCode::InvalidArgument, "training needs at least two classes");
  std::vector<std::size_t> sizes{train.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(static_cast<std::size_t>(classes));
  Mlp model(sizes, derive_seed(seed, {1}));

  auto zero_like = [&] {
    auto g = model.layers();
    for (auto& L : g) {
      std::fill(L.w.begin(), L.w.end(), 0.0);
      std::fill(L.b.begin(), L.b.end(), 0.0);
    }
    return g;
  };
  auto m1 = zero_like(), m2 = zero_like();
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t step = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {2}));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      auto grads = zero_like();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& x = train.x[order[k]];
        const int label = train.y[order[k]];
        const auto t = model.trace(x);
        auto p = softmax(t.a.back());
        epoch_loss -= std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300));
        p[static_cast<std::size_t>(label)] -= 1.0;
        model.backward(t, std::move(p), &grads);
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto update = [&](Vec& param, const Vec& grad, Vec& mom, Vec& var, bool decay) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double g = grad[i] * scale;
          mom[i] = beta1 * mom[i] + (1 - beta1) * g;
          var[i] = beta2 * var[i] + (1 - beta2) * g * g;
          param[i] -= cfg.learning_rate * ((mom[i] / c1) / (std::sqrt(var[i] / c2) + adam_eps) +
                                           (decay ? cfg.weight_decay * param[i] : 0.0));
        }
      };
      for (std::size_t l = 0; l < model.layers().size(); ++l) {
        update(model.layers()[l].w, grads[l].w, m1[l].w, m2[l].w, true);
        update(model.layers()[l].b, grads[l].b, m1[l].b, m2[l].b, false);
      }
    }
    epoch_loss /= static_cast<double>(train.size());
    if (!std::isfinite(epoch_loss)) fail(ErrorCode::DivergedTraining, "loss became non-finite at epoch " + std::to_string(epoch));
    model.loss_log().push_back(epoch_loss);
  }
  return model;
}

// ---------------------------------------------------------------------------
// SVM

struct SvmConfig {
  double c = 10.0;
  /// RBF bandwidth; 0 selects 1 / median squared pairwise distance.
  double gamma = 0.0;
  double tolerance = 1e-3;
  std::size_t max_iterations = 200000;
};

struct BinarySvm {
  std::vector<std::size_t> support;  // indices into the owning model's vectors
  Vec coef;                          // alpha_i y_i
  double bias = 0.0;
};

class Svm {
 public:
  Svm() = default;

  double gamma() const { return gamma_; }
  double c() const { return c_; }
  std::size_t classes() const { return machines_.size(); }
  const std::vector<Vec>& vectors() const { return vectors_; }
  const std::vector<BinarySvm>& machines() const { return machines_; }

  double kernel(std::span<const double> a, std::span<const double> b) const {
    return std::exp(-gamma_ * squared_distance(a, b));
  }

  /// One-vs-rest decision values.
  Vec decision(std::span<const double> x) const {
    if (!vectors_.empty() && x.size() != vectors_.front().size()) {
      fail(ErrorCode::GradientUnavailable, "input length does not match the model");
    }
    std::vector<double> k(vectors_.size());
    for (std::size_t i = 0; i < vectors_.size(); ++i) k[i] = kernel(vectors_[i], x);
    Vec out(machines_.size());
    for (std::size_t c = 0; c < machines_.size(); ++c) {
      const auto& m = machines_[c];
      double f = m.bias;
      for (std::size_t s = 0; s < m.support.size(); ++s) f += m.coef[s] * k[m.support[s]];
      out[c] = f;
    }
    return out;
  }

  int predict(std::span<const double> x) const { return static_cast<int>(argmax(decision(x))); }

  /// Gradient of sum_c weights[c] * f_c(x) with respect to x.
  Vec decision_gradient(std::span<const double> x, std::span<const double> weights) const {
    Vec g(x.size(), 0.0);
    std::vector<double> coef(vectors_.size(), 0.0);
    for (std::size_t c = 0; c < machines_.size(); ++c) {
      if (weights[c] == 0.0) continue;
      const auto& m = machines_[c];
      for (std::size_t s = 0; s < m.support.size(); ++s) coef[m.support[s]] += weights[c] * m.coef[s];
    }
    for (std::size_t i = 0; i < vectors_.size(); ++i) {
      if (coef[i] == 0.0) continue;
      const double k = kernel(vectors_[i], x);
      const double f = -2.0 * gamma_ * coef[i] * k;
      for (std::size_t d = 0; d < x.size(); ++d) g[d] += f * (x[d] - vectors_[i][d]);
    }
    return g;
  }

  double accuracy(const LabeledSet& data) const {
    if (data.size() == 0) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < data.size(); ++i) ok += predict(data.x[i]) == data.y[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(data.size());
  }

  void save(const std::filesystem::path& dir, const std::string& name) const {
    std::filesystem::create_directories(dir);
    const std::size_t d = vectors_.empty() ? 0 : vectors_.front().size();
    RealMatrix sv(vectors_.size(), d);
    for (std::size_t i = 0; i < vectors_.size(); ++i) std::copy(vectors_[i].begin(), vectors_[i].end(), sv.row(i).begin());
    pgm1::save(dir / (name + ".sv.pgm1"), sv);
    nlohmann::ordered_json j;
    j["kind"] = "svm";
    j["kernel"] = "rbf";
    j["gamma"] = gamma_;
    j["c"] = c_;
    j["machines"] = nlohmann::ordered_json::array();
    for (const auto& m : machines_) j["machines"].push_back({{"support", m.support}, {"coef", m.coef}, {"bias", m.bias}});
    std::ofstream out(dir / (name + ".json"), std::ios::trunc);
    out << j.dump(2) << '\n';
  }

  static Svm load(const std::filesystem::path& dir, const std::string& name) {
    std::ifstream in(dir / (name + ".json"));
    if (!in) fail(ErrorCode::MissingArtifact, "missing model " + (dir / (name + ".json")).string());
    const auto j = nlohmann::json::parse(in);
    Svm s;
    s.gamma_ = j.at("gamma").get<double>();
    s.c_ = j.at("c").get<double>();
    for (const auto& m : j.at("machines")) {
      s.machines_.push_back({m.at("support").get<std::vector<std::size_t>>(), m.at("coef").get<Vec>(), m.at("bias").get<double>()});
    }
    const auto sv = pgm1::load_real(dir / (name + ".sv.pgm1"));
    for (std::size_t i = 0; i < sv.rows(); ++i) s.vectors_.emplace_back(sv.row(i).begin(), sv.row(i).end());
    return s;
  }

  friend Svm train_svm(const LabeledSet& train, const SvmConfig& cfg, std::uint64_t seed);

 private:
  double gamma_ = 1.0;
  double c_ = 1.0;
  std::vector<Vec> vectors_;
  std::vector<BinarySvm> machines_;
};

namespace svm_detail {

/// Binary dual solver with maximal-violating-pair working sets (two
/// variables per step) on a precomputed kernel matrix. Returns alpha and b.
inline std::pair<Vec, double> smo(const std::vector<double>& kmat, std::size_t n, const std::vector<int>& y, double c,
                                  double tol, std::size_t max_iter) {
  Vec alpha(n, 0.0);
  Vec grad(n, -1.0);  // gradient of 0.5 a^T Q a - e^T a, Q_ij = y_i y_j K_ij
  auto K = [&](std::size_t i, std::size_t j) { return kmat[i * n + j]; };
  for (std::size_t iter = 0;; ++iter) {
    // i maximizes -y_i grad_i over I_up, j minimizes over I_low
    std::size_t i = n, j = n;
    double gmax = -1e300, gmin = 1e300;
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -y[t] * grad[t];
      const bool up = (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0);
      const bool low = (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < c);
      if (up && v > gmax) {
        gmax = v;
        i = t;
      }
      if (low && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i == n || j == n || gmax - gmin < tol) {
      double b = 0.0;
      std::size_t free = 0;
      for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] > 1e-12 && alpha[t] < c - 1e-12) {
          b += -y[t] * grad[t];
          ++free;
        }
      }
      b = free > 0 ? b / static_cast<double>(free) : 0.5 * (gmax + gmin);
      return {alpha, b};
    }
    if (iter >= max_iter) fail(ErrorCode::NoConvergence, "SMO did not reach the KKT tolerance");
    const double yi = y[i], yj = y[j];
    double quad = K(i, i) + K(j, j) - 2.0 * K(i, j);
    if (quad <= 0.0) quad = 1e-12;
    // step along direction (+y_i on alpha_i, -y_j on alpha_j)
    double step = (gmax - gmin) / quad;
    const double room_i = yi > 0 ? c - alpha[i] : alpha[i];
    const double room_j = yj > 0 ? alpha[j] : c - alpha[j];
    step = std::min({step, room_i, room_j});
    const double dai = yi * step, daj = -yj * step;
    alpha[i] = std::clamp(alpha[i] + dai, 0.0, c);
    alpha[j] = std::clamp(alpha[j] + daj, 0.0, c);
    for (std::size_t t = 0; t < n; ++t) grad[t] += y[t] * (yi * K(t, i) * dai + yj * K(t, j) * daj);
  }
}

inline double median_gamma(const std::vector<Vec>& x) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); j += std::max<std::size_t>(1, x.size() / 64)) d.push_back(squared_distance(x[i], x[j]));
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
  const double med = d[d.size() / 2];
  return med > 0.0 ? 1.0 / med : 1.0;
}

}  // namespace svm_detail

/// One-vs-rest RBF SVM. The seed is unused by the deterministic solver and
/// kept for interface symmetry with the MLP.
inline Svm train_svm(const LabeledSet& train, const SvmConfig& cfg, [[maybe_unused]] std::uint64_t seed = 0) {
  if (train.size() == 0) fail(ErrorCode::EmptyTrainingSet, "no training samples");
  const int classes = train.classes();
  if (classes < 2) fail(ErrorCode::InvalidArgument, "training needs at least two classes");
  Svm model;
  model.c_ = cfg.c;
  model.gamma_ = cfg.gamma > 0.0 ? cfg.gamma : svm_detail::median_gamma(train.x);
  const std::size_t n = train.size();
  std::vector<double> kmat(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) kmat[i * n + j] = kmat[j * n + i] = model.kernel(train.x[i], train.x[j]);

  std::vector<bool> used(n, false);
  for (int c = 0; c < classes; ++c) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = train.y[i] == c ? 1 : -1;
    auto [alpha, b] = svm_detail::smo(kmat, n, y, cfg.c, cfg.tolerance, cfg.max_iterations);
    BinarySvm m;
    m.bias = b;
    for (std::size_t i = 0; i < n; ++i) {
      if (alpha[i] > 1e-10) {
        m.support.push_back(i);
        m.coef.push_back(alpha[i] * y[i]);
        used[i] = true;
      }
    }
    model.machines_.push_back(std::move(m));
  }
  // keep only support vectors and renumber
  std::vector<std::size_t> remap(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!used[i]) continue;
    remap[i] = model.vectors_.size();
    model.vectors_.push_back(train.x[i]);
  }
  for (auto& m : model.machines_)
    for (auto& s : m.support) s = remap[s];
  return model;
}

}  // namespace pencil_guard
