#pragma once

// Complex Morlet scalogram, visualization mappings, bilinear resize and the
// finalized square Spectrogram with its sidecar metadata.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numbers>

#include "json.hpp"

#include "pencil_guard/audio.hpp"
#include "pencil_guard/chordal.hpp"
#include "pencil_guard/perturbation.hpp"

namespace pencil_guard {

enum class Visualization { Linear, Log, LogReal };

inline std::string to_string(Visualization v) {
  switch (v) {
    case Visualization::Linear: return "LINEAR";
    case Visualization::Log: return "LOG";
    case Visualization::LogReal: return "LOG_REAL";
  }
  return "LINEAR";
}

inline Visualization parse_visualization(const std::string& s) {
  if (s == "LINEAR") return Visualization::Linear;
  if (s == "LOG") return Visualization::Log;
  if (s == "LOG_REAL") return Visualization::LogReal;
  fail(ErrorCode::InvalidArgument, "unknown visualization '" + s + "'");
}

namespace spectro_detail {

/// FFTW's planner is not re-entrant; execution on fresh arrays is.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct R2cPlan {
  fftw_plan plan = nullptr;
  std::size_t n = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;

  explicit R2cPlan(std::size_t len) : n(len) {
    std::lock_guard lock(planner_mutex());
    in = fftw_alloc_real(n);
    out = fftw_alloc_complex(n / 2 + 1);
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  }
  ~R2cPlan() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  R2cPlan(const R2cPlan&) = delete;
  R2cPlan& operator=(const R2cPlan&) = delete;

  void execute() { fftw_execute(plan); }
};

}  // namespace spectro_detail

struct ScalogramOptions {
  double frame_ms = 50.0;
  double overlap = 0.5;
  std::size_t num_scales = 64;
  double omega0 = 6.0;
  double f_min = 40.0;
};

/// Center frequency in Hz of scale row `k` (row 0 is the highest frequency).
inline std::vector<double> scalogram_frequencies(int sample_rate, const ScalogramOptions& opt) {
  const double nyq = 0.5 * sample_rate;
  std::vector<double> f(opt.num_scales);
  for (std::size_t k = 0; k < opt.num_scales; ++k) {
    const double frac = opt.num_scales > 1 ? static_cast<double>(k) / static_cast<double>(opt.num_scales - 1) : 0.0;
    f[k] = nyq * std::pow(opt.f_min / nyq, frac);
  }
  return f;
}

/// Morlet scale in samples for a center frequency: s = omega0 fs / (2 pi f).
inline double morlet_scale(double freq, int sample_rate, double omega0 = 6.0) {
  return omega0 * sample_rate / (2.0 * std::numbers::pi * freq);
}

/// Rows = log-spaced scales from Nyquist down to f_min, cols = Hann-windowed
/// frames. Each entry is the frame's Morlet transform at the frame center,
/// computed in the frequency domain with a peak-one wavelet response.
inline ComplexMatrix morlet_scalogram(const AudioClip& clip, const ScalogramOptions& opt = {}) {
  if (opt.num_scales < 8) fail(ErrorCode::InvalidArgument, "num_scales must be at least 8");
  if (!(opt.overlap >= 0.0 && opt.overlap < 1.0)) fail(ErrorCode::InvalidArgument, "overlap must lie in [0, 1)");
  const auto frame = static_cast<std::size_t>(std::llround(opt.frame_ms * 1e-3 * clip.sample_rate));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frame * (1.0 - opt.overlap))));
  if (frame < 8 || clip.samples.size() < frame + hop) {
    fail(ErrorCode::ClipTooShort, "clip " + clip.clip_id + " yields fewer than 2 frames");
  }
  const std::size_t frames = (clip.samples.size() - frame) / hop + 1;
  const std::size_t bins = frame / 2 + 1;
  const auto freqs = scalogram_frequencies(clip.sample_rate, opt);

  // response[k][b] = psi_hat(s_k omega_b) times the phase that evaluates the
  // inverse transform at the frame center
  std::vector<std::vector<cdouble>> response(opt.num_scales, std::vector<cdouble>(bins));
  const double center = 0.5 * static_cast<double>(frame);
  for (std::size_t k = 0; k < opt.num_scales; ++k) {
    const double s = morlet_scale(freqs[k], clip.sample_rate, opt.omega0);
    for (std::size_t b = 0; b < bins; ++b) {
      const double omega = 2.0 * std::numbers::pi * static_cast<double>(b) / static_cast<double>(frame);
      const double d = s * omega - opt.omega0;
      const double mag = std::exp(-0.5 * d * d);
      const double ph = omega * center;
      // one-sided spectrum: positive bins count twice, DC and Nyquist once
      const double w = (b == 0 || 2 * b == frame) ? 1.0 : 2.0;
      response[k][b] = w * mag * cdouble(std::cos(ph), std::sin(ph)) / static_cast<double>(frame);
    }
  }

  std::vector<double> window(frame);
  for (std::size_t t = 0; t < frame; ++t) window[t] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * t / frame);

  spectro_detail::R2cPlan plan(frame);
  ComplexMatrix out(opt.num_scales, frames);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t t = 0; t < frame; ++t) plan.in[t] = clip.samples[f * hop + t] * window[t];
    plan.execute();
    for (std::size_t k = 0; k < opt.num_scales; ++k) {
      cdouble acc{};
      for (std::size_t b = 0; b < bins; ++b) acc += response[k][b] * cdouble(plan.out[b][0], plan.out[b][1]);
      out(k, f) = acc;
    }
  }
  return out;
}

inline RealMatrix visualize(const ComplexMatrix& w, Visualization mode) {
  RealMatrix out(w.rows(), w.cols());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const cdouble z = w.data()[k];
    switch (mode) {
      case Visualization::Linear: out.data()[k] = std::abs(z); break;
      case Visualization::Log: out.data()[k] = std::log1p(std::abs(z)); break;
      case Visualization::LogReal: out.data()[k] = std::log1p(std::abs(z.real())); break;
    }
  }
  return out;
}

/// Corner-aligned bilinear resampling to n x n.
inline RealMatrix resize_bilinear(const RealMatrix& img, std::size_t n) {
  if (img.rows() < 2 || img.cols() < 2) fail(ErrorCode::DegenerateSource, "source must be at least 2x2");
  if (n < 2) fail(ErrorCode::InvalidArgument, "target size must be at least 2");
  RealMatrix out(n, n);
  const double sy = static_cast<double>(img.rows() - 1) / static_cast<double>(n - 1);
  const double sx = static_cast<double>(img.cols() - 1) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = static_cast<double>(i) * sy;
    const std::size_t y0 = std::min(static_cast<std::size_t>(y), img.rows() - 2);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = static_cast<double>(j) * sx;
      const std::size_t x0 = std::min(static_cast<std::size_t>(x), img.cols() - 2);
      const double fx = x - static_cast<double>(x0);
      const double a = img(y0, x0), b = img(y0, x0 + 1), c = img(y0 + 1, x0), d = img(y0 + 1, x0 + 1);
      double v = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
      // equal corners interpolate to themselves exactly
      if (a == b && a == c && a == d) v = a;
      out(i, j) = std::clamp(v, std::min({a, b, c, d}), std::max({a, b, c, d}));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Spectrogram {
  RealMatrix data;
  Visualization visualization = Visualization::Linear;
  std::string source_clip_id;
  int class_label = -1;
  PerturbationTag tag;
  std::size_t native_rows = 0;
  std::size_t native_cols = 0;
  std::uint64_t seed = 0;

  std::size_t n() const { return data.rows(); }

  nlohmann::ordered_json sidecar() const {
    nlohmann::ordered_json j;
    j["clip_id"] = source_clip_id;
    j["class"] = class_label;
    j["visualization"] = to_string(visualization);
    j["tag"] = tag.label();
    j["native_shape"] = {native_rows, native_cols};
    j["seed"] = seed;
    return j;
  }

  /// Writes <stem>.pgm1 and <stem>.json.
  void save(const std::filesystem::path& stem, const nlohmann::ordered_json& extra = {}) const {
    pgm1::save(stem.string() + ".pgm1", data);
    auto j = sidecar();
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    std::ofstream out(stem.string() + ".json", std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + stem.string() + ".json");
    out << j.dump(2) << '\n';
  }

  static Spectrogram load(const std::filesystem::path& stem) {
    Spectrogram s;
    s.data = pgm1::load_real(stem.string() + ".pgm1");
    std::ifstream in(stem.string() + ".json");
    if (!in) fail(ErrorCode::MissingArtifact, "missing sidecar " + stem.string() + ".json");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      s.source_clip_id = j.at("clip_id").get<std::string>();
      s.class_label = j.at("class").get<int>();
      s.visualization = parse_visualization(j.at("visualization").get<std::string>());
      s.tag = PerturbationTag::parse(j.at("tag").get<std::string>());
      s.native_rows = j.at("native_shape").at(0).get<std::size_t>();
      s.native_cols = j.at("native_shape").at(1).get<std::size_t>();
      s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::CorruptHeader, stem.string() + ".json: " + e.what());
    }
    return s;
  }
};

struct PipelineOptions {
  ScalogramOptions scalogram{};
  Visualization visualization = Visualization::Linear;
  std::size_t n = 64;
};

/// Clip to square spectrogram: scalogram, visualization, resize, and scaling
/// to unit peak.
inline Spectrogram finalize_spectrogram(const AudioClip& clip, const PipelineOptions& opt, std::uint64_t seed = 0) {
  const auto coeffs = morlet_scalogram(clip, opt.scalogram);
  const auto image = visualize(coeffs, opt.visualization);
  Spectrogram s;
  s.data = resize_bilinear(image, opt.n);
  double peak = 0.0;
  for (double v : s.data.data()) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : s.data.data()) v /= peak;
  }
  s.visualization = opt.visualization;
  s.source_clip_id = clip.clip_id;
  s.class_label = clip.class_label;
  s.native_rows = image.rows();
  s.native_cols = image.cols();
  s.seed = seed;
  return s;
}

/// Adds seeded N(0, sigma^2) noise. If the result violates `epsilon_cap`,
/// sigma is halved (with a warning) until it passes, at most 8 times.
inline Spectrogram add_gaussian_noise(const Spectrogram& spec, double sigma, std::uint64_t seed,
                                      double epsilon_cap = std::numeric_limits<double>::infinity()) {
  if (!(sigma > 0.0)) fail(ErrorCode::InvalidArgument, "sigma must be positive");
  const auto clean = to_complex(spec.data);
  double s = sigma;
  for (int attempt = 0;; ++attempt) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, s);
    Spectrogram out = spec;
    for (auto& v : out.data.data()) v += g(rng);
    out.tag = PerturbationTag::noisy(sigma);
    out.seed = seed;
    if (std::isinf(epsilon_cap) || epsilon_of(clean, to_complex(out.data)) <= epsilon_cap || attempt == 8) {
      return out;
    }
    std::clog << "warning: noise sigma " << s << " on " << spec.source_clip_id << " exceeds the epsilon cap; retrying at "
              << s / 2 << '\n';
    s /= 2;
  }
}

}  // namespace pencil_guard
