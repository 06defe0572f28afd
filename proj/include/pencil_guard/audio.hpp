#pragma once

// WAV ingestion, windowed-sinc resampling, time-preserving pitch shift and the
// synthetic desk corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pencil_guard/error.hpp"
#include "pencil_guard/pgm1.hpp"
#include "pencil_guard/rng.hpp"

namespace pencil_guard {

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 8000;
  std::string clip_id;
  int class_label = -1;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

namespace audio_detail {

inline std::uint32_t u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t u16(const std::uint8_t* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}
inline void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline double blackman(double x, double half_width) {
  // x in [-half_width, half_width]
  const double t = std::numbers::pi * (x / half_width + 1.0);
  return 0.42 - 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace audio_detail

/// Band-limited rate conversion with a Blackman-windowed sinc kernel of
/// `zero_crossings` lobes per side; the cutoff follows the lower of the two rates.
/// `out_len` overrides the natural output length.
inline std::vector<double> resample(std::span<const double> in, double from_rate, double to_rate,
                                    std::size_t out_len = 0, int zero_crossings = 16) {
  if (!(from_rate > 0.0) || !(to_rate > 0.0)) fail(ErrorCode::InvalidArgument, "sample rates must be positive");
  const double ratio = to_rate / from_rate;
  if (out_len == 0) out_len = static_cast<std::size_t>(std::llround(static_cast<double>(in.size()) * ratio));
  std::vector<double> out(out_len, 0.0);
  if (in.empty()) return out;
  if (ratio == 1.0 && out_len == in.size()) {
    std::copy(in.begin(), in.end(), out.begin());
    return out;
  }
  const double cutoff = std::min(1.0, ratio) * 0.97;
  const double half = zero_crossings / cutoff;
  const auto n_in = static_cast<long>(in.size());
  for (std::size_t k = 0; k < out_len; ++k) {
    const double t = static_cast<double>(k) / ratio;
    const long lo = static_cast<long>(std::ceil(t - half));
    const long hi = static_cast<long>(std::floor(t + half));
    double acc = 0.0;
    for (long j = std::max(0L, lo); j <= std::min(n_in - 1, hi); ++j) {
      const double x = t - static_cast<double>(j);
      acc += in[static_cast<std::size_t>(j)] * cutoff * audio_detail::sinc(cutoff * x) * audio_detail::blackman(x, half);
    }
    out[k] = acc;
  }
  return out;
}

/// Parses a RIFF/WAVE byte stream (PCM16 or float32, any channel count),
/// averages channels, and resamples to `target_rate` when it is nonzero.
/// Clips longer than `max_seconds` are truncated.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes, int target_rate = 0, double max_seconds = 5.0) {
  using namespace audio_detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::CorruptHeader, "not a RIFF/WAVE stream");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      // tolerate a truncated trailing data chunk, reject anything else
      if (std::memcmp(chunk, "data", 4) != 0) fail(ErrorCode::CorruptHeader, "chunk overruns stream");
    }
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) fail(ErrorCode::CorruptHeader, "short fmt chunk");
      format = u16(chunk + 8);
      channels = u16(chunk + 10);
      rate = u32(chunk + 12);
      bits = u16(chunk + 22);
      if (format == 0xFFFE && avail >= 26) format = u16(chunk + 8 + 24);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (channels == 0 || rate == 0) fail(ErrorCode::CorruptHeader, "missing or empty fmt chunk");
  if (!data) fail(ErrorCode::CorruptHeader, "missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    fail(ErrorCode::UnsupportedEncoding, "format " + std::to_string(format) + " with " + std::to_string(bits) + " bits");
  }
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + (f * channels + c) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(u16(p)) / 32768.0;
      } else {
        float v;
        const std::uint32_t raw = u32(p);
        std::memcpy(&v, &raw, 4);
        acc += std::clamp(static_cast<double>(v), -1.0, 1.0);
      }
    }
    clip.samples[f] = acc / channels;
  }
  for (double v : clip.samples)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite sample");
  if (target_rate > 0 && target_rate != clip.sample_rate) {
    clip.samples = resample(clip.samples, clip.sample_rate, target_rate);
    clip.sample_rate = target_rate;
  }
  const auto cap = static_cast<std::size_t>(max_seconds * clip.sample_rate);
  if (clip.samples.size() > cap) clip.samples.resize(cap);
  return clip;
}

inline AudioClip load_wav(const std::filesystem::path& path, int target_rate = 0, double max_seconds = 5.0) {
  auto clip = decode_wav(pgm1::read_bytes(path), target_rate, max_seconds);
  clip.clip_id = path.stem().string();
  return clip;
}

enum class WavEncoding { Pcm16, Float32 };

inline std::vector<std::uint8_t> encode_wav(std::span<const double> samples, int sample_rate, int channels = 1,
                                            WavEncoding enc = WavEncoding::Pcm16) {
  using namespace audio_detail;
  const std::uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * bits / 8);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  for (char c : std::string("RIFF")) out.push_back(static_cast<std::uint8_t>(c));
  put32(out, 36 + data_len);
  for (char c : std::string("WAVEfmt ")) out.push_back(static_cast<std::uint8_t>(c));
  put32(out, 16);
  put16(out, enc == WavEncoding::Pcm16 ? 1 : 3);
  put16(out, static_cast<std::uint16_t>(channels));
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate * channels * bits / 8));
  put16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put16(out, bits);
  for (char c : std::string("data")) out.push_back(static_cast<std::uint8_t>(c));
  put32(out, data_len);
  for (double s : samples) {
    if (enc == WavEncoding::Pcm16) {
      const double v = std::clamp(s, -1.0, 1.0) * 32768.0;
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(std::lround(v), -32768L, 32767L))));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &f, 4);
      put32(out, raw);
    }
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding enc = WavEncoding::Pcm16) {
  pgm1::write_bytes(path, encode_wav(clip.samples, clip.sample_rate, 1, enc));
}

/// Overlap-add time stretch to `out_len` samples. Each analysis frame is
/// shifted within +-tolerance to best continue the previously placed frame.
inline std::vector<double> wsola_stretch(std::span<const double> in, std::size_t out_len, std::size_t frame = 256,
                                         std::size_t tolerance = 64) {
  std::vector<double> out(out_len, 0.0), weight(out_len, 0.0);
  if (in.size() < frame || out_len == 0) {
    for (std::size_t k = 0; k < out_len && k < in.size(); ++k) out[k] = in[k];
    return out;
  }
  const std::size_t hop = frame / 2;
  std::vector<double> window(frame);
  for (std::size_t k = 0; k < frame; ++k) window[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / frame);
  const double rate = static_cast<double>(in.size() - frame) / static_cast<double>(std::max<std::size_t>(out_len, frame + 1) - frame);
  const long last_start = static_cast<long>(in.size() - frame);
  long prev = -1;
  for (std::size_t out_pos = 0; out_pos < out_len; out_pos += hop) {
    const long nominal = static_cast<long>(std::llround(static_cast<double>(out_pos) * rate));
    long best = std::clamp(nominal, 0L, last_start);
    if (prev >= 0) {
      // natural continuation of the previous frame
      const long target = prev + static_cast<long>(hop);
      double best_score = -1e300;
      for (long d = -static_cast<long>(tolerance); d <= static_cast<long>(tolerance); ++d) {
        const long cand = nominal + d;
        if (cand < 0 || cand > last_start) continue;
        double score = 0.0;
        for (std::size_t k = 0; k < hop; ++k) {
          const long t = target + static_cast<long>(k);
          if (t > static_cast<long>(in.size()) - 1) break;
          score += in[static_cast<std::size_t>(cand) + k] * in[static_cast<std::size_t>(t)];
        }
        if (score > best_score) {
          best_score = score;
          best = cand;
        }
      }
    }
    for (std::size_t k = 0; k < frame && out_pos + k < out_len; ++k) {
      out[out_pos + k] += window[k] * in[static_cast<std::size_t>(best) + k];
      weight[out_pos + k] += window[k];
    }
    prev = best;
  }
  for (std::size_t k = 0; k < out_len; ++k)
    if (weight[k] > 1e-3) out[k] /= weight[k];
  return out;
}

/// Shifts pitch by `scale` keeping the duration: resample so the clip plays
/// `scale` times faster, then stretch back to the original length.
inline AudioClip pitch_shift(const AudioClip& clip, double scale) {
  if (!(scale >= 0.5 && scale <= 2.0)) {
    fail(ErrorCode::ScaleOutOfRange, "pitch scale " + std::to_string(scale) + " outside [0.5, 2]");
  }
  AudioClip out = clip;
  if (scale == 1.0) return out;
  const auto fast = resample(clip.samples, scale, 1.0);
  out.samples = wsola_stretch(fast, clip.samples.size(), static_cast<std::size_t>(clip.sample_rate / 32));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSpec {
  int classes = 4;
  int clips_per_class = 60;
  double seconds = 1.0;
  int sample_rate = 8000;
  double noise_level = 0.05;
};

/// One clip of a class signature: 0 harmonic hum, 1 rising chirp, 2 tone
/// bursts, 3 modulated band noise; further classes cycle through the same
/// shapes at shifted registers. Jitter in frequency, timing and level comes
/// from `seed`.
inline AudioClip synthesize_clip(int class_label, std::uint64_t seed, const SyntheticSpec& spec) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const int fs = spec.sample_rate;
  const auto len = static_cast<std::size_t>(spec.seconds * fs);
  const double nyq = 0.5 * fs;
  const double reg = std::pow(1.6, class_label / 4);
  const double jitter = 1.0 + 0.06 * (u(rng) - 0.5);
  const double level = 0.4 + 0.3 * u(rng);
  const double phase0 = 2.0 * std::numbers::pi * u(rng);
  std::vector<double> x(len, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;

  switch (class_label % 4) {
    case 0: {
      const double f0 = std::min(150.0 * reg * jitter, nyq / 4);
      for (std::size_t t = 0; t < len; ++t) {
        const double ts = static_cast<double>(t) / fs;
        double v = 0.0;
        for (int h = 1; h <= 3; ++h) v += std::sin(two_pi * h * f0 * ts + h * phase0) / h;
        x[t] = v;
      }
      break;
    }
    case 1: {
      const double f_lo = 300.0 * reg * jitter, f_hi = std::min(1500.0 * reg * jitter, 0.8 * nyq);
      double ph = phase0;
      for (std::size_t t = 0; t < len; ++t) {
        const double frac = static_cast<double>(t) / static_cast<double>(len);
        const double f = f_lo * std::pow(f_hi / f_lo, frac);
        ph += two_pi * f / fs;
        x[t] = std::sin(ph);
      }
      break;
    }
    case 2: {
      const double f = std::min(2500.0 * jitter, 0.85 * nyq) / std::sqrt(reg);
      const double period = (0.12 + 0.04 * u(rng)) * fs;
      const double offset = u(rng) * period;
      const double burst = 0.04 * fs;
      for (std::size_t t = 0; t < len; ++t) {
        const double local = std::fmod(static_cast<double>(t) + offset, period);
        if (local < burst) {
          const double env = std::sin(std::numbers::pi * local / burst);
          x[t] = env * std::sin(two_pi * f * static_cast<double>(t) / fs + phase0);
        }
      }
      break;
    }
    default: {
      // two-pole resonator over white noise, amplitude modulated at a few Hz
      const double fc = std::min(800.0 * reg * jitter, 0.7 * nyq);
      const double r = 0.97;
      const double a1 = 2.0 * r * std::cos(two_pi * fc / fs), a2 = -r * r;
      const double am = 3.0 + 2.0 * u(rng);
      double y1 = 0.0, y2 = 0.0, peak = 1e-12;
      for (std::size_t t = 0; t < len; ++t) {
        const double y = g(rng) + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        x[t] = y * (0.6 + 0.4 * std::sin(two_pi * am * static_cast<double>(t) / fs + phase0));
        peak = std::max(peak, std::abs(x[t]));
      }
      for (auto& v : x) v /= peak;
      break;
    }
  }
  double peak = 1e-12;
  for (double v : x) peak = std::max(peak, std::abs(v));
  for (auto& v : x) v = level * v / peak + spec.noise_level * g(rng);
  for (auto& v : x) v = std::clamp(v, -1.0, 1.0);

  AudioClip clip;
  clip.samples = std::move(x);
  clip.sample_rate = fs;
  clip.class_label = class_label;
  return clip;
}

inline std::vector<AudioClip> synthesize_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  std::vector<AudioClip> clips;
  clips.reserve(static_cast<std::size_t>(spec.classes * spec.clips_per_class));
  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.clips_per_class; ++i) {
      auto clip = synthesize_clip(c, derive_seed(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)}), spec);
      clip.clip_id = "c" + std::to_string(c) + "_" + std::to_string(i);
      clips.push_back(std::move(clip));
    }
  }
  return clips;
}

}  // namespace pencil_guard
