#pragma once

#include <cstdio>
#include <string>

#include "pencil_guard/error.hpp"

namespace pencil_guard {

/// Provenance of a spectrogram: untouched, Gaussian noise of a given sigma, or
/// the output of a named attack.
struct PerturbationTag {
  enum class Kind { Clean, Noisy, Attack };

  Kind kind = Kind::Clean;
  double sigma = 0.0;
  std::string attack;

  static PerturbationTag clean() { return {}; }
  static PerturbationTag noisy(double sigma) { return {Kind::Noisy, sigma, {}}; }
  static PerturbationTag attacked(std::string name) { return {Kind::Attack, 0.0, std::move(name)}; }

  /// "CLEAN", "NOISY(0.01)", "ATTACK(FGSM)".
  std::string label() const {
    switch (kind) {
      case Kind::Clean: return "CLEAN";
      case Kind::Noisy: {
        char buf[48];
        std::snprintf(buf, sizeof buf, "NOISY(%g)", sigma);
        return buf;
      }
      case Kind::Attack: return "ATTACK(" + attack + ")";
    }
    return "CLEAN";
  }

  static PerturbationTag parse(const std::string& s) {
    if (s == "CLEAN") return clean();
    if (s.rfind("NOISY(", 0) == 0 && s.back() == ')') return noisy(std::stod(s.substr(6, s.size() - 7)));
    if (s.rfind("ATTACK(", 0) == 0 && s.back() == ')') return attacked(s.substr(7, s.size() - 8));
    fail(ErrorCode::InvalidArgument, "unrecognized perturbation tag '" + s + "'");
  }

  friend bool operator==(const PerturbationTag&, const PerturbationTag&) = default;
};

}  // namespace pencil_guard
