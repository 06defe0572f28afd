#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pencil_guard {

enum class ErrorCode {
  DimensionMismatch,
  NonFiniteInput,
  ConvergenceFailure,
  OrderTooLarge,
  SingularM2,
  LengthMismatch,
  UnsupportedEncoding,
  CorruptHeader,
  ScaleOutOfRange,
  ClipTooShort,
  DegenerateSource,
  DivergedTraining,
  NoConvergence,
  GradientUnavailable,
  DegenerateFlip,
  InsufficientBatch,
  EmptyTrainingSet,
  ConfigMismatch,
  SingleClassTestSet,
  InvalidArgument,
  Io,
  MissingArtifact,
  ValidationError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::OrderTooLarge: return "OrderTooLarge";
    case ErrorCode::SingularM2: return "SingularM2";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::ScaleOutOfRange: return "ScaleOutOfRange";
    case ErrorCode::ClipTooShort: return "ClipTooShort";
    case ErrorCode::DegenerateSource: return "DegenerateSource";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::GradientUnavailable: return "GradientUnavailable";
    case ErrorCode::DegenerateFlip: return "DegenerateFlip";
    case ErrorCode::InsufficientBatch: return "InsufficientBatch";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::SingleClassTestSet: return "SingleClassTestSet";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to a machine-readable error object.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised by qz_decompose when the iteration budget runs out.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(std::size_t unconverged_block, std::size_t sweeps)
      : Error(ErrorCode::ConvergenceFailure,
              "QZ iteration exceeded " + std::to_string(sweeps) +
                  " sweeps; unconverged trailing block of size " +
                  std::to_string(unconverged_block)),
        unconverged_block_(unconverged_block) {}

  std::size_t unconverged_block() const noexcept { return unconverged_block_; }

 private:
  std::size_t unconverged_block_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace pencil_guard
