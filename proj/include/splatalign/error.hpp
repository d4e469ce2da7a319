#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace splatalign {

enum class ErrorCode {
  kInvalidInput,
  kBehindCamera,
  kDegenerate,
  kUndefinedAngle,
  kParse,
  kMissingFile,
  kIndexOutOfRange,
  kBounds,
  kValidation,
  kDimensionMismatch,
  kUnknownVersion,
  kIo,
  kEstimationFailed,
  kUnsolvableScene,
  kNumericalRank,
  kDivergence,
  kEmptyScene,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kUndefinedAngle: return "undefined-angle";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kMissingFile: return "missing-file";
    case ErrorCode::kIndexOutOfRange: return "index-out-of-range";
    case ErrorCode::kBounds: return "bounds";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kDimensionMismatch: return "dimension-mismatch";
    case ErrorCode::kUnknownVersion: return "unknown-version";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kEstimationFailed: return "estimation-failed";
    case ErrorCode::kUnsolvableScene: return "unsolvable-scene";
    case ErrorCode::kNumericalRank: return "numerical-rank";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kEmptyScene: return "empty-scene";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace splatalign
