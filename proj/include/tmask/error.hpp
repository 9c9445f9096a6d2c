#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tmask {

enum class ErrorCode {
  kDimension,
  kDegenerateRow,
  kInput,
  kParse,
  kLength,
  kUnsupportedVersion,
  kIo,
  kConfig,
  kValidation,
  kDivergence,
  kTapeReused,
  kDegenerateCluster,
  kGeometry,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension_error";
    case ErrorCode::kDegenerateRow: return "degenerate_row";
    case ErrorCode::kInput: return "input_error";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kLength: return "length_error";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kValidation: return "validation_error";
    case ErrorCode::kDivergence: return "divergence_error";
    case ErrorCode::kTapeReused: return "tape_reused";
    case ErrorCode::kDegenerateCluster: return "degenerate_cluster";
    case ErrorCode::kGeometry: return "geometry_error";
  }
  return "unknown_error";
}

/// All library failures are reported through this type; `code()` is stable
/// and is what the CLI serializes into its error JSON.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace tmask
