#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace h2scope {

// Contract violations raised by the library. Per-host network failures are
// never thrown; they are recorded inside the result records instead.
enum class ErrorCode {
  InvalidArgument,
  EmptyInput,
  UnknownTask,
  DegenerateSnapshot,
  UnknownMetric,
  DimensionMismatch,
  ZeroVector,
  EmptyIntersection,
  NoPairedResults,
  HookFailed,
  ConcurrentRun,
  NoAttributionSource,
  SchemaMismatch,
  ParseError,
  IoError,
  ProtocolError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace h2scope
