#include "h2scope/common/error.hpp"

namespace h2scope {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::DegenerateSnapshot: return "DegenerateSnapshot";
    case ErrorCode::UnknownMetric: return "UnknownMetric";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::NoPairedResults: return "NoPairedResults";
    case ErrorCode::HookFailed: return "HookFailed";
    case ErrorCode::ConcurrentRun: return "ConcurrentRun";
    case ErrorCode::NoAttributionSource: return "NoAttributionSource";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ProtocolError: return "ProtocolError";
  }
  return "Unknown";
}

}  // namespace h2scope
