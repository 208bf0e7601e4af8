#include "secnn/errors.hpp"

namespace secnn {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidShape: return "invalid-shape";
    case ErrorCode::InvalidLabel: return "invalid-label";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::GraphConsumed: return "graph-consumed";
    case ErrorCode::CapacityExceeded: return "capacity-exceeded";
    case ErrorCode::Io: return "io";
    case ErrorCode::CorruptData: return "corrupt-data";
    case ErrorCode::ChecksumMismatch: return "checksum-mismatch";
    case ErrorCode::VersionMismatch: return "version-mismatch";
    case ErrorCode::LengthMismatch: return "length-mismatch";
    case ErrorCode::Config: return "config";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace secnn
