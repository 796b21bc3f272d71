// SPDX-License-Identifier: Apache-2.0
#include "eah/error.hpp"

namespace eah {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidDimension: return "invalid-dimension";
    case ErrorCode::InvalidAnchor: return "invalid-anchor";
    case ErrorCode::Span: return "span";
    case ErrorCode::Layer: return "layer";
    case ErrorCode::Config: return "config";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Hook: return "hook";
    case ErrorCode::Io: return "io";
    case ErrorCode::BadMagic: return "bad-magic";
    case ErrorCode::BadVersion: return "bad-version";
    case ErrorCode::BadHeader: return "bad-header";
    case ErrorCode::SizeMismatch: return "size-mismatch";
    case ErrorCode::NonStochastic: return "non-stochastic";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + " error: " + message),
      code_(code),
      detail_(message) {}

}  // namespace eah
