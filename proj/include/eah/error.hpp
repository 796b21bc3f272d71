// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eah {

// Every failure raised by the toolkit carries one of these codes so callers
// (the CLI in particular) can map it to an exit status without string matching.
enum class ErrorCode {
  InvalidDimension,
  InvalidAnchor,
  Span,
  Layer,
  Config,
  Shape,
  Hook,
  Io,
  BadMagic,
  BadVersion,
  BadHeader,
  SizeMismatch,
  NonStochastic,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  // The message without the "<code> error: " prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace eah
