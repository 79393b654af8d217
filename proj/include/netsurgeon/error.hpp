#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace netsurgeon {

enum class ErrorCode {
  InvalidArgument,
  NotFound,
  ShapeMismatch,
  Io,
  Format,
  Degenerate,
  VersionMismatch,
  Unsupported,
  SilentNeuron,
  Stale,
};

std::string_view to_string(ErrorCode code);

/// Domain error carrying a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace netsurgeon
