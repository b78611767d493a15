#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

enum class ErrorKind {
  InvalidInput,
  RateMismatch,
  DegenerateRir,
  InvalidRt60,
  InsufficientDecay,
  BandExhausted,
  IoError,
  InputTooShort,
  ShapeError,
  InvalidStageCount,
  InvalidToken,
  NumericalDivergence,
  DegenerateReference,
  DegenerateVariance,
  InsufficientSamples,
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace actel::inline ACTEL_ABI_NS
