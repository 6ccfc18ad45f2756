#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace regnet {

enum class ErrorKind {
  LatticeDegenerate,
  NonFiniteCoordinate,
  AtomOverlap,
  InvalidAtomicNumber,
  ShapeError,
  IndexError,
  NondeterministicFunction,
  NonFiniteGradient,
  NonFiniteLoss,
  RangeError,
  UnknownElement,
  FrequencyMismatch,
  ConfigError,
  EmptySplit,
  ParseError,
  ValidationError,
  IoError,
  CheckpointFormat,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

}  // namespace regnet
