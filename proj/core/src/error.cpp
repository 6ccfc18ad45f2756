#include "regnet/error.hpp"

namespace regnet {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::LatticeDegenerate: return "LatticeDegenerate";
    case ErrorKind::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorKind::AtomOverlap: return "AtomOverlap";
    case ErrorKind::InvalidAtomicNumber: return "InvalidAtomicNumber";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::IndexError: return "IndexError";
    case ErrorKind::NondeterministicFunction: return "NondeterministicFunction";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::RangeError: return "RangeError";
    case ErrorKind::UnknownElement: return "UnknownElement";
    case ErrorKind::FrequencyMismatch: return "FrequencyMismatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::CheckpointFormat: return "CheckpointFormat";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void raise(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace regnet
