#pragma once

#include <stdexcept>
#include <string>

namespace arterial {

enum class ErrorKind {
  Parse,
  InvalidGeometry,
  InvalidPlan,
  LeftTurnWithoutJughandle,
  TooManyReservedLanes,
  OutOfExtent,
  NonPositiveGap,
  MpOutOfRange,
  UnknownIntersection,
  ConfigInvalid,
  IncompleteMatrix,
  IoFailure,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Parse: return "ParseError";
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::InvalidPlan: return "InvalidPlan";
    case ErrorKind::LeftTurnWithoutJughandle: return "LeftTurnWithoutJughandle";
    case ErrorKind::TooManyReservedLanes: return "TooManyReservedLanes";
    case ErrorKind::OutOfExtent: return "OutOfExtent";
    case ErrorKind::NonPositiveGap: return "NonPositiveGap";
    case ErrorKind::MpOutOfRange: return "MpOutOfRange";
    case ErrorKind::UnknownIntersection: return "UnknownIntersection";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::IncompleteMatrix: return "IncompleteMatrix";
    case ErrorKind::IoFailure: return "IoFailure";
  }
  return "Error";
}

/// Every failure surfaced by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace arterial
