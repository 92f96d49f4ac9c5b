#pragma once

#include <stdexcept>
#include <string>

namespace invmon {

// Every failure in the library throws Error carrying one of these codes, so
// callers and tests can match on the condition rather than message text.
enum class Errc {
  OutOfBounds,
  UnknownPid,
  OutOfMemory,
  UnresolvedSymbol,
  UnknownHeapTag,
  ModuleUnloaded,
  AlreadyUnloaded,
  TrustWindowClosed,
  AlreadyEnforcing,
  NotEnforcing,
  NoOpAttack,
  UnknownTarget,
  TooLarge,
  MeasurementMismatch,
  IntegrityFailure,
  IsolationViolation,
  StoreCorrupt,
  ParseError,
  ValidationError,
};

inline const char* to_string(Errc c) {
  switch (c) {
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::UnknownPid: return "UnknownPid";
    case Errc::OutOfMemory: return "OutOfMemory";
    case Errc::UnresolvedSymbol: return "UnresolvedSymbol";
    case Errc::UnknownHeapTag: return "UnknownHeapTag";
    case Errc::ModuleUnloaded: return "ModuleUnloaded";
    case Errc::AlreadyUnloaded: return "AlreadyUnloaded";
    case Errc::TrustWindowClosed: return "TrustWindowClosed";
    case Errc::AlreadyEnforcing: return "AlreadyEnforcing";
    case Errc::NotEnforcing: return "NotEnforcing";
    case Errc::NoOpAttack: return "NoOpAttack";
    case Errc::UnknownTarget: return "UnknownTarget";
    case Errc::TooLarge: return "TooLarge";
    case Errc::MeasurementMismatch: return "MeasurementMismatch";
    case Errc::IntegrityFailure: return "IntegrityFailure";
    case Errc::IsolationViolation: return "IsolationViolation";
    case Errc::StoreCorrupt: return "StoreCorrupt";
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace invmon
