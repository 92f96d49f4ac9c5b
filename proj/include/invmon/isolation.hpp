#pragma once

#include <memory>

#include "invmon/errors.hpp"

namespace invmon {

// Simulation-wide exclusion flag. While a measured session holds the gate,
// mutating guest-side operations must not run; they check the flag and fail
// with IsolationViolation.
struct IsolationGate {
  bool active = false;
};

class IsolationScope {
 public:
  explicit IsolationScope(IsolationGate* gate) : gate_(gate) {
    if (gate_ != nullptr) {
      if (gate_->active) raise(Errc::IsolationViolation, "isolated session already active");
      gate_->active = true;
    }
  }

  ~IsolationScope() {
    if (gate_ != nullptr) gate_->active = false;
  }

  IsolationScope(const IsolationScope&) = delete;
  IsolationScope& operator=(const IsolationScope&) = delete;

 private:
  IsolationGate* gate_;
};

}  // namespace invmon
