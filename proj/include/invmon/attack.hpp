#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/guest.hpp"

namespace invmon {

enum class AttackKind { Persistent, Transient, Unprotected };

inline const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Persistent: return "persistent";
    case AttackKind::Transient: return "transient";
    case AttackKind::Unprotected: return "unprotected";
  }
  return "?";
}

struct TargetRange {
  std::uint64_t address;
  std::uint64_t size;
};

/// A scripted rootkit-style memory modification. Protected attacks
/// (Persistent, Transient) name a registered object; Unprotected attacks hit
/// a raw range the monitor never sees. Time is measured in trap events.
struct AttackScenario {
  AttackKind kind = AttackKind::Persistent;
  std::optional<std::string> target_id;  // Persistent / Transient
  std::optional<TargetRange> raw;        // Unprotected
  std::uint64_t inject_at = 0;
  std::uint64_t duration = 1;  // Transient: traps until the write is reverted
  Bytes payload;
};

struct OraclePrediction {
  bool detected = false;
  std::optional<std::uint64_t> latency_traps;
};

/// Closed-form prediction of the round-robin scheduler's behavior, fixed
/// budget only. `cursor_at_injection` is the cursor value when the injection
/// trap's checks begin; latency counts traps inclusive of that one. Assumes
/// the trap stream continues long enough for the cursor to reach the target.
inline OraclePrediction detection_oracle(const AttackScenario& scenario, std::uint64_t n_records,
                                         std::uint64_t budget, std::uint64_t cursor_at_injection,
                                         std::optional<std::uint64_t> target_index) {
  if (scenario.kind == AttackKind::Unprotected) return {};
  if (n_records == 0 || budget == 0) raise(Errc::ValidationError, "oracle needs records and a positive budget");
  if (!target_index || *target_index >= n_records) raise(Errc::ValidationError, "oracle target index out of range");
  std::uint64_t per_trap = std::min(budget, n_records);
  std::uint64_t offset = (*target_index + n_records - cursor_at_injection % n_records) % n_records;
  std::uint64_t traps_until_cover = offset / per_trap + 1;
  if (scenario.kind == AttackKind::Transient && traps_until_cover > scenario.duration) return {};
  return {true, traps_until_cover};
}

/// Applies attack scripts to the guest at trap granularity. Restores queued
/// by transient attacks run at the start of their due trap, before the
/// monitor's checks — the ordering most favorable to the adversary.
class AttackEngine {
 public:
  AttackEngine(std::vector<AttackScenario> scenarios, std::map<std::string, TargetRange> targets)
      : scenarios_(std::move(scenarios)), targets_(std::move(targets)) {}

  void inject(const AttackScenario& scenario, GuestMemory& mem, std::uint64_t current_trap) {
    if (current_trap != scenario.inject_at) {
      raise(Errc::ValidationError, "injection at trap " + std::to_string(current_trap) + " but scripted for " +
                                       std::to_string(scenario.inject_at));
    }
    if (scenario.payload.empty()) raise(Errc::ValidationError, "empty attack payload");
    TargetRange range = resolve(scenario);
    if (scenario.payload.size() > range.size) raise(Errc::ValidationError, "payload exceeds target size");
    Bytes original = mem.read_bytes(range.address, scenario.payload.size());
    if (original == scenario.payload) raise(Errc::NoOpAttack, "payload equals current contents");
    if (scenario.kind == AttackKind::Transient) {
      if (scenario.duration == 0) raise(Errc::ValidationError, "transient duration must be >= 1");
      restores_.push_back(PendingRestore{scenario.inject_at + scenario.duration, range.address,
                                         std::move(original), scenario.target_id});
    }
    mem.write_bytes(range.address, ByteView(scenario.payload.data(), scenario.payload.size()));
  }

  /// Runs everything due at this trap: queued restores first, then scripted
  /// injections, in script order.
  void on_trap_begin(std::uint64_t trap_sequence, GuestMemory& mem) {
    for (auto it = restores_.begin(); it != restores_.end();) {
      if (it->due_at <= trap_sequence) {
        mem.write_bytes(it->address, ByteView(it->original.data(), it->original.size()));
        it = restores_.erase(it);
      } else {
        ++it;
      }
    }
    for (const AttackScenario& scenario : scenarios_) {
      if (scenario.inject_at == trap_sequence) inject(scenario, mem, trap_sequence);
    }
  }

  /// Cursor-aware adversary (experiment knob, off by default in scenarios):
  /// given the check window the monitor is about to sweep, restore any live
  /// transient whose target falls inside it, dodging detection.
  void evade_checks(std::uint64_t cursor, std::uint64_t budget, std::uint64_t n_records,
                    const std::map<std::string, std::uint64_t>& index_by_id, GuestMemory& mem) {
    if (n_records == 0) return;
    std::uint64_t per_trap = std::min(budget, n_records);
    for (auto it = restores_.begin(); it != restores_.end();) {
      bool covered = false;
      if (it->target_id) {
        auto idx = index_by_id.find(*it->target_id);
        if (idx != index_by_id.end()) {
          std::uint64_t offset = (idx->second + n_records - cursor % n_records) % n_records;
          covered = offset < per_trap;
        }
      }
      if (covered) {
        mem.write_bytes(it->address, ByteView(it->original.data(), it->original.size()));
        it = restores_.erase(it);
      } else {
        ++it;
      }
    }
  }

  std::size_t pending_restores() const { return restores_.size(); }
  const std::vector<AttackScenario>& scenarios() const { return scenarios_; }

 private:
  struct PendingRestore {
    std::uint64_t due_at;
    std::uint64_t address;
    Bytes original;
    std::optional<std::string> target_id;
  };

  TargetRange resolve(const AttackScenario& scenario) const {
    if (scenario.kind == AttackKind::Unprotected) {
      if (!scenario.raw) raise(Errc::UnknownTarget, "unprotected attack needs a raw range");
      return *scenario.raw;
    }
    if (!scenario.target_id) raise(Errc::UnknownTarget, "protected attack needs an object id");
    auto it = targets_.find(*scenario.target_id);
    if (it == targets_.end()) raise(Errc::UnknownTarget, "\"" + *scenario.target_id + "\"");
    return it->second;
  }

  std::vector<AttackScenario> scenarios_;
  std::map<std::string, TargetRange> targets_;
  std::deque<PendingRestore> restores_;
};

}  // namespace invmon
