#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/guest.hpp"
#include "invmon/sha256.hpp"
#include "invmon/trusted_module.hpp"

namespace invmon {

struct FixedBudget {
  std::uint64_t objects_per_trap = 1;
};

/// Invented scaling knob: per-trap budget shrinks as the observed context
/// switch frequency rises above the calibrated level, so checking work per
/// unit of guest time stays roughly constant. Fixed is the default policy.
struct LoadAdaptiveBudget {
  std::uint64_t base = 1;
  std::uint64_t window = 16;  // traps per rate observation window
  double scale = 1.0;
  double calibration = 1.0;  // expected switch frequency (traps per quantum)
};

using BudgetPolicy = std::variant<FixedBudget, LoadAdaptiveBudget>;

inline std::uint64_t compute_budget(const BudgetPolicy& policy, double recent_trap_rate_normalized) {
  if (const auto* fixed = std::get_if<FixedBudget>(&policy)) return fixed->objects_per_trap;
  const auto& la = std::get<LoadAdaptiveBudget>(policy);
  double raw = static_cast<double>(la.base) * la.scale / std::max(1.0, recent_trap_rate_normalized);
  auto rounded = static_cast<std::int64_t>(std::llround(raw));
  return rounded < 1 ? 1 : static_cast<std::uint64_t>(rounded);
}

struct DetectionReport {
  std::string object_id;
  std::uint64_t trap_sequence;
  Digest observed_hash;
  bool repaired;
};

/// Hypervisor-private protected form of a registered object. Instances never
/// leave the monitor; nothing guest-reachable can see or touch them.
struct ProtectionRecord {
  std::string id;
  std::uint64_t address;
  std::uint64_t size;
  Digest golden_hash;
  std::optional<Bytes> golden_copy;
};

/// Hypervisor-side countermeasure. Records are captured while the trust
/// window is open (boot), then the monitor enforces: each trap event buys a
/// budgeted number of round-robin hash checks, with detected objects repaired
/// in place when a golden copy exists.
class HypervisorMonitor {
 public:
  explicit HypervisorMonitor(BudgetPolicy policy = FixedBudget{1}, bool repair_enabled = true)
      : policy_(policy), repair_enabled_(repair_enabled) {}

  static Digest digest(ByteView data) { return sha256(data); }

  std::uint64_t register_objects(const RegistrationPayload& payload, const GuestMemory& mem) {
    if (enforcing_) raise(Errc::TrustWindowClosed, "registration while enforcing");
    if (boot_epoch_.has_value() && *boot_epoch_ != payload.boot_epoch) {
      raise(Errc::ValidationError, "boot epoch mismatch across registration rounds");
    }
    boot_epoch_ = payload.boot_epoch;
    for (const RegistrationRecord& rec : payload.records) {
      for (const ProtectionRecord& existing : records_) {
        if (existing.id == rec.id) raise(Errc::ValidationError, "object \"" + rec.id + "\" already registered");
      }
      if (rec.golden_copy && rec.golden_copy->size() != rec.size) {
        raise(Errc::ValidationError, "golden copy length mismatch for \"" + rec.id + "\"");
      }
      Digest golden = sha256(mem.view(rec.address, rec.size));
      if (rec.golden_copy && sha256(ByteView(rec.golden_copy->data(), rec.golden_copy->size())) != golden) {
        raise(Errc::IntegrityFailure, "golden copy for \"" + rec.id + "\" differs from memory at registration");
      }
      records_.push_back(ProtectionRecord{rec.id, rec.address, rec.size, golden, rec.golden_copy});
    }
    return payload.records.size();
  }

  void close_trust_window() {
    if (enforcing_) raise(Errc::AlreadyEnforcing, "trust window already closed");
    enforcing_ = true;
  }

  bool enforcing() const { return enforcing_; }

  // External load observation for the LoadAdaptive policy; the harness feeds
  // the normalized switch-frequency here before each trap. No-op for Fixed.
  void observe_load(double normalized_rate) { load_rate_ = normalized_rate; }

  std::vector<DetectionReport> on_trap(const TrapEvent& event, GuestMemory& mem) {
    if (!enforcing_) raise(Errc::NotEnforcing, "trap before trust window closed");
    ++traps_handled_;
    last_sequence_ = event.sequence;
    std::vector<DetectionReport> reports;
    if (records_.empty()) return reports;
    std::uint64_t budget = compute_budget(policy_, load_rate_);
    std::uint64_t n = records_.size();
    std::uint64_t checks = budget < n ? budget : n;  // never re-check within one trap
    for (std::uint64_t i = 0; i < checks; ++i) {
      check_record((cursor_ + i) % n, event.sequence, mem, reports);
    }
    cursor_ = (cursor_ + checks) % n;
    return reports;
  }

  /// Checks every record once without moving the cursor. This is the
  /// unamortized reference scan; repair behaves exactly as in on_trap.
  std::vector<DetectionReport> full_scan(GuestMemory& mem) {
    if (!enforcing_) raise(Errc::NotEnforcing, "scan before trust window closed");
    std::vector<DetectionReport> reports;
    for (std::uint64_t i = 0; i < records_.size(); ++i) {
      check_record(i, last_sequence_, mem, reports);
    }
    return reports;
  }

  std::uint64_t record_count() const { return records_.size(); }
  std::uint64_t cursor() const { return cursor_; }
  std::uint64_t traps_handled() const { return traps_handled_; }
  std::uint64_t objects_checked() const { return objects_checked_; }
  std::uint64_t bytes_hashed() const { return bytes_hashed_; }
  std::optional<std::uint64_t> boot_epoch() const { return boot_epoch_; }
  bool repair_enabled() const { return repair_enabled_; }
  const BudgetPolicy& policy() const { return policy_; }

  /// Hash-store footprint: 48 fixed bytes per record (address, size, digest)
  /// plus any golden copies. Grows linearly in the number of protected
  /// objects.
  std::uint64_t record_store_bytes() const {
    std::uint64_t total = 0;
    for (const ProtectionRecord& rec : records_) {
      total += 48;
      if (rec.golden_copy) total += rec.golden_copy->size();
    }
    return total;
  }

 private:
  void check_record(std::uint64_t index, std::uint64_t sequence, GuestMemory& mem,
                    std::vector<DetectionReport>& reports) {
    ProtectionRecord& rec = records_[index];
    ++objects_checked_;
    bytes_hashed_ += rec.size;
    Digest observed = sha256(mem.view(rec.address, rec.size));
    if (observed == rec.golden_hash) return;
    bool repaired = false;
    if (repair_enabled_ && rec.golden_copy) {
      mem.write_bytes(rec.address, ByteView(rec.golden_copy->data(), rec.golden_copy->size()));
      repaired = true;
    }
    reports.push_back(DetectionReport{rec.id, sequence, observed, repaired});
  }

  BudgetPolicy policy_;
  bool repair_enabled_;
  bool enforcing_ = false;
  std::vector<ProtectionRecord> records_;
  std::uint64_t cursor_ = 0;
  double load_rate_ = 1.0;
  std::uint64_t traps_handled_ = 0;
  std::uint64_t objects_checked_ = 0;
  std::uint64_t bytes_hashed_ = 0;
  std::uint64_t last_sequence_ = 0;
  std::optional<std::uint64_t> boot_epoch_;
};

}  // namespace invmon
