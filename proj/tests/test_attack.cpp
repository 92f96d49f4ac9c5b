#include <map>

#include "invmon/attack.hpp"
#include "invmon/monitor.hpp"
#include "invmon/rng.hpp"
#include "test_helpers.hpp"

using namespace invmon;
using testutil::thrown_code;
using testutil::view_of;

namespace {

AttackScenario persistent(const std::string& target, std::uint64_t at, Bytes payload = {0xff}) {
  return AttackScenario{AttackKind::Persistent, target, std::nullopt, at, 1, std::move(payload)};
}

AttackScenario transient(const std::string& target, std::uint64_t at, std::uint64_t duration,
                         Bytes payload = {0xff}) {
  return AttackScenario{AttackKind::Transient, target, std::nullopt, at, duration, std::move(payload)};
}

// Reference implementation of the round-robin coverage argument, simulated
// step by step instead of in closed form.
OraclePrediction brute_force(AttackKind kind, std::uint64_t n, std::uint64_t b, std::uint64_t cursor,
                             std::uint64_t target, std::uint64_t duration) {
  std::uint64_t per_trap = std::min(b, n);
  for (std::uint64_t latency = 1;; ++latency) {
    if (kind == AttackKind::Transient && latency > duration) return {};
    for (std::uint64_t i = 0; i < per_trap; ++i) {
      if ((cursor + i) % n == target) return {true, latency};
    }
    cursor = (cursor + per_trap) % n;
    if (latency > n + duration + 2) return {};  // unreachable; guards the loop
  }
}

}  // namespace

TEST_CASE("the detection oracle reproduces the worked round-robin geometry") {
  // Four records, budget two, cursor at zero, target at index three: the
  // first trap covers {0,1}, the second {2,3} - latency two.
  CHECK(detection_oracle(persistent("x", 0), 4, 2, 0, 3).latency_traps == 2);
  CHECK(detection_oracle(persistent("x", 0), 4, 2, 0, 0).latency_traps == 1);
  CHECK(detection_oracle(persistent("x", 0), 4, 2, 3, 2).latency_traps == 2);

  // A one-trap transient dies before the second window reaches it.
  CHECK_FALSE(detection_oracle(transient("x", 0, 1), 4, 2, 0, 3).detected);
  CHECK(detection_oracle(transient("x", 0, 2), 4, 2, 0, 3).detected);
  CHECK(detection_oracle(transient("x", 0, 2), 4, 2, 0, 3).latency_traps == 2);

  // Unprotected writes are invisible to the rotation.
  AttackScenario unprot{AttackKind::Unprotected, std::nullopt, TargetRange{0, 4}, 0, 1, {0xff}};
  CHECK_FALSE(detection_oracle(unprot, 4, 2, 0, std::nullopt).detected);

  // Budget beyond the ring covers everything in a single trap.
  CHECK(detection_oracle(persistent("x", 0), 3, 64, 1, 0).latency_traps == 1);
}

TEST_CASE("the oracle rejects degenerate geometries") {
  CHECK(thrown_code([] { detection_oracle(persistent("x", 0), 0, 2, 0, 0); }) == Errc::ValidationError);
  CHECK(thrown_code([] { detection_oracle(persistent("x", 0), 4, 0, 0, 0); }) == Errc::ValidationError);
  CHECK(thrown_code([] { detection_oracle(persistent("x", 0), 4, 2, 0, 4); }) == Errc::ValidationError);
  CHECK(thrown_code([] { detection_oracle(persistent("x", 0), 4, 2, 0, std::nullopt); }) ==
        Errc::ValidationError);
}

TEST_CASE("the closed form agrees with step-by-step simulation everywhere") {
  Xoshiro256ss rng(0x0c0ffee);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uint64_t n = rng.range(1, 32);
    std::uint64_t b = rng.range(1, 40);
    std::uint64_t cursor = rng.below(n);
    std::uint64_t target = rng.below(n);
    bool is_transient = rng.below(2) == 1;
    std::uint64_t ceil_nb = (n + std::min(b, n) - 1) / std::min(b, n);
    std::uint64_t duration = rng.range(1, 2 * ceil_nb);

    AttackScenario scenario = is_transient ? transient("x", 0, duration) : persistent("x", 0);
    OraclePrediction predicted = detection_oracle(scenario, n, b, cursor, target);
    OraclePrediction simulated =
        brute_force(scenario.kind, n, b, cursor, target, is_transient ? duration : ~0ull);

    CHECK(predicted.detected == simulated.detected);
    if (predicted.detected) CHECK(*predicted.latency_traps == *simulated.latency_traps);
  }
}

TEST_CASE("longer-lived transients are detected no less often") {
  // Detection is monotone in duration: if duration d is caught, so is d+1.
  Xoshiro256ss rng(31337);
  for (int trial = 0; trial < 200; ++trial) {
    std::uint64_t n = rng.range(1, 16);
    std::uint64_t b = rng.range(1, 8);
    std::uint64_t cursor = rng.below(n);
    std::uint64_t target = rng.below(n);
    bool previous = false;
    for (std::uint64_t d = 1; d <= 2 * n + 1; ++d) {
      bool now = detection_oracle(transient("x", 0, d), n, b, cursor, target).detected;
      if (previous) CHECK(now);
      previous = now;
    }
    CHECK(previous);  // a transient outliving a full rotation is always caught
  }
}

TEST_CASE("injection mechanics enforce the script") {
  GuestMemory mem(4096);
  std::map<std::string, TargetRange> targets{{"table", TargetRange{256, 16}}};

  SECTION("a persistent payload lands in memory") {
    AttackEngine engine({persistent("table", 3, {1, 2, 3})}, targets);
    engine.on_trap_begin(0, mem);
    CHECK(mem.read_bytes(256, 3) == Bytes{0, 0, 0});
    engine.on_trap_begin(3, mem);
    CHECK(mem.read_bytes(256, 3) == Bytes{1, 2, 3});
    CHECK(engine.pending_restores() == 0);
  }

  SECTION("the wrong trap is rejected") {
    AttackEngine engine({}, targets);
    CHECK(thrown_code([&] { engine.inject(persistent("table", 3), mem, 2); }) == Errc::ValidationError);
  }

  SECTION("unknown targets and oversized payloads are rejected") {
    AttackEngine engine({}, targets);
    CHECK(thrown_code([&] { engine.inject(persistent("ghost", 0), mem, 0); }) == Errc::UnknownTarget);
    CHECK(thrown_code([&] { engine.inject(persistent("table", 0, Bytes(17, 1)), mem, 0); }) ==
          Errc::ValidationError);
    CHECK(thrown_code([&] { engine.inject(persistent("table", 0, {}), mem, 0); }) ==
          Errc::ValidationError);
  }

  SECTION("a payload identical to memory is a no-op attack") {
    AttackEngine engine({}, targets);
    CHECK(thrown_code([&] { engine.inject(persistent("table", 0, {0, 0}), mem, 0); }) ==
          Errc::NoOpAttack);
  }

  SECTION("a zero-duration transient is rejected") {
    AttackEngine engine({}, targets);
    CHECK(thrown_code([&] { engine.inject(transient("table", 0, 0), mem, 0); }) ==
          Errc::ValidationError);
  }
}

TEST_CASE("transient attacks restore the original bytes when they expire") {
  GuestMemory mem(4096);
  Bytes original{9, 8, 7, 6};
  mem.write_bytes(256, view_of(original));
  std::map<std::string, TargetRange> targets{{"table", TargetRange{256, 16}}};

  AttackEngine engine({transient("table", 2, 3, {1, 1, 1, 1})}, targets);
  engine.on_trap_begin(2, mem);
  CHECK(mem.read_bytes(256, 4) == Bytes{1, 1, 1, 1});
  CHECK(engine.pending_restores() == 1);
  engine.on_trap_begin(3, mem);
  engine.on_trap_begin(4, mem);
  CHECK(mem.read_bytes(256, 4) == Bytes{1, 1, 1, 1});  // still live through trap 4
  engine.on_trap_begin(5, mem);                         // due at inject_at + duration
  CHECK(mem.read_bytes(256, 4) == original);
  CHECK(engine.pending_restores() == 0);
}

TEST_CASE("the monitor is blind to writes outside the protected set") {
  GuestMemory mem(1 << 16);
  std::vector<KernelObject> objects{{"table", ObjectKind::StaticFixed, 4096, 64, true}};
  HypervisorMonitor monitor(FixedBudget{4});
  TrustedModule module(1);
  monitor.register_objects(module.hypercall_register(objects, mem), mem);
  monitor.close_trust_window();

  std::map<std::string, TargetRange> targets{{"table", TargetRange{4096, 64}}};
  AttackScenario unprot{AttackKind::Unprotected, std::nullopt, TargetRange{8192, 128}, 0, 1,
                        Bytes(128, 0x66)};
  AttackEngine engine({unprot}, targets);

  for (std::uint64_t s = 0; s < 20; ++s) {
    engine.on_trap_begin(s, mem);
    CHECK(monitor.on_trap(TrapEvent{s, 1}, mem).empty());
  }
  CHECK(mem.read_bytes(8192, 4) == Bytes(4, 0x66));  // the write persisted, unnoticed
}

TEST_CASE("a cursor-aware adversary dodges the window it is about to be checked by") {
  GuestMemory mem(1 << 16);
  std::vector<KernelObject> objects;
  std::map<std::string, TargetRange> targets;
  std::map<std::string, std::uint64_t> index_by_id;
  for (std::uint64_t i = 0; i < 4; ++i) {
    std::string id = "obj" + std::to_string(i);
    objects.push_back(KernelObject{id, ObjectKind::StaticFixed, 4096 + i * 64, 64, true});
    targets.emplace(id, TargetRange{4096 + i * 64, 64});
    index_by_id.emplace(id, i);
  }
  HypervisorMonitor monitor(FixedBudget{1});
  TrustedModule module(1);
  monitor.register_objects(module.hypercall_register(objects, mem), mem);
  monitor.close_trust_window();

  // Long-lived transient on index 2; with budget one the sweep reaches it on
  // trap two, but the adversary peeks at the cursor and ducks.
  AttackEngine engine({transient("obj2", 0, 100, {0xaa})}, targets);
  bool ever_reported = false;
  for (std::uint64_t s = 0; s < 10; ++s) {
    engine.on_trap_begin(s, mem);
    engine.evade_checks(monitor.cursor(), 1, monitor.record_count(), index_by_id, mem);
    ever_reported = ever_reported || !monitor.on_trap(TrapEvent{s, 1}, mem).empty();
  }
  CHECK_FALSE(ever_reported);
  CHECK(engine.pending_restores() == 0);  // it bailed out when the sweep arrived
  CHECK(mem.read_bytes(4096 + 2 * 64, 1) == Bytes{0});
}
