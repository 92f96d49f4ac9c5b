#include "invmon/simulation.hpp"
#include "test_helpers.hpp"

using namespace invmon;

namespace {

// Two processes, an always-switching schedule, four 32-byte objects.
ScenarioConfig small_config(std::uint64_t traps, std::uint64_t budget = 1) {
  ScenarioConfig config;
  config.memory_size = 1 << 16;
  config.seed = 7;
  config.processes = {{1, 0x1000}, {2, 0x2000}};
  config.schedule.random = true;
  config.schedule.length = traps;
  for (std::uint64_t i = 0; i < 4; ++i) {
    config.objects.push_back(ObjectDeclaration{"obj" + std::to_string(i), ObjectKind::StaticFixed,
                                               4096 + i * 64, "", 0, "", 32, true});
  }
  config.budget = FixedBudget{budget};
  return config;
}

}  // namespace

TEST_CASE("a benign run completes with clean books") {
  ScenarioConfig config = small_config(100);
  RunReport report = run_simulation(config);

  CHECK(report.traps == 100);
  CHECK(report.quanta == 100);  // every schedule entry switched
  CHECK(report.protected_objects == 4);
  CHECK(report.detections == 0);
  CHECK(report.detection_log.empty());
  CHECK(report.outcomes.empty());
  CHECK(report.objects_checked == 100);           // budget one
  CHECK(report.bytes_hashed == 100 * 32);
  CHECK(report.bytes_hashed_per_trap == 32.0);
  CHECK(report.record_store_bytes == 4 * 48 + 4 * 32);
  CHECK_FALSE(report.mean_latency.has_value());
  CHECK_FALSE(report.max_latency.has_value());
}

TEST_CASE("per-trap hashing scales with the budget") {
  RunReport one = run_simulation(small_config(50, 1));
  RunReport two = run_simulation(small_config(50, 2));
  RunReport all = run_simulation(small_config(50, 64));
  CHECK(one.bytes_hashed_per_trap == 32.0);
  CHECK(two.bytes_hashed_per_trap == 64.0);
  CHECK(all.bytes_hashed_per_trap == 4 * 32.0);  // capped at the ring size
}

TEST_CASE("the record store grows linearly with the protected set") {
  ScenarioConfig base = small_config(1);
  ScenarioConfig doubled = small_config(1);
  for (std::uint64_t i = 4; i < 8; ++i) {
    doubled.objects.push_back(ObjectDeclaration{"obj" + std::to_string(i), ObjectKind::StaticFixed,
                                                4096 + i * 64, "", 0, "", 32, true});
  }
  CHECK(run_simulation(doubled).record_store_bytes == 2 * run_simulation(base).record_store_bytes);
}

TEST_CASE("a persistent attack is detected at the latency the oracle gives") {
  ScenarioConfig config = small_config(40, 1);
  config.attacks.push_back(
      AttackScenario{AttackKind::Persistent, "obj2", std::nullopt, 5, 1, Bytes{0xde, 0xad}});
  RunReport report = run_simulation(config);

  // Budget one from cursor zero: cursor at trap five is (5 * 1) % 4 = 1, the
  // walk reaches index two on the next-but-one check.
  AttackScenario scripted = config.attacks[0];
  OraclePrediction predicted = detection_oracle(scripted, 4, 1, 5 % 4, 2);
  REQUIRE(predicted.detected);

  REQUIRE(report.outcomes.size() == 1);
  const AttackOutcome& outcome = report.outcomes[0];
  CHECK(outcome.detected);
  CHECK(outcome.latency == *predicted.latency_traps);
  CHECK(outcome.detected_at == 5 + *predicted.latency_traps - 1);
  CHECK(outcome.repaired);
  CHECK(report.detections == 1);
  REQUIRE(report.detection_log.size() == 1);
  CHECK(report.detection_log[0].object_id == "obj2");
  CHECK(report.mean_latency == double(*predicted.latency_traps));
  CHECK(report.max_latency == *predicted.latency_traps);
}

TEST_CASE("a short transient evades a slow sweep and leaves no trace") {
  ScenarioConfig config = small_config(40, 1);
  // Cursor at trap 4 is (4 * 1) % 4 = 0; target index 3 needs four traps at
  // budget one, but the write reverts after one.
  config.attacks.push_back(
      AttackScenario{AttackKind::Transient, "obj3", std::nullopt, 4, 1, Bytes{0x66}});
  RunReport report = run_simulation(config);

  REQUIRE(report.outcomes.size() == 1);
  CHECK_FALSE(report.outcomes[0].detected);
  CHECK(report.detections == 0);
  CHECK_FALSE(report.outcomes[0].latency.has_value());
}

TEST_CASE("a long transient is caught like a persistent implant") {
  ScenarioConfig config = small_config(40, 2);
  config.attacks.push_back(
      AttackScenario{AttackKind::Transient, "obj3", std::nullopt, 8, 2, Bytes{0x66}});
  // Cursor at trap 8 with budget two: (8 * 2) % 4 = 0; offset 3, latency 2,
  // inside the two-trap lifetime.
  RunReport report = run_simulation(config);
  REQUIRE(report.outcomes.size() == 1);
  CHECK(report.outcomes[0].detected);
  CHECK(report.outcomes[0].latency == 2);
}

TEST_CASE("unprotected attacks never appear in the books") {
  ScenarioConfig config = small_config(40, 4);
  config.attacks.push_back(AttackScenario{AttackKind::Unprotected, std::nullopt,
                                          TargetRange{32768, 64}, 3, 1, Bytes{1, 2, 3}});
  RunReport report = run_simulation(config);
  CHECK(report.detections == 0);
  REQUIRE(report.outcomes.size() == 1);
  CHECK_FALSE(report.outcomes[0].detected);
}

TEST_CASE("the cursor-aware knob lets a transient dodge an otherwise fatal sweep") {
  ScenarioConfig config = small_config(40, 1);
  // Lives for a full rotation: always caught by an oblivious adversary.
  config.attacks.push_back(
      AttackScenario{AttackKind::Transient, "obj1", std::nullopt, 6, 6, Bytes{0x77}});

  RunReport oblivious = run_simulation(config);
  REQUIRE(oblivious.outcomes.size() == 1);
  CHECK(oblivious.outcomes[0].detected);

  config.cursor_aware_adversary = true;
  RunReport aware = run_simulation(config);
  REQUIRE(aware.outcomes.size() == 1);
  CHECK_FALSE(aware.outcomes[0].detected);
  CHECK(aware.detections == 0);
}

TEST_CASE("repair disabled leaves a persistent implant flagged every rotation") {
  ScenarioConfig config = small_config(40, 1);
  config.repair_enabled = false;
  config.attacks.push_back(
      AttackScenario{AttackKind::Persistent, "obj0", std::nullopt, 0, 1, Bytes{0x13}});
  RunReport report = run_simulation(config);
  // 40 traps at budget one pass index zero ten times.
  CHECK(report.detections == 10);
  REQUIRE(report.outcomes.size() == 1);
  CHECK(report.outcomes[0].detected);
  CHECK_FALSE(report.outcomes[0].repaired);
  CHECK(report.outcomes[0].latency == 1);  // cursor zero at trap zero
}

TEST_CASE("the load-adaptive policy trims the budget under a switch storm") {
  ScenarioConfig calm = small_config(64);
  calm.budget = LoadAdaptiveBudget{4, 16, 1.0, 1.0};
  // The random schedule switches on every quantum, so the observed rate is
  // 1.0; with calibration 1.0 the budget stays at base.
  RunReport calm_report = run_simulation(calm);
  CHECK(calm_report.objects_checked == 64 * 4);

  ScenarioConfig stormy = small_config(64);
  stormy.budget = LoadAdaptiveBudget{4, 16, 1.0, 0.25};
  // Same schedule, but calibrated for a quarter of the switch frequency: the
  // normalized rate is 4.0 and the budget drops to one.
  RunReport stormy_report = run_simulation(stormy);
  CHECK(stormy_report.objects_checked == 64 * 1);
}

TEST_CASE("reports serialize deterministically and round-trip through json") {
  ScenarioConfig config = small_config(60, 2);
  config.attacks.push_back(
      AttackScenario{AttackKind::Persistent, "obj1", std::nullopt, 7, 1, Bytes{0x01}});
  config.attacks.push_back(
      AttackScenario{AttackKind::Transient, "obj3", std::nullopt, 15, 1, Bytes{0x02}});

  RunReport first = run_simulation(config);
  RunReport second = run_simulation(config);
  std::string js1 = emit_report(first, ReportFormat::Json);
  std::string js2 = emit_report(second, ReportFormat::Json);
  CHECK(js1 == js2);
  CHECK(emit_report(first, ReportFormat::Csv) == emit_report(second, ReportFormat::Csv));

  RunReport parsed = report_from_json(js1);
  CHECK(emit_report(parsed, ReportFormat::Json) == js1);

  CHECK(testutil::thrown_code([] { report_from_json("{not json"); }) == Errc::ParseError);
  CHECK(testutil::thrown_code([] { report_from_json("{\"run\": {}}"); }) == Errc::ValidationError);
}

TEST_CASE("csv output carries one row per attack and a totals footer") {
  ScenarioConfig config = small_config(30, 4);
  config.attacks.push_back(
      AttackScenario{AttackKind::Persistent, "obj0", std::nullopt, 2, 1, Bytes{0x55}});
  RunReport report = run_simulation(config);
  std::string csv = emit_report(report, ReportFormat::Csv);

  CHECK(csv.find("kind,target,addr,size,injected_at,duration,detected,detected_at,latency,repaired\n") == 0);
  CHECK(csv.find("persistent,obj0,,,2,,true,2,1,true\n") != std::string::npos);
  CHECK(csv.find("# traps=30") != std::string::npos);
  CHECK(csv.find("detections=1") != std::string::npos);
}

TEST_CASE("scheduled pids that do not switch produce quanta but no traps") {
  ScenarioConfig config;
  config.memory_size = 1 << 16;
  config.processes = {{1, 0x1000}, {2, 0x2000}};
  config.schedule.pids = {1, 1, 2, 2, 1};  // two real switches
  config.objects.push_back(ObjectDeclaration{"a", ObjectKind::StaticFixed, 4096, "", 0, "", 16, false});
  RunReport report = run_simulation(config);
  CHECK(report.traps == 2);
  CHECK(report.quanta == 5);
}
