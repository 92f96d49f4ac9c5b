#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "invmon/simulation.hpp"
#include "invmon/trust_chain.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) invmon::raise(invmon::Errc::ValidationError, "cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int cmd_run(const std::string& scenario_path, const std::string& format, const std::string& out_path) {
  invmon::ScenarioConfig config = invmon::parse_scenario(slurp(scenario_path));
  invmon::RunReport report = invmon::run_simulation(config);
  std::string rendered = invmon::emit_report(
      report, format == "csv" ? invmon::ReportFormat::Csv : invmon::ReportFormat::Json);
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) invmon::raise(invmon::Errc::ValidationError, "cannot write \"" + out_path + "\"");
    out << rendered;
  }
  return report.detections > 0 ? 2 : 0;
}

int cmd_oracle(const std::string& scenario_path) {
  invmon::ScenarioConfig config = invmon::parse_scenario(slurp(scenario_path));
  const auto* fixed = std::get_if<invmon::FixedBudget>(&config.budget);
  if (fixed == nullptr) {
    invmon::raise(invmon::Errc::ValidationError, "the oracle covers the fixed budget policy only");
  }
  std::vector<invmon::KernelObject> objects = invmon::resolve_objects(config);
  std::uint64_t n = objects.size();
  std::uint64_t budget = fixed->objects_per_trap;
  std::uint64_t per_trap = std::min(budget, n == 0 ? budget : n);
  std::cout << "objects=" << n << " budget=" << budget << "\n";
  for (const invmon::AttackScenario& attack : config.attacks) {
    std::cout << invmon::to_string(attack.kind);
    if (attack.target_id) std::cout << " " << *attack.target_id;
    std::cout << " at=" << attack.inject_at;
    if (attack.kind == invmon::AttackKind::Unprotected) {
      std::cout << ": outside protection, never detected\n";
      continue;
    }
    std::uint64_t index = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (objects[i].id == *attack.target_id) index = i;
    }
    std::uint64_t cursor = n == 0 ? 0 : (attack.inject_at * per_trap) % n;
    invmon::OraclePrediction p = invmon::detection_oracle(attack, n, budget, cursor, index);
    if (p.detected) {
      std::cout << ": detected latency=" << *p.latency_traps << "\n";
    } else {
      std::cout << ": evades\n";
    }
  }
  return 0;
}

int cmd_selftest() {
  using namespace invmon;
  bool ok = true;
  auto check = [&ok](bool cond, const char* what) {
    std::cout << (cond ? "ok   " : "FAIL ") << what << "\n";
    ok = ok && cond;
  };

  check(to_hex(sha256(std::string{})) ==
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855",
        "sha256 of the empty string");
  check(to_hex(sha256(std::string{"abc"})) ==
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
        "sha256 of \"abc\"");

  MeasurementRegister reg;
  reg = extend(reg, sha256(std::string{"stage"}));
  check(reg.history.size() == 1 && reg.value != Digest{}, "measurement register extend");

  TpmDevice tpm(7);
  Bytes hv_image{'h', 'v'};
  MeasurementRegister srtm = extend(MeasurementRegister{}, ByteView(hv_image.data(), hv_image.size()));
  Bytes secret{1, 2, 3, 4};
  SealedBlob blob = tpm.seal(ByteView(secret.data(), secret.size()), srtm.value);
  check(tpm.unseal(blob, srtm) == secret, "seal round trip");

  ScenarioConfig config;
  config.memory_size = 1 << 16;
  config.seed = 42;
  config.processes = {{1, 0x1000}, {2, 0x2000}};
  config.schedule.random = true;
  config.schedule.length = 64;
  config.objects.push_back(ObjectDeclaration{"table", ObjectKind::StaticFixed, 0x100, "", 0, "", 64, true});
  config.attacks.push_back(AttackScenario{AttackKind::Persistent, "table", std::nullopt, 5, 1, Bytes{0xff}});
  RunReport report = run_simulation(config);
  check(report.traps == 64 && report.outcomes.size() == 1 && report.outcomes[0].detected &&
            *report.outcomes[0].latency == 1 && report.outcomes[0].repaired,
        "single-object detection and repair");
  check(emit_report(report, ReportFormat::Json) ==
            emit_report(run_simulation(config), ReportFormat::Json),
        "rerun reproducibility");

  std::cout << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel integrity monitoring simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string format = "json";
  std::string out_path;

  auto* run = app.add_subcommand("run", "Execute a scenario file and emit the run report");
  run->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);
  run->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  run->add_option("--out", out_path, "Write the report here instead of stdout");

  auto* oracle = app.add_subcommand("oracle", "Print closed-form detection predictions for a scenario");
  oracle->add_option("scenario", scenario_path, "Scenario file")->required()->check(CLI::ExistingFile);

  auto* selftest = app.add_subcommand("selftest", "Run the built-in smoke checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario_path, format, out_path);
    if (oracle->parsed()) return cmd_oracle(scenario_path);
    if (selftest->parsed()) return cmd_selftest();
  } catch (const invmon::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
