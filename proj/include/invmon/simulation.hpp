#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "invmon/attack.hpp"
#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/guest.hpp"
#include "invmon/monitor.hpp"
#include "invmon/scenario.hpp"
#include "invmon/trusted_module.hpp"

namespace invmon {

/// Per-attack verdict after the run. Latency counts traps inclusively from
/// the injection trap to the trap whose check flagged the object.
struct AttackOutcome {
  AttackKind kind = AttackKind::Persistent;
  std::optional<std::string> target_id;
  std::optional<TargetRange> raw;
  std::uint64_t injected_at = 0;
  std::optional<std::uint64_t> duration;  // transient only
  bool detected = false;
  std::optional<std::uint64_t> detected_at;
  std::optional<std::uint64_t> latency;
  bool repaired = false;
};

struct DetectionEntry {
  std::string object_id;
  std::uint64_t trap_sequence;
  std::string observed_hash;  // hex
  bool repaired;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::uint64_t traps = 0;
  std::uint64_t quanta = 0;
  std::uint64_t protected_objects = 0;
  bool repair_enabled = true;
  BudgetPolicy budget = FixedBudget{1};
  std::uint64_t objects_checked = 0;
  std::uint64_t bytes_hashed = 0;
  std::uint64_t record_store_bytes = 0;
  std::uint64_t detections = 0;
  double bytes_hashed_per_trap = 0.0;
  std::optional<double> mean_latency;
  std::optional<std::uint64_t> max_latency;
  std::vector<DetectionEntry> detection_log;
  std::vector<AttackOutcome> outcomes;
};

/// Runs one configured scenario end to end: boot (enumerate, register,
/// unload, close the trust window), then the trap loop with attacks applied
/// at their scripted traps and the monitor checking under its budget.
inline RunReport run_simulation(const ScenarioConfig& config) {
  validate_scenario(config);

  Guest guest(config.memory_size, config.heap_base);
  for (const ProcessDecl& p : config.processes) guest.add_process(p.pid, p.cr3);
  for (const HeapDecl& h : config.heap) guest.kheap_alloc(h.tag, h.size);

  std::vector<KernelObject> objects =
      enumerate_invariants(config.objects, config.symbols, guest.heap(), config.memory_size);

  TrustedModule module(config.boot_epoch);
  HypervisorMonitor monitor(config.budget, config.repair_enabled);
  monitor.register_objects(module.hypercall_register(objects, guest.memory()), guest.memory());
  module.unload();
  monitor.close_trust_window();

  std::map<std::string, TargetRange> targets;
  std::map<std::string, std::uint64_t> index_by_id;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    targets.emplace(objects[i].id, TargetRange{objects[i].address, objects[i].size});
    index_by_id.emplace(objects[i].id, i);
  }
  AttackEngine engine(config.attacks, targets);

  RunReport report;
  report.seed = config.seed;
  report.repair_enabled = config.repair_enabled;
  report.budget = config.budget;
  report.protected_objects = monitor.record_count();
  report.outcomes.reserve(config.attacks.size());
  for (const AttackScenario& a : config.attacks) {
    AttackOutcome o;
    o.kind = a.kind;
    o.target_id = a.target_id;
    o.raw = a.raw;
    o.injected_at = a.inject_at;
    if (a.kind == AttackKind::Transient) o.duration = a.duration;
    report.outcomes.push_back(std::move(o));
  }

  const auto* adaptive = std::get_if<LoadAdaptiveBudget>(&config.budget);
  std::vector<std::uint64_t> quanta_at_trap;  // guest quanta consumed when each trap fired
  double current_rate = 1.0;

  std::vector<std::uint64_t> switch_list = build_switch_list(config);
  for (std::uint64_t pid : switch_list) {
    std::vector<TrapEvent> events = guest.run_schedule(std::span(&pid, 1));
    if (events.empty()) continue;
    const TrapEvent& event = events.front();
    guest.memory().set_clock(event.sequence);

    if (adaptive != nullptr) {
      quanta_at_trap.push_back(guest.quanta());
      std::size_t k = quanta_at_trap.size() - 1;
      std::uint64_t count = std::min<std::uint64_t>(k + 1, adaptive->window);
      std::uint64_t quanta_elapsed =
          quanta_at_trap[k] - (k + 1 > count ? quanta_at_trap[k - count] : 0);
      double rate = static_cast<double>(count) / static_cast<double>(std::max<std::uint64_t>(1, quanta_elapsed));
      current_rate = rate / adaptive->calibration;
      monitor.observe_load(current_rate);
    }

    engine.on_trap_begin(event.sequence, guest.memory());
    if (config.cursor_aware_adversary) {
      engine.evade_checks(monitor.cursor(), compute_budget(config.budget, current_rate),
                          monitor.record_count(), index_by_id, guest.memory());
    }

    for (const DetectionReport& det : monitor.on_trap(event, guest.memory())) {
      report.detection_log.push_back(
          DetectionEntry{det.object_id, det.trap_sequence, to_hex(det.observed_hash), det.repaired});
      // Attribute to the latest not-yet-claimed attack on this object whose
      // injection is not in the future.
      AttackOutcome* best = nullptr;
      for (AttackOutcome& o : report.outcomes) {
        if (o.detected || !o.target_id || *o.target_id != det.object_id) continue;
        if (o.injected_at > det.trap_sequence) continue;
        if (best == nullptr || o.injected_at > best->injected_at) best = &o;
      }
      if (best != nullptr) {
        best->detected = true;
        best->detected_at = det.trap_sequence;
        best->latency = det.trap_sequence - best->injected_at + 1;
        best->repaired = det.repaired;
      }
    }
  }

  report.traps = monitor.traps_handled();
  report.quanta = guest.quanta();
  report.objects_checked = monitor.objects_checked();
  report.bytes_hashed = monitor.bytes_hashed();
  report.record_store_bytes = monitor.record_store_bytes();
  report.detections = report.detection_log.size();
  report.bytes_hashed_per_trap =
      report.traps == 0 ? 0.0 : static_cast<double>(report.bytes_hashed) / static_cast<double>(report.traps);

  std::uint64_t detected_count = 0;
  std::uint64_t latency_sum = 0;
  std::uint64_t latency_max = 0;
  for (const AttackOutcome& o : report.outcomes) {
    if (!o.detected) continue;
    ++detected_count;
    latency_sum += *o.latency;
    latency_max = std::max(latency_max, *o.latency);
  }
  if (detected_count > 0) {
    report.mean_latency = static_cast<double>(latency_sum) / static_cast<double>(detected_count);
    report.max_latency = latency_max;
  }
  return report;
}

enum class ReportFormat { Json, Csv };

namespace report_detail {

inline nlohmann::ordered_json budget_json(const BudgetPolicy& policy) {
  nlohmann::ordered_json j;
  if (const auto* fixed = std::get_if<FixedBudget>(&policy)) {
    j["policy"] = "fixed";
    j["objects_per_trap"] = fixed->objects_per_trap;
  } else {
    const auto& la = std::get<LoadAdaptiveBudget>(policy);
    j["policy"] = "load_adaptive";
    j["base"] = la.base;
    j["window"] = la.window;
    j["scale"] = la.scale;
    j["calibration"] = la.calibration;
  }
  return j;
}

inline BudgetPolicy budget_from_json(const nlohmann::json& j) {
  std::string policy = j.at("policy").get<std::string>();
  if (policy == "fixed") return FixedBudget{j.at("objects_per_trap").get<std::uint64_t>()};
  if (policy == "load_adaptive") {
    LoadAdaptiveBudget la;
    la.base = j.at("base").get<std::uint64_t>();
    la.window = j.at("window").get<std::uint64_t>();
    la.scale = j.at("scale").get<double>();
    la.calibration = j.at("calibration").get<double>();
    return la;
  }
  raise(Errc::ParseError, "unknown budget policy \"" + policy + "\"");
}

}  // namespace report_detail

inline nlohmann::ordered_json report_to_json(const RunReport& report) {
  nlohmann::ordered_json j;
  auto& run = j["run"];
  run["seed"] = report.seed;
  run["traps"] = report.traps;
  run["quanta"] = report.quanta;
  run["protected_objects"] = report.protected_objects;
  run["repair_enabled"] = report.repair_enabled;
  run["budget"] = report_detail::budget_json(report.budget);
  auto& totals = j["totals"];
  totals["objects_checked"] = report.objects_checked;
  totals["bytes_hashed"] = report.bytes_hashed;
  totals["bytes_hashed_per_trap"] = report.bytes_hashed_per_trap;
  totals["record_store_bytes"] = report.record_store_bytes;
  totals["detections"] = report.detections;
  auto& latency = j["latency"];
  latency["mean"] = report.mean_latency.has_value() ? nlohmann::ordered_json(*report.mean_latency)
                                                    : nlohmann::ordered_json(nullptr);
  latency["max"] = report.max_latency.has_value() ? nlohmann::ordered_json(*report.max_latency)
                                                  : nlohmann::ordered_json(nullptr);
  j["detections"] = nlohmann::ordered_json::array();
  for (const DetectionEntry& d : report.detection_log) {
    nlohmann::ordered_json e;
    e["object"] = d.object_id;
    e["trap"] = d.trap_sequence;
    e["observed"] = d.observed_hash;
    e["repaired"] = d.repaired;
    j["detections"].push_back(std::move(e));
  }
  j["attacks"] = nlohmann::ordered_json::array();
  for (const AttackOutcome& o : report.outcomes) {
    nlohmann::ordered_json e;
    e["kind"] = to_string(o.kind);
    if (o.target_id) e["target"] = *o.target_id;
    if (o.raw) {
      e["addr"] = o.raw->address;
      e["size"] = o.raw->size;
    }
    e["injected_at"] = o.injected_at;
    if (o.duration) e["duration"] = *o.duration;
    e["detected"] = o.detected;
    e["detected_at"] = o.detected_at.has_value() ? nlohmann::ordered_json(*o.detected_at)
                                                 : nlohmann::ordered_json(nullptr);
    e["latency"] = o.latency.has_value() ? nlohmann::ordered_json(*o.latency)
                                         : nlohmann::ordered_json(nullptr);
    e["repaired"] = o.repaired;
    j["attacks"].push_back(std::move(e));
  }
  return j;
}

inline RunReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::ParseError, e.what());
  }
  try {
    RunReport report;
    const auto& run = j.at("run");
    report.seed = run.at("seed").get<std::uint64_t>();
    report.traps = run.at("traps").get<std::uint64_t>();
    report.quanta = run.at("quanta").get<std::uint64_t>();
    report.protected_objects = run.at("protected_objects").get<std::uint64_t>();
    report.repair_enabled = run.at("repair_enabled").get<bool>();
    report.budget = report_detail::budget_from_json(run.at("budget"));
    const auto& totals = j.at("totals");
    report.objects_checked = totals.at("objects_checked").get<std::uint64_t>();
    report.bytes_hashed = totals.at("bytes_hashed").get<std::uint64_t>();
    report.bytes_hashed_per_trap = totals.at("bytes_hashed_per_trap").get<double>();
    report.record_store_bytes = totals.at("record_store_bytes").get<std::uint64_t>();
    report.detections = totals.at("detections").get<std::uint64_t>();
    const auto& latency = j.at("latency");
    if (!latency.at("mean").is_null()) report.mean_latency = latency.at("mean").get<double>();
    if (!latency.at("max").is_null()) report.max_latency = latency.at("max").get<std::uint64_t>();
    for (const auto& d : j.at("detections")) {
      report.detection_log.push_back(DetectionEntry{d.at("object").get<std::string>(),
                                                    d.at("trap").get<std::uint64_t>(),
                                                    d.at("observed").get<std::string>(),
                                                    d.at("repaired").get<bool>()});
    }
    for (const auto& a : j.at("attacks")) {
      AttackOutcome o;
      std::string kind = a.at("kind").get<std::string>();
      if (kind == "persistent") o.kind = AttackKind::Persistent;
      else if (kind == "transient") o.kind = AttackKind::Transient;
      else if (kind == "unprotected") o.kind = AttackKind::Unprotected;
      else raise(Errc::ParseError, "unknown attack kind \"" + kind + "\"");
      if (a.contains("target")) o.target_id = a.at("target").get<std::string>();
      if (a.contains("addr")) o.raw = TargetRange{a.at("addr").get<std::uint64_t>(), a.at("size").get<std::uint64_t>()};
      o.injected_at = a.at("injected_at").get<std::uint64_t>();
      if (a.contains("duration")) o.duration = a.at("duration").get<std::uint64_t>();
      o.detected = a.at("detected").get<bool>();
      if (!a.at("detected_at").is_null()) o.detected_at = a.at("detected_at").get<std::uint64_t>();
      if (!a.at("latency").is_null()) o.latency = a.at("latency").get<std::uint64_t>();
      o.repaired = a.at("repaired").get<bool>();
      report.outcomes.push_back(std::move(o));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::ValidationError, std::string("report shape: ") + e.what());
  }
}

/// Renders the report. JSON is the full structure, pretty-printed with stable
/// key order so identical runs serialize byte-for-byte identically. CSV is
/// one row per attack outcome plus `#`-prefixed totals footer lines.
inline std::string emit_report(const RunReport& report, ReportFormat format) {
  if (format == ReportFormat::Json) return report_to_json(report).dump(2) + "\n";

  std::string out = "kind,target,addr,size,injected_at,duration,detected,detected_at,latency,repaired\n";
  for (const AttackOutcome& o : report.outcomes) {
    out += to_string(o.kind);
    out += ',';
    out += o.target_id ? *o.target_id : "";
    out += ',';
    out += o.raw ? std::to_string(o.raw->address) : "";
    out += ',';
    out += o.raw ? std::to_string(o.raw->size) : "";
    out += ',';
    out += std::to_string(o.injected_at);
    out += ',';
    out += o.duration ? std::to_string(*o.duration) : "";
    out += ',';
    out += o.detected ? "true" : "false";
    out += ',';
    out += o.detected_at ? std::to_string(*o.detected_at) : "";
    out += ',';
    out += o.latency ? std::to_string(*o.latency) : "";
    out += ',';
    out += o.repaired ? "true" : "false";
    out += '\n';
  }
  out += "# traps=" + std::to_string(report.traps);
  out += " quanta=" + std::to_string(report.quanta);
  out += " protected_objects=" + std::to_string(report.protected_objects);
  out += " objects_checked=" + std::to_string(report.objects_checked);
  out += " bytes_hashed=" + std::to_string(report.bytes_hashed);
  out += " record_store_bytes=" + std::to_string(report.record_store_bytes);
  out += " detections=" + std::to_string(report.detections);
  out += '\n';
  return out;
}

}  // namespace invmon
