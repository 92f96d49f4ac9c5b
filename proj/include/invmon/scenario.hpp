#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "invmon/attack.hpp"
#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/monitor.hpp"
#include "invmon/rng.hpp"
#include "invmon/trusted_module.hpp"

namespace invmon {

struct ProcessDecl {
  std::uint64_t pid;
  std::uint64_t cr3;
};

struct HeapDecl {
  std::string tag;
  std::uint64_t size;
};

struct ScheduleSpec {
  std::vector<std::uint64_t> pids;      // explicit switch list
  bool random = false;                  // or: generated, always-switching
  std::uint64_t length = 0;             // entries when random
  std::optional<std::uint64_t> seed;    // defaults to the scenario seed
};

/// Everything a run needs, as parsed from a scenario file. A config (with its
/// seed) fully determines the run: same config, byte-identical report.
struct ScenarioConfig {
  std::uint64_t memory_size = 1ull << 20;
  std::uint64_t heap_base = 4096;
  std::uint64_t seed = 0;
  bool repair_enabled = true;
  std::uint64_t boot_epoch = 1;
  bool cursor_aware_adversary = false;
  SymbolMap symbols;
  std::vector<ProcessDecl> processes;
  ScheduleSpec schedule;
  std::vector<HeapDecl> heap;
  std::vector<ObjectDeclaration> objects;
  BudgetPolicy budget = FixedBudget{1};
  std::vector<AttackScenario> attacks;
};

namespace scenario_detail {

[[noreturn]] inline void fail(std::size_t line, const std::string& what) {
  raise(Errc::ParseError, "line " + std::to_string(line) + ": " + what);
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline std::uint64_t parse_u64(const std::string& text, std::size_t line, const std::string& field) {
  std::string t = trim(text);
  if (t.empty()) fail(line, "empty value for \"" + field + "\"");
  int base = 10;
  std::size_t start = 0;
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    start = 2;
  }
  std::uint64_t value = 0;
  for (std::size_t i = start; i < t.size(); ++i) {
    int d = (base == 16) ? hex_nibble(t[i]) : (t[i] >= '0' && t[i] <= '9' ? t[i] - '0' : -1);
    if (d < 0) fail(line, "bad number \"" + t + "\" for \"" + field + "\"");
    if (value > (~0ull - std::uint64_t(d)) / base) fail(line, "number overflow in \"" + field + "\"");
    value = value * base + std::uint64_t(d);
  }
  return value;
}

inline double parse_f64(const std::string& text, std::size_t line, const std::string& field) {
  try {
    std::size_t used = 0;
    double v = std::stod(trim(text), &used);
    if (used != trim(text).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    fail(line, "bad number \"" + trim(text) + "\" for \"" + field + "\"");
  }
}

inline bool parse_bool(const std::string& text, std::size_t line, const std::string& field) {
  std::string t = trim(text);
  if (t == "true") return true;
  if (t == "false") return false;
  fail(line, "expected true/false for \"" + field + "\", got \"" + t + "\"");
}

inline Bytes parse_payload(const std::string& text, std::size_t line) {
  try {
    return from_hex(text);
  } catch (const Error& e) {
    fail(line, e.what());
  }
}

// A record line is whitespace-separated key=value tokens.
inline std::map<std::string, std::string> record_fields(const std::string& body, std::size_t line,
                                                        const std::vector<std::string>& allowed) {
  std::map<std::string, std::string> fields;
  for (const std::string& tok : tokens(body)) {
    std::size_t eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) fail(line, "expected key=value, got \"" + tok + "\"");
    std::string key = tok.substr(0, eq);
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(line, "unknown field \"" + key + "\"");
    }
    if (!fields.emplace(key, tok.substr(eq + 1)).second) fail(line, "duplicate field \"" + key + "\"");
  }
  return fields;
}

inline std::string need(const std::map<std::string, std::string>& fields, const std::string& key,
                        std::size_t line) {
  auto it = fields.find(key);
  if (it == fields.end()) fail(line, "missing field \"" + key + "\"");
  return it->second;
}

}  // namespace scenario_detail

/// Expands the schedule spec into the concrete switch list the guest will
/// run. Random schedules draw every entry uniformly from the processes other
/// than the one currently running, so each entry is a real switch and the
/// trap count equals the configured length.
inline std::vector<std::uint64_t> build_switch_list(const ScenarioConfig& config) {
  if (!config.schedule.random) return config.schedule.pids;
  std::vector<std::uint64_t> out;
  out.reserve(config.schedule.length);
  Xoshiro256ss rng(config.schedule.seed.value_or(config.seed));
  std::uint64_t current = config.processes.empty() ? 0 : config.processes.front().pid;
  for (std::uint64_t i = 0; i < config.schedule.length; ++i) {
    std::uint64_t pick = rng.below(config.processes.size() - 1);
    for (const ProcessDecl& p : config.processes) {
      if (p.pid == current) continue;
      if (pick == 0) {
        out.push_back(p.pid);
        current = p.pid;
        break;
      }
      --pick;
    }
  }
  return out;
}

/// Statically resolves every declared object the same way boot will: heap
/// addresses come from replaying the bump allocator over the heap section.
inline std::vector<KernelObject> resolve_objects(const ScenarioConfig& config) {
  std::map<std::string, HeapAllocation> heap;
  std::uint64_t next = config.heap_base;
  for (const HeapDecl& decl : config.heap) {
    heap.emplace(decl.tag, HeapAllocation{decl.tag, next, decl.size});
    next += decl.size;
  }
  return enumerate_invariants(config.objects, config.symbols, heap, config.memory_size);
}

inline void validate_scenario(const ScenarioConfig& config) {
  auto invalid = [](const std::string& what) { raise(Errc::ValidationError, what); };

  if (config.memory_size == 0) invalid("memory_size must be positive");
  if (config.heap_base > config.memory_size) invalid("heap_base beyond guest memory");
  if (config.processes.empty()) invalid("at least one process is required");
  for (std::size_t i = 0; i < config.processes.size(); ++i) {
    const ProcessDecl& p = config.processes[i];
    if (p.pid == 0 || p.cr3 == 0) invalid("pid and cr3 must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      if (config.processes[j].pid == p.pid) invalid("duplicate pid " + std::to_string(p.pid));
      if (config.processes[j].cr3 == p.cr3) invalid("duplicate cr3 " + std::to_string(p.cr3));
    }
  }
  for (std::uint64_t pid : config.schedule.pids) {
    bool known = false;
    for (const ProcessDecl& p : config.processes) known = known || p.pid == pid;
    if (!known) invalid("schedule names unknown pid " + std::to_string(pid));
  }
  if (config.schedule.random && config.processes.size() < 2) {
    invalid("random schedule needs at least two processes");
  }

  std::uint64_t heap_next = config.heap_base;
  for (std::size_t i = 0; i < config.heap.size(); ++i) {
    const HeapDecl& h = config.heap[i];
    if (h.size == 0) invalid("heap allocation \"" + h.tag + "\" must have size >= 1");
    for (std::size_t j = 0; j < i; ++j) {
      if (config.heap[j].tag == h.tag) invalid("duplicate heap tag \"" + h.tag + "\"");
    }
    if (h.size > config.memory_size || heap_next > config.memory_size - h.size) {
      invalid("heap allocation \"" + h.tag + "\" exceeds guest memory");
    }
    heap_next += h.size;
  }

  for (std::size_t i = 0; i < config.objects.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (config.objects[j].id == config.objects[i].id) {
        invalid("duplicate object id \"" + config.objects[i].id + "\"");
      }
    }
  }
  std::vector<KernelObject> resolved = resolve_objects(config);
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const KernelObject& a = resolved[j];
      const KernelObject& b = resolved[i];
      if (a.address < b.address + b.size && b.address < a.address + a.size) {
        invalid("objects \"" + a.id + "\" and \"" + b.id + "\" overlap");
      }
    }
  }

  if (const auto* fixed = std::get_if<FixedBudget>(&config.budget)) {
    if (fixed->objects_per_trap == 0) invalid("budget objects_per_trap must be >= 1");
  } else {
    const auto& la = std::get<LoadAdaptiveBudget>(config.budget);
    if (la.base == 0) invalid("budget base must be >= 1");
    if (la.window == 0) invalid("budget window must be >= 1");
    if (la.scale <= 0.0 || la.calibration <= 0.0) invalid("budget scale and calibration must be positive");
  }

  for (const AttackScenario& attack : config.attacks) {
    if (attack.payload.empty()) invalid("attack payload must not be empty");
    if (attack.kind == AttackKind::Unprotected) {
      if (!attack.raw) invalid("unprotected attack needs addr/size");
      const TargetRange& r = *attack.raw;
      if (r.size == 0) invalid("unprotected attack range must have size >= 1");
      if (r.address > config.memory_size || r.size > config.memory_size - r.address) {
        invalid("unprotected attack range outside guest memory");
      }
      for (const KernelObject& obj : resolved) {
        if (obj.address < r.address + r.size && r.address < obj.address + obj.size) {
          invalid("unprotected attack overlaps protected object \"" + obj.id + "\"");
        }
      }
      if (attack.payload.size() > r.size) invalid("attack payload exceeds target size");
    } else {
      if (!attack.target_id) invalid("protected attack needs target=<object id>");
      const KernelObject* obj = nullptr;
      for (const KernelObject& o : resolved) {
        if (o.id == *attack.target_id) obj = &o;
      }
      if (obj == nullptr) invalid("attack references unknown object \"" + *attack.target_id + "\"");
      if (attack.payload.size() > obj->size) invalid("attack payload exceeds target size");
      if (attack.kind == AttackKind::Transient && attack.duration == 0) {
        invalid("transient duration must be >= 1");
      }
    }
  }
}

/// Parses the line-oriented scenario format (see the scenario schema section
/// of the README) and validates the result.
inline ScenarioConfig parse_scenario(const std::string& text) {
  using namespace scenario_detail;

  ScenarioConfig config;
  std::string section;
  bool have_schedule_line = false;

  std::istringstream in(text);
  std::string raw_line;
  std::size_t line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string line = trim(raw_line);
    if (line.empty() || line[0] == '#') continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = line.substr(1, line.size() - 2);
      static const char* known[] = {"general", "symbols", "processes", "schedule",
                                    "heap",    "objects", "budget",    "attacks"};
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* s) { return section == s; }) == std::end(known)) {
        fail(line_no, "unknown section [" + section + "]");
      }
      continue;
    }
    if (section.empty()) fail(line_no, "content before any [section]");

    if (section == "general" || section == "symbols" || section == "budget") {
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) fail(line_no, "expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (section == "general") {
        if (key == "memory_size") config.memory_size = parse_u64(value, line_no, key);
        else if (key == "heap_base") config.heap_base = parse_u64(value, line_no, key);
        else if (key == "seed") config.seed = parse_u64(value, line_no, key);
        else if (key == "repair_enabled") config.repair_enabled = parse_bool(value, line_no, key);
        else if (key == "boot_epoch") config.boot_epoch = parse_u64(value, line_no, key);
        else if (key == "cursor_aware_adversary") config.cursor_aware_adversary = parse_bool(value, line_no, key);
        else fail(line_no, "unknown key \"" + key + "\" in [general]");
      } else if (section == "symbols") {
        if (key == "base") config.symbols.base = parse_u64(value, line_no, key);
        else if (!config.symbols.offsets.emplace(key, parse_u64(value, line_no, key)).second) {
          fail(line_no, "duplicate symbol \"" + key + "\"");
        }
      } else {  // budget
        if (key == "policy") {
          if (value == "fixed") config.budget = FixedBudget{1};
          else if (value == "load_adaptive") config.budget = LoadAdaptiveBudget{};
          else fail(line_no, "unknown budget policy \"" + value + "\"");
        } else if (key == "objects_per_trap") {
          auto* fixed = std::get_if<FixedBudget>(&config.budget);
          if (fixed == nullptr) fail(line_no, "objects_per_trap only applies to the fixed policy");
          fixed->objects_per_trap = parse_u64(value, line_no, key);
        } else if (key == "base" || key == "window" || key == "scale" || key == "calibration") {
          auto* la = std::get_if<LoadAdaptiveBudget>(&config.budget);
          if (la == nullptr) fail(line_no, "\"" + key + "\" only applies to the load_adaptive policy");
          if (key == "base") la->base = parse_u64(value, line_no, key);
          else if (key == "window") la->window = parse_u64(value, line_no, key);
          else if (key == "scale") la->scale = parse_f64(value, line_no, key);
          else la->calibration = parse_f64(value, line_no, key);
        } else {
          fail(line_no, "unknown key \"" + key + "\" in [budget]");
        }
      }
      continue;
    }

    if (section == "processes") {
      auto fields = record_fields(line, line_no, {"pid", "cr3"});
      config.processes.push_back(ProcessDecl{parse_u64(need(fields, "pid", line_no), line_no, "pid"),
                                             parse_u64(need(fields, "cr3", line_no), line_no, "cr3")});
      continue;
    }

    if (section == "schedule") {
      if (have_schedule_line) fail(line_no, "[schedule] takes a single line");
      have_schedule_line = true;
      if (line.rfind("pids", 0) == 0) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected pids = <list>");
        for (const std::string& tok : tokens(line.substr(eq + 1))) {
          config.schedule.pids.push_back(parse_u64(tok, line_no, "pids"));
        }
      } else if (line.rfind("random", 0) == 0) {
        auto fields = record_fields(trim(line.substr(6)), line_no, {"length", "seed"});
        config.schedule.random = true;
        config.schedule.length = parse_u64(need(fields, "length", line_no), line_no, "length");
        if (fields.count("seed")) config.schedule.seed = parse_u64(fields.at("seed"), line_no, "seed");
      } else {
        fail(line_no, "expected \"pids = ...\" or \"random length=N\"");
      }
      continue;
    }

    if (section == "heap") {
      auto fields = record_fields(line, line_no, {"tag", "size"});
      config.heap.push_back(HeapDecl{need(fields, "tag", line_no),
                                     parse_u64(need(fields, "size", line_no), line_no, "size")});
      continue;
    }

    if (section == "objects") {
      auto fields = record_fields(line, line_no,
                                  {"id", "kind", "addr", "symbol", "delta", "tag", "size", "copy"});
      ObjectDeclaration decl;
      decl.id = need(fields, "id", line_no);
      std::string kind = need(fields, "kind", line_no);
      if (kind == "static_fixed") {
        decl.kind = ObjectKind::StaticFixed;
        decl.address = parse_u64(need(fields, "addr", line_no), line_no, "addr");
      } else if (kind == "static_relocated") {
        decl.kind = ObjectKind::StaticRelocated;
        decl.symbol = need(fields, "symbol", line_no);
        if (fields.count("delta")) decl.delta = parse_u64(fields.at("delta"), line_no, "delta");
      } else if (kind == "dynamic_heap") {
        decl.kind = ObjectKind::DynamicHeap;
        decl.heap_tag = need(fields, "tag", line_no);
      } else {
        fail(line_no, "unknown object kind \"" + kind + "\"");
      }
      if (fields.count("size")) decl.size = parse_u64(fields.at("size"), line_no, "size");
      else if (decl.kind != ObjectKind::DynamicHeap) fail(line_no, "missing field \"size\"");
      if (fields.count("copy")) decl.provide_copy = parse_bool(fields.at("copy"), line_no, "copy");
      config.objects.push_back(std::move(decl));
      continue;
    }

    if (section == "attacks") {
      auto fields = record_fields(line, line_no,
                                  {"kind", "target", "addr", "size", "at", "duration", "payload"});
      AttackScenario attack;
      std::string kind = need(fields, "kind", line_no);
      if (kind == "persistent") attack.kind = AttackKind::Persistent;
      else if (kind == "transient") attack.kind = AttackKind::Transient;
      else if (kind == "unprotected") attack.kind = AttackKind::Unprotected;
      else fail(line_no, "unknown attack kind \"" + kind + "\"");
      if (attack.kind == AttackKind::Unprotected) {
        attack.raw = TargetRange{parse_u64(need(fields, "addr", line_no), line_no, "addr"),
                                 parse_u64(need(fields, "size", line_no), line_no, "size")};
      } else {
        attack.target_id = need(fields, "target", line_no);
      }
      attack.inject_at = parse_u64(need(fields, "at", line_no), line_no, "at");
      if (attack.kind == AttackKind::Transient) {
        attack.duration = parse_u64(need(fields, "duration", line_no), line_no, "duration");
      }
      attack.payload = parse_payload(need(fields, "payload", line_no), line_no);
      config.attacks.push_back(std::move(attack));
      continue;
    }
  }

  validate_scenario(config);
  return config;
}

}  // namespace invmon
