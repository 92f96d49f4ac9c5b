#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/isolation.hpp"

namespace invmon {

/// A simulated CR3-write VM exit. `sequence` numbers are issued by the guest's
/// global counter and are consecutive across the whole run: the trap sequence
/// is the simulation's only clock.
struct TrapEvent {
  std::uint64_t sequence;
  std::uint64_t new_cr3;
};

struct WriteRecord {
  std::uint64_t sequence;  // trap during which the write happened
  std::uint64_t address;
  std::uint64_t length;
};

struct HeapAllocation {
  std::string tag;
  std::uint64_t address;
  std::uint64_t size;
};

/// Flat simulated guest-physical address space with an audit log of writes.
/// No paging is modeled; protected-object addresses are physical offsets.
class GuestMemory {
 public:
  explicit GuestMemory(std::uint64_t size_bytes, std::shared_ptr<IsolationGate> gate = nullptr)
      : mem_(size_bytes, 0), gate_(std::move(gate)) {}

  std::uint64_t size() const { return mem_.size(); }

  Bytes read_bytes(std::uint64_t addr, std::uint64_t len) const {
    check_range(addr, len);
    return Bytes(mem_.begin() + static_cast<std::ptrdiff_t>(addr),
                 mem_.begin() + static_cast<std::ptrdiff_t>(addr + len));
  }

  ByteView view(std::uint64_t addr, std::uint64_t len) const {
    check_range(addr, len);
    return ByteView(mem_.data() + addr, len);
  }

  void write_bytes(std::uint64_t addr, ByteView data) {
    if (gate_ && gate_->active) raise(Errc::IsolationViolation, "guest write during isolated session");
    check_range(addr, data.size());
    std::copy(data.begin(), data.end(), mem_.begin() + static_cast<std::ptrdiff_t>(addr));
    log_.push_back(WriteRecord{clock_, addr, data.size()});
  }

  // Stamp subsequent write records with the trap currently being processed.
  void set_clock(std::uint64_t trap_sequence) { clock_ = trap_sequence; }

  const std::vector<WriteRecord>& write_log() const { return log_; }

 private:
  void check_range(std::uint64_t addr, std::uint64_t len) const {
    if (addr > mem_.size() || len > mem_.size() - addr) {
      raise(Errc::OutOfBounds, "range [" + std::to_string(addr) + ", +" + std::to_string(len) +
                                   ") exceeds " + std::to_string(mem_.size()) + " bytes");
    }
  }

  std::vector<std::uint8_t> mem_;
  std::vector<WriteRecord> log_;
  std::uint64_t clock_ = 0;
  std::shared_ptr<IsolationGate> gate_;
};

/// The guest: memory, a process table whose context switches emit trap
/// events, and a bump allocator standing in for the kernel heap. The first
/// registered process is the one initially running.
class Guest {
 public:
  explicit Guest(std::uint64_t memory_size, std::uint64_t heap_base = 4096,
                 std::shared_ptr<IsolationGate> gate = nullptr)
      : mem_(memory_size, gate), gate_(std::move(gate)), heap_base_(heap_base), heap_next_(heap_base) {
    if (heap_base_ > memory_size) raise(Errc::OutOfBounds, "heap base beyond guest memory");
  }

  GuestMemory& memory() { return mem_; }
  const GuestMemory& memory() const { return mem_; }

  void add_process(std::uint64_t pid, std::uint64_t cr3) {
    if (pid == 0 || cr3 == 0) raise(Errc::ValidationError, "pid and cr3 must be positive");
    for (const auto& [p, c] : processes_) {
      if (p == pid) raise(Errc::ValidationError, "duplicate pid " + std::to_string(pid));
      if (c == cr3) raise(Errc::ValidationError, "duplicate cr3 " + std::to_string(cr3));
    }
    processes_.emplace_back(pid, cr3);
    if (processes_.size() == 1) running_ = pid;
  }

  std::uint64_t running_pid() const { return running_; }
  std::uint64_t next_sequence() const { return next_sequence_; }
  std::size_t process_count() const { return processes_.size(); }

  /// Runs a context-switch schedule. One TrapEvent is emitted per entry that
  /// actually switches away from the running process; entries naming the
  /// running process are consumed silently. The whole schedule is validated
  /// before any event is emitted.
  std::vector<TrapEvent> run_schedule(std::span<const std::uint64_t> switch_list) {
    if (gate_ && gate_->active) raise(Errc::IsolationViolation, "schedule run during isolated session");
    for (std::uint64_t pid : switch_list) {
      if (cr3_of(pid) == 0) raise(Errc::UnknownPid, "pid " + std::to_string(pid));
    }
    std::vector<TrapEvent> events;
    for (std::uint64_t pid : switch_list) {
      ++quanta_;
      if (pid == running_) continue;
      running_ = pid;
      events.push_back(TrapEvent{next_sequence_++, cr3_of(pid)});
    }
    return events;
  }

  // Scheduler quanta consumed so far (every schedule entry, switching or not).
  std::uint64_t quanta() const { return quanta_; }

  /// First-fit allocation from a fixed heap base. There is no free: dynamic
  /// kernel objects keep stable addresses for the lifetime of the boot.
  HeapAllocation kheap_alloc(const std::string& tag, std::uint64_t size) {
    if (gate_ && gate_->active) raise(Errc::IsolationViolation, "allocation during isolated session");
    if (heap_.count(tag) != 0) raise(Errc::ValidationError, "heap tag \"" + tag + "\" already allocated");
    if (size > mem_.size() || heap_next_ > mem_.size() - size) {
      raise(Errc::OutOfMemory, "allocation \"" + tag + "\" of " + std::to_string(size) + " bytes");
    }
    HeapAllocation alloc{tag, heap_next_, size};
    heap_next_ += size;
    heap_.emplace(tag, alloc);
    return alloc;
  }

  const std::map<std::string, HeapAllocation>& heap() const { return heap_; }

 private:
  std::uint64_t cr3_of(std::uint64_t pid) const {
    for (const auto& [p, c] : processes_) {
      if (p == pid) return c;
    }
    return 0;
  }

  GuestMemory mem_;
  std::shared_ptr<IsolationGate> gate_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> processes_;  // (pid, cr3), insertion order
  std::uint64_t running_ = 0;
  std::uint64_t next_sequence_ = 0;
  std::uint64_t quanta_ = 0;
  std::uint64_t heap_base_;
  std::uint64_t heap_next_;
  std::map<std::string, HeapAllocation> heap_;
};

}  // namespace invmon
