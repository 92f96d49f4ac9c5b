#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/guest.hpp"

namespace invmon {

enum class ObjectKind { StaticFixed, StaticRelocated, DynamicHeap };

inline const char* to_string(ObjectKind k) {
  switch (k) {
    case ObjectKind::StaticFixed: return "static_fixed";
    case ObjectKind::StaticRelocated: return "static_relocated";
    case ObjectKind::DynamicHeap: return "dynamic_heap";
  }
  return "?";
}

/// Compilation-dependent symbol layout: a load base plus per-symbol byte
/// offsets. Relocated objects resolve to base + offsets[symbol] + delta.
struct SymbolMap {
  std::uint64_t base = 0;
  std::map<std::string, std::uint64_t> offsets;
};

/// One invariant-object declaration, before address resolution. Which fields
/// apply depends on `kind`; `size` may be omitted for heap objects, in which
/// case the allocation size is used.
struct ObjectDeclaration {
  std::string id;
  ObjectKind kind = ObjectKind::StaticFixed;
  std::uint64_t address = 0;    // StaticFixed
  std::string symbol;           // StaticRelocated
  std::uint64_t delta = 0;      // StaticRelocated: extra offset past the symbol
  std::string heap_tag;         // DynamicHeap
  std::optional<std::uint64_t> size;
  bool provide_copy = false;
};

/// A declaration resolved to an absolute guest-physical range.
struct KernelObject {
  std::string id;
  ObjectKind kind;
  std::uint64_t address;
  std::uint64_t size;
  bool provide_copy;
};

struct RegistrationRecord {
  std::string id;
  std::uint64_t address;
  std::uint64_t size;
  std::optional<Bytes> golden_copy;
};

/// What crosses the hypercall: the object list, plus full golden copies for
/// objects that opted in to repair.
struct RegistrationPayload {
  std::uint64_t boot_epoch = 0;
  std::vector<RegistrationRecord> records;
};

/// Resolves declarations to absolute addresses. Pure function of its inputs;
/// declaration order is preserved.
inline std::vector<KernelObject> enumerate_invariants(std::span<const ObjectDeclaration> declarations,
                                                      const SymbolMap& symbols,
                                                      const std::map<std::string, HeapAllocation>& heap,
                                                      std::uint64_t memory_size) {
  std::vector<KernelObject> objects;
  objects.reserve(declarations.size());
  for (const ObjectDeclaration& decl : declarations) {
    std::uint64_t address = 0;
    std::uint64_t size = decl.size.value_or(0);
    switch (decl.kind) {
      case ObjectKind::StaticFixed:
        address = decl.address;
        break;
      case ObjectKind::StaticRelocated: {
        auto it = symbols.offsets.find(decl.symbol);
        if (it == symbols.offsets.end()) {
          raise(Errc::UnresolvedSymbol, "\"" + decl.symbol + "\" for object \"" + decl.id + "\"");
        }
        address = symbols.base + it->second + decl.delta;
        break;
      }
      case ObjectKind::DynamicHeap: {
        auto it = heap.find(decl.heap_tag);
        if (it == heap.end()) {
          raise(Errc::UnknownHeapTag, "\"" + decl.heap_tag + "\" for object \"" + decl.id + "\"");
        }
        address = it->second.address;
        if (!decl.size.has_value()) size = it->second.size;
        if (size > it->second.size) {
          raise(Errc::OutOfBounds, "object \"" + decl.id + "\" exceeds its heap allocation");
        }
        break;
      }
    }
    if (size == 0) raise(Errc::ValidationError, "object \"" + decl.id + "\" must have size >= 1");
    if (address > memory_size || size > memory_size - address) {
      raise(Errc::OutOfBounds, "object \"" + decl.id + "\" outside guest memory");
    }
    objects.push_back(KernelObject{decl.id, decl.kind, address, size, decl.provide_copy});
  }
  return objects;
}

/// Boot-time root of trust. Lives in the guest only long enough to enumerate
/// and register the invariant objects, then is forcibly unloaded and drops out
/// of the attack surface. All registrations before unload carry the same boot
/// epoch.
class TrustedModule {
 public:
  explicit TrustedModule(std::uint64_t boot_epoch) : boot_epoch_(boot_epoch) {}

  bool loaded() const { return loaded_; }
  std::uint64_t boot_epoch() const { return boot_epoch_; }

  RegistrationPayload hypercall_register(std::span<const KernelObject> objects, const GuestMemory& mem) const {
    if (!loaded_) raise(Errc::ModuleUnloaded, "hypercall after unload");
    RegistrationPayload payload;
    payload.boot_epoch = boot_epoch_;
    payload.records.reserve(objects.size());
    for (const KernelObject& obj : objects) {
      RegistrationRecord rec{obj.id, obj.address, obj.size, std::nullopt};
      if (obj.provide_copy) rec.golden_copy = mem.read_bytes(obj.address, obj.size);
      payload.records.push_back(std::move(rec));
    }
    return payload;
  }

  void unload() {
    if (!loaded_) raise(Errc::AlreadyUnloaded, "module already unloaded");
    loaded_ = false;
  }

 private:
  std::uint64_t boot_epoch_;
  bool loaded_ = true;
};

}  // namespace invmon
