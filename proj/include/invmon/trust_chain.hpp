#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "invmon/bytes.hpp"
#include "invmon/errors.hpp"
#include "invmon/isolation.hpp"
#include "invmon/rng.hpp"
#include "invmon/sha256.hpp"

namespace invmon {

/// PCR-style hash chain. The register value is the left fold of the extend
/// rule over the measurement history, starting from all zeroes; history keeps
/// the per-step measurement digests so the fold can be replayed.
struct MeasurementRegister {
  Digest value{};
  std::vector<Digest> history;
};

inline MeasurementRegister extend(const MeasurementRegister& reg, ByteView measurement) {
  MeasurementRegister out = reg;
  Digest m = sha256(measurement);
  out.value = Sha256().update(ByteView(reg.value.data(), reg.value.size())).update(ByteView(m.data(), m.size())).finish();
  out.history.push_back(m);
  return out;
}

/// Measurement-gated data at rest. `opaque` is nonce || ciphertext || tag;
/// the tag binds the ciphertext to the required measurement, so neither can
/// be altered without tripping IntegrityFailure.
struct SealedBlob {
  Bytes opaque;
  Digest required_measurement{};
};

/// Attestation statement: the register value and the digest of the produced
/// output, bound to a verifier nonce under the device key.
struct Quote {
  Digest register_value{};
  Bytes nonce;
  Digest output_digest{};
  Digest tag{};
};

namespace chain_detail {

inline Bytes stream_xor(const Digest& key, ByteView nonce, ByteView data) {
  Bytes out(data.begin(), data.end());
  std::uint64_t counter = 0;
  std::size_t pos = 0;
  while (pos < out.size()) {
    std::uint8_t ctr_be[8];
    for (int i = 0; i < 8; ++i) ctr_be[i] = static_cast<std::uint8_t>(counter >> (56 - 8 * i));
    Digest block = Sha256()
                       .update(ByteView(key.data(), key.size()))
                       .update(nonce)
                       .update(ByteView(ctr_be, 8))
                       .finish();
    for (std::size_t i = 0; i < block.size() && pos < out.size(); ++i, ++pos) out[pos] ^= block[i];
    ++counter;
  }
  return out;
}

inline Digest blob_tag(const Digest& key, ByteView nonce, const Digest& required, ByteView ciphertext) {
  Bytes msg;
  msg.insert(msg.end(), nonce.begin(), nonce.end());
  msg.insert(msg.end(), required.begin(), required.end());
  msg.insert(msg.end(), ciphertext.begin(), ciphertext.end());
  return hmac_sha256(ByteView(key.data(), key.size()), ByteView(msg.data(), msg.size()));
}

inline SealedBlob seal_with_key(const Digest& key, ByteView nonce16, ByteView data, const Digest& required) {
  Bytes ciphertext = stream_xor(key, nonce16, data);
  SealedBlob blob;
  blob.required_measurement = required;
  blob.opaque.insert(blob.opaque.end(), nonce16.begin(), nonce16.end());
  blob.opaque.insert(blob.opaque.end(), ciphertext.begin(), ciphertext.end());
  Digest tag = blob_tag(key, nonce16, required, ByteView(ciphertext.data(), ciphertext.size()));
  blob.opaque.insert(blob.opaque.end(), tag.begin(), tag.end());
  return blob;
}

inline Bytes unseal_with_key(const Digest& key, const SealedBlob& blob, const MeasurementRegister& reg) {
  if (blob.opaque.size() < 48) raise(Errc::IntegrityFailure, "sealed blob truncated");
  ByteView nonce(blob.opaque.data(), 16);
  ByteView ciphertext(blob.opaque.data() + 16, blob.opaque.size() - 48);
  ByteView stored_tag(blob.opaque.data() + blob.opaque.size() - 32, 32);
  Digest expect = blob_tag(key, nonce, blob.required_measurement, ciphertext);
  if (!std::equal(expect.begin(), expect.end(), stored_tag.begin())) {
    raise(Errc::IntegrityFailure, "sealed blob failed authentication");
  }
  if (reg.value != blob.required_measurement) {
    raise(Errc::MeasurementMismatch, "current measurement does not match sealed measurement");
  }
  return stream_xor(key, nonce, ciphertext);
}

inline Digest quote_tag(const Digest& key, const Digest& reg_value, ByteView nonce, const Digest& out_digest) {
  Bytes msg;
  msg.insert(msg.end(), reg_value.begin(), reg_value.end());
  msg.insert(msg.end(), nonce.begin(), nonce.end());
  msg.insert(msg.end(), out_digest.begin(), out_digest.end());
  return hmac_sha256(ByteView(key.data(), key.size()), ByteView(msg.data(), msg.size()));
}

inline Quote quote_with_key(const Digest& key, const MeasurementRegister& reg, ByteView nonce, ByteView output) {
  Quote q;
  q.register_value = reg.value;
  q.nonce.assign(nonce.begin(), nonce.end());
  q.output_digest = sha256(output);
  q.tag = quote_tag(key, q.register_value, nonce, q.output_digest);
  return q;
}

inline bool verify_with_key(const Digest& key, const Quote& q) {
  return quote_tag(key, q.register_value, ByteView(q.nonce.data(), q.nonce.size()), q.output_digest) == q.tag;
}

inline Digest derive_key(ByteView secret, const std::string& label) {
  return hmac_sha256(secret, ByteView(reinterpret_cast<const std::uint8_t*>(label.data()), label.size()));
}

}  // namespace chain_detail

/// Flat-file store for sealed blobs. Record layout, repeated back to back:
///   u32 little-endian blob length | blob bytes | 32-byte required measurement
/// Anything that does not parse exactly is StoreCorrupt.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      std::ifstream in(path_, std::ios::binary);
      Bytes raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      records_ = parse(ByteView(raw.data(), raw.size()));
    }
  }

  static std::vector<SealedBlob> parse(ByteView raw) {
    std::vector<SealedBlob> records;
    std::size_t pos = 0;
    while (pos < raw.size()) {
      if (raw.size() - pos < 4) raise(Errc::StoreCorrupt, "truncated record header");
      std::uint32_t len = std::uint32_t(raw[pos]) | (std::uint32_t(raw[pos + 1]) << 8) |
                          (std::uint32_t(raw[pos + 2]) << 16) | (std::uint32_t(raw[pos + 3]) << 24);
      pos += 4;
      if (raw.size() - pos < std::size_t(len) + 32) raise(Errc::StoreCorrupt, "truncated record body");
      SealedBlob blob;
      blob.opaque.assign(raw.begin() + pos, raw.begin() + pos + len);
      pos += len;
      std::copy(raw.begin() + pos, raw.begin() + pos + 32, blob.required_measurement.begin());
      pos += 32;
      records.push_back(std::move(blob));
    }
    return records;
  }

  static Bytes serialize(const std::vector<SealedBlob>& records) {
    Bytes out;
    for (const SealedBlob& blob : records) {
      auto len = static_cast<std::uint32_t>(blob.opaque.size());
      out.push_back(static_cast<std::uint8_t>(len));
      out.push_back(static_cast<std::uint8_t>(len >> 8));
      out.push_back(static_cast<std::uint8_t>(len >> 16));
      out.push_back(static_cast<std::uint8_t>(len >> 24));
      out.insert(out.end(), blob.opaque.begin(), blob.opaque.end());
      out.insert(out.end(), blob.required_measurement.begin(), blob.required_measurement.end());
    }
    return out;
  }

  void append(const SealedBlob& blob) {
    records_.push_back(blob);
    save();
  }

  std::size_t count() const { return records_.size(); }
  const SealedBlob& at(std::size_t i) const { return records_.at(i); }
  const std::filesystem::path& path() const { return path_; }

 private:
  void save() const {
    Bytes raw = serialize(records_);
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  }

  std::filesystem::path path_;
  std::vector<SealedBlob> records_;
};

struct FlickerResult {
  Bytes output;
  Quote quote;
  MeasurementRegister drtm;
};

/// Software stand-in for the TPM chip plus its measured-session usage
/// patterns. Deterministic given its seed. Every operation that would touch
/// the hardware device bumps op_count, which is how the tests pin down that
/// derived micro-TPMs run without it.
class TpmDevice {
 public:
  explicit TpmDevice(std::uint64_t seed, std::uint64_t seal_limit = 256)
      : rng_(seed), seal_limit_(seal_limit) {
    Bytes key = draw(32);
    std::copy(key.begin(), key.end(), device_key_.begin());
  }

  void set_isolation_gate(std::shared_ptr<IsolationGate> gate) { gate_ = std::move(gate); }

  std::uint64_t op_count() const { return op_count_; }
  std::uint64_t seal_limit() const { return seal_limit_; }

  Bytes random_bytes(std::size_t n) {
    ++op_count_;
    return draw(n);
  }

  SealedBlob seal(ByteView data, const Digest& required) {
    ++op_count_;
    if (data.size() > seal_limit_) {
      raise(Errc::TooLarge, "sealed storage holds at most " + std::to_string(seal_limit_) + " bytes");
    }
    Bytes nonce = draw(16);
    return chain_detail::seal_with_key(device_key_, ByteView(nonce.data(), nonce.size()), data, required);
  }

  Bytes unseal(const SealedBlob& blob, const MeasurementRegister& reg) {
    ++op_count_;
    return chain_detail::unseal_with_key(device_key_, blob, reg);
  }

  Quote quote(const MeasurementRegister& reg, ByteView nonce, ByteView output) {
    ++op_count_;
    return chain_detail::quote_with_key(device_key_, reg, nonce, output);
  }

  bool verify(const Quote& q) const { return chain_detail::verify_with_key(device_key_, q); }

  bool verify(const Quote& q, ByteView claimed_output) const {
    return verify(q) && sha256(claimed_output) == q.output_digest;
  }

  using Executor = std::function<Bytes(ByteView image, ByteView input)>;

  /// Measured isolated session: fresh DRTM register extended with the module
  /// image, executor runs under the isolation gate, the working buffer is
  /// scrubbed afterwards, and the output comes back bound in a quote.
  FlickerResult flicker_session(ByteView module_image, ByteView input, const Executor& executor,
                                ByteView nonce) {
    ++op_count_;
    IsolationScope scope(gate_.get());
    MeasurementRegister drtm;
    drtm = extend(drtm, module_image);
    workspace_.assign(input.begin(), input.end());
    Bytes output;
    try {
      output = executor(module_image, ByteView(workspace_.data(), workspace_.size()));
      workspace_.insert(workspace_.end(), output.begin(), output.end());
    } catch (...) {
      scrub();
      throw;
    }
    FlickerResult result;
    result.output = output;
    result.quote = chain_detail::quote_with_key(device_key_, drtm, nonce, ByteView(output.data(), output.size()));
    result.drtm = std::move(drtm);
    scrub();
    return result;
  }

  // Post-session view of the working buffer; all zeroes once a session ends.
  ByteView session_workspace() const { return ByteView(workspace_.data(), workspace_.size()); }

 private:
  Bytes draw(std::size_t n) {
    Bytes out(n);
    for (auto& b : out) b = static_cast<std::uint8_t>(rng_.next() & 0xff);
    return out;
  }

  void scrub() { std::fill(workspace_.begin(), workspace_.end(), 0); }

  Xoshiro256ss rng_;
  std::uint64_t seal_limit_;
  Digest device_key_{};
  std::uint64_t op_count_ = 0;
  Bytes workspace_;
  std::shared_ptr<IsolationGate> gate_;
};

/// Software TPM keyed from a long-term secret that the hardware device sealed
/// to the hypervisor's measurement. After bootstrap it serves seal, unseal
/// and quote entirely on its own keys — zero device round-trips.
class MicroTpm {
 public:
  explicit MicroTpm(Bytes long_term_secret, std::uint64_t seal_limit = 256)
      : secret_(std::move(long_term_secret)),
        seal_key_(chain_detail::derive_key(ByteView(secret_.data(), secret_.size()), "utpm/seal/v1")),
        quote_key_(chain_detail::derive_key(ByteView(secret_.data(), secret_.size()), "utpm/quote/v1")),
        seal_limit_(seal_limit),
        registers_(4) {}

  const Bytes& long_term_secret() const { return secret_; }
  std::size_t register_count() const { return registers_.size(); }
  const MeasurementRegister& register_at(std::size_t i) const { return registers_.at(i); }
  void extend_register(std::size_t i, ByteView measurement) { registers_.at(i) = extend(registers_.at(i), measurement); }

  SealedBlob seal(ByteView data, const Digest& required) {
    if (data.size() > seal_limit_) {
      raise(Errc::TooLarge, "sealed storage holds at most " + std::to_string(seal_limit_) + " bytes");
    }
    Bytes nonce = next_nonce();
    return chain_detail::seal_with_key(seal_key_, ByteView(nonce.data(), nonce.size()), data, required);
  }

  Bytes unseal(const SealedBlob& blob, const MeasurementRegister& reg) {
    return chain_detail::unseal_with_key(seal_key_, blob, reg);
  }

  Quote quote(const MeasurementRegister& reg, ByteView nonce, ByteView output) {
    return chain_detail::quote_with_key(quote_key_, reg, nonce, output);
  }

  bool verify(const Quote& q) const { return chain_detail::verify_with_key(quote_key_, q); }

 private:
  Bytes next_nonce() {
    std::uint8_t ctr_be[8];
    for (int i = 0; i < 8; ++i) ctr_be[i] = static_cast<std::uint8_t>(nonce_counter_ >> (56 - 8 * i));
    ++nonce_counter_;
    Digest block = hmac_sha256(ByteView(secret_.data(), secret_.size()), ByteView(ctr_be, 8));
    return Bytes(block.begin(), block.begin() + 16);
  }

  Bytes secret_;
  Digest seal_key_;
  Digest quote_key_;
  std::uint64_t seal_limit_;
  std::uint64_t nonce_counter_ = 0;
  std::vector<MeasurementRegister> registers_;
};

/// First boot: create a fresh long-term secret, seal it to the hypervisor's
/// measurement, persist the blob. Later boots: recover the secret, which only
/// works while the SRTM still shows the same hypervisor.
inline MicroTpm utpm_bootstrap(const Digest& hypervisor_measurement, const MeasurementRegister& srtm,
                               BlobStore& store, TpmDevice& device) {
  if (store.count() == 0) {
    Bytes secret = device.random_bytes(32);
    SealedBlob blob = device.seal(ByteView(secret.data(), secret.size()), hypervisor_measurement);
    store.append(blob);
    return MicroTpm(std::move(secret), device.seal_limit());
  }
  Bytes secret = device.unseal(store.at(0), srtm);
  return MicroTpm(std::move(secret), device.seal_limit());
}

}  // namespace invmon
