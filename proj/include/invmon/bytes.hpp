#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invmon/errors.hpp"

namespace invmon {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

inline std::string to_hex(ByteView data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

inline std::string to_hex(const Digest& d) { return to_hex(ByteView(d.data(), d.size())); }

inline int hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline Bytes from_hex(const std::string& text) {
  if (text.size() % 2 != 0) raise(Errc::ParseError, "odd-length hex string \"" + text + "\"");
  Bytes out;
  out.reserve(text.size() / 2);
  for (std::size_t i = 0; i < text.size(); i += 2) {
    int hi = hex_nibble(text[i]);
    int lo = hex_nibble(text[i + 1]);
    if (hi < 0 || lo < 0) raise(Errc::ParseError, "bad hex digit in \"" + text + "\"");
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return out;
}

inline Digest digest_from_hex(const std::string& text) {
  Bytes raw = from_hex(text);
  if (raw.size() != 32) raise(Errc::ParseError, "digest hex must be 64 characters");
  Digest d{};
  std::copy(raw.begin(), raw.end(), d.begin());
  return d;
}

}  // namespace invmon
