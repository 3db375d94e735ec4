#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "posearch/bytes.hpp"

namespace posearch {

// 32-byte digest; equality is byte equality.
struct Hash256 {
  std::array<uint8_t, 32> bytes{};

  static Hash256 zero() { return Hash256{}; }

  static Hash256 from(const std::array<uint8_t, 32>& b) { return Hash256{b}; }

  static Hash256 from_hex(const std::string& hex) {
    Bytes raw = posearch::from_hex(hex);
    if (raw.size() != 32) throw EncodingError("hash literal must be 32 bytes");
    Hash256 h;
    std::copy(raw.begin(), raw.end(), h.bytes.begin());
    return h;
  }

  std::string hex() const { return to_hex(bytes); }

  bool is_zero() const {
    for (uint8_t b : bytes)
      if (b) return false;
    return true;
  }

  // Big-endian word c covers bytes 8c..8c+7.
  uint64_t word(int c) const {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = v << 8 | bytes[c * 8 + i];
    return v;
  }

  auto operator<=>(const Hash256&) const = default;
};

// Number of consecutive zero bits from the most significant bit of byte 0.
inline int leading_zero_bits(const Hash256& h) {
  int n = 0;
  for (uint8_t b : h.bytes) {
    if (b == 0) {
      n += 8;
      continue;
    }
    for (int bit = 7; bit >= 0; --bit) {
      if (b >> bit & 1) return n;
      ++n;
    }
  }
  return n;
}

// Opaque 8-byte node identity. The simulator trusts sender fields; there is
// no signature layer.
struct NodeId {
  std::array<uint8_t, 8> id{};

  static NodeId from_u64(uint64_t v) {
    NodeId n;
    for (int i = 0; i < 8; ++i) n.id[i] = uint8_t(v >> (56 - 8 * i));
    return n;
  }

  uint64_t as_u64() const {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = v << 8 | id[i];
    return v;
  }

  std::string hex() const { return to_hex(id); }

  auto operator<=>(const NodeId&) const = default;
};

// 64-bit unsigned coin count with checked arithmetic.
struct Amount {
  uint64_t coins = 0;

  static std::optional<Amount> add(Amount a, Amount b) {
    uint64_t s = a.coins + b.coins;
    if (s < a.coins) return std::nullopt;
    return Amount{s};
  }

  static std::optional<Amount> sub(Amount a, Amount b) {
    if (a.coins < b.coins) return std::nullopt;
    return Amount{a.coins - b.coins};
  }

  auto operator<=>(const Amount&) const = default;
};

// Reserved maximal evaluation value: crashed or out-of-budget evaluator runs
// count as this, and it orders worse than every real result.
inline constexpr uint64_t kWorstEval = ~0ull;

}  // namespace posearch

template <>
struct std::hash<posearch::Hash256> {
  size_t operator()(const posearch::Hash256& h) const noexcept {
    size_t v;
    std::memcpy(&v, h.bytes.data(), sizeof(v));
    return v;
  }
};

template <>
struct std::hash<posearch::NodeId> {
  size_t operator()(const posearch::NodeId& n) const noexcept {
    return std::hash<uint64_t>{}(n.as_u64());
  }
};
