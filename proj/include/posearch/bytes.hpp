#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace posearch {

using Bytes = std::vector<uint8_t>;

// Thrown on malformed or out-of-bounds wire data.
struct EncodingError : std::runtime_error {
  explicit EncodingError(const std::string& what) : std::runtime_error(what) {}
};

// Big-endian byte writer used by the canonical encoding.
class ByteWriter {
public:
  void u8(uint8_t v) { buf_.push_back(v); }

  void u16(uint16_t v) {
    buf_.push_back(uint8_t(v >> 8));
    buf_.push_back(uint8_t(v));
  }

  void u32(uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) buf_.push_back(uint8_t(v >> s));
  }

  void u64(uint64_t v) {
    for (int s = 56; s >= 0; s -= 8) buf_.push_back(uint8_t(v >> s));
  }

  void raw(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

  // Field rule: 32-bit big-endian length prefix, then the payload bytes.
  void field(std::span<const uint8_t> payload) {
    if (payload.size() > 0xFFFFFFFFull) throw EncodingError("field exceeds length bound");
    u32(uint32_t(payload.size()));
    raw(payload);
  }

  void field_u16(uint16_t v) {
    u32(2);
    u16(v);
  }

  void field_u32(uint32_t v) {
    u32(4);
    u32(v);
  }

  void field_u64(uint64_t v) {
    u32(8);
    u64(v);
  }

  void field_u8(uint8_t v) {
    u32(1);
    u8(v);
  }

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

private:
  Bytes buf_;
};

// Matching reader; every accessor throws EncodingError on truncation.
class ByteReader {
public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(data_[pos_]) << 8 | data_[pos_ + 1];
    pos_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | data_[pos_ + i];
    pos_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = v << 8 | data_[pos_ + i];
    pos_ += 8;
    return v;
  }

  Bytes raw(size_t n) {
    need(n);
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }

  Bytes field() {
    uint32_t n = u32();
    return raw(n);
  }

  uint16_t field_u16() {
    if (u32() != 2) throw EncodingError("expected 2-byte field");
    return u16();
  }

  uint32_t field_u32() {
    if (u32() != 4) throw EncodingError("expected 4-byte field");
    return u32();
  }

  uint64_t field_u64() {
    if (u32() != 8) throw EncodingError("expected 8-byte field");
    return u64();
  }

  uint8_t field_u8() {
    if (u32() != 1) throw EncodingError("expected 1-byte field");
    return u8();
  }

  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }
  size_t position() const { return pos_; }

private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n) throw EncodingError("truncated input");
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

inline std::string to_hex(std::span<const uint8_t> b) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(b.size() * 2);
  for (uint8_t c : b) {
    s.push_back(digits[c >> 4]);
    s.push_back(digits[c & 0xF]);
  }
  return s;
}

inline Bytes from_hex(const std::string& s) {
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (s.size() % 2) throw EncodingError("odd hex length");
  Bytes out;
  out.reserve(s.size() / 2);
  for (size_t i = 0; i < s.size(); i += 2) {
    int hi = nib(s[i]), lo = nib(s[i + 1]);
    if (hi < 0 || lo < 0) throw EncodingError("bad hex digit");
    out.push_back(uint8_t(hi << 4 | lo));
  }
  return out;
}

}  // namespace posearch
