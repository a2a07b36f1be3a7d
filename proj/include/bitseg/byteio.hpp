#pragma once

// Little-endian byte encoding helpers used by the model file format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bitseg/error.hpp"

namespace bitseg::io {

class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }

  void put_f32(float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }

  void put_bytes(std::string_view s) { buf_.append(s); }

  // u64 count followed by the floats.
  void put_f32_array(std::span<const float> v) {
    put_u64(v.size());
    for (float f : v) put_f32(f);
  }

  const std::string& bytes() const noexcept { return buf_; }
  std::size_t size() const noexcept { return buf_.size(); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t get_u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint64_t get_u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float get_f32() {
    need(4, "f32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return std::bit_cast<float>(v);
  }

  std::string_view get_bytes(std::size_t n) {
    need(n, "byte block");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::vector<float> get_f32_array(std::size_t expected) {
    const std::size_t at = pos_;
    const std::uint64_t n = get_u64();
    if (n != expected)
      throw FormatError("float array length " + std::to_string(n) + ", expected " +
                            std::to_string(expected),
                        at);
    std::vector<float> v(n);
    for (auto& f : v) f = get_f32();
    return v;
  }

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      throw FormatError(std::string("truncated input reading ") + what + ": need " +
                            std::to_string(n) + " bytes, have " +
                            std::to_string(data_.size() - pos_),
                        pos_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace bitseg::io
