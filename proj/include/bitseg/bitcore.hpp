#pragma once

// Bit-packed ±1 tensors and the XNOR/popcount dot products.
//
// Encoding: stored bit b represents the value 2b - 1, so 1 -> +1 and 0 -> -1.
// Rows are packed LSB-first into 64-bit words and padded to a word boundary;
// padding bits are always zero.
//
// For a, b in {-1,+1}^n:  sum_i a_i b_i = n - 2 * popcount(a XOR b).

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bitseg/byteio.hpp"
#include "bitseg/error.hpp"

namespace bitseg {

inline constexpr std::size_t kWordBits = 64;

constexpr std::size_t words_for(std::size_t bits) noexcept {
  return (bits + kWordBits - 1) / kWordBits;
}

// Mask keeping the valid bits of the final word of a row of `row_len` bits.
constexpr std::uint64_t tail_mask_for(std::size_t row_len) noexcept {
  const std::size_t r = row_len % kWordBits;
  return r == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << r) - 1);
}

// Read-only view of one packed row.
struct BitRow {
  std::span<const std::uint64_t> words;
  std::size_t len = 0;

  bool bit(std::size_t i) const noexcept { return (words[i / kWordBits] >> (i % kWordBits)) & 1U; }
};

class BitTensor {
 public:
  BitTensor() = default;

  // `rows` rows of `row_len` bits each, all bits zero (all values -1).
  BitTensor(std::vector<std::size_t> shape, std::size_t rows, std::size_t row_len)
      : shape_(std::move(shape)),
        rows_(rows),
        row_len_(row_len),
        words_per_row_(words_for(row_len)),
        words_(rows * words_for(row_len), 0) {}

  static BitTensor rows_of(std::size_t rows, std::size_t row_len) {
    return BitTensor({rows, row_len}, rows, row_len);
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t row_len() const noexcept { return row_len_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }
  std::uint64_t tail_mask() const noexcept { return tail_mask_for(row_len_); }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words() noexcept { return words_; }

  BitRow row(std::size_t r) const noexcept {
    return {std::span<const std::uint64_t>(words_).subspan(r * words_per_row_, words_per_row_),
            row_len_};
  }
  std::span<std::uint64_t> row_words(std::size_t r) noexcept {
    return std::span<std::uint64_t>(words_).subspan(r * words_per_row_, words_per_row_);
  }

  bool bit(std::size_t r, std::size_t i) const noexcept { return row(r).bit(i); }
  void set(std::size_t r, std::size_t i, bool v) noexcept {
    auto& w = words_[r * words_per_row_ + i / kWordBits];
    const std::uint64_t m = std::uint64_t{1} << (i % kWordBits);
    w = v ? (w | m) : (w & ~m);
  }

  // True when every row's padding bits are zero.
  bool tails_clean() const noexcept {
    if (words_per_row_ == 0) return true;
    const std::uint64_t keep = tail_mask();
    for (std::size_t r = 0; r < rows_; ++r)
      if (words_[r * words_per_row_ + words_per_row_ - 1] & ~keep) return false;
    return true;
  }

  bool operator==(const BitTensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::size_t rows_ = 0;
  std::size_t row_len_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
};

// Validity mask aligned with a BitRow; zero bits mark positions that must
// contribute exactly 0 (zero padding).
class ValidMask {
 public:
  ValidMask() = default;

  ValidMask(std::vector<std::uint64_t> words, std::size_t len)
      : words_(std::move(words)), len_(len) {
    if (words_.size() != words_for(len_)) throw DimensionError("ValidMask: word count mismatch");
    if (!words_.empty()) words_.back() &= tail_mask_for(len_);
    for (auto w : words_) ones_ += static_cast<std::size_t>(std::popcount(w));
  }

  static ValidMask all(std::size_t len) {
    return ValidMask(std::vector<std::uint64_t>(words_for(len), ~std::uint64_t{0}), len);
  }

  static ValidMask from_bools(std::span<const bool> valid) {
    std::vector<std::uint64_t> w(words_for(valid.size()), 0);
    for (std::size_t i = 0; i < valid.size(); ++i)
      if (valid[i]) w[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
    return ValidMask(std::move(w), valid.size());
  }

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::size_t size() const noexcept { return len_; }
  std::size_t ones_count() const noexcept { return ones_; }
  bool full() const noexcept { return ones_ == len_; }

 private:
  std::vector<std::uint64_t> words_;
  std::size_t len_ = 0;
  std::size_t ones_ = 0;
};

// Packs a row of exact ±1 values.
inline BitTensor pack_signs(std::span<const float> v) {
  BitTensor out({v.size()}, 1, v.size());
  auto words = out.row_words(0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == 1.0f) {
      words[i / kWordBits] |= std::uint64_t{1} << (i % kWordBits);
    } else if (v[i] != -1.0f) {
      throw PreconditionError("pack_signs: element " + std::to_string(i) + " is " +
                              std::to_string(v[i]) + ", expected +1 or -1");
    }
  }
  return out;
}

inline std::vector<float> unpack_signs(const BitRow& row) {
  std::vector<float> out(row.len);
  for (std::size_t i = 0; i < row.len; ++i) out[i] = row.bit(i) ? 1.0f : -1.0f;
  return out;
}

inline std::int64_t xnor_dot(const BitRow& a, const BitRow& b) {
  if (a.len != b.len)
    throw DimensionError("xnor_dot: row lengths " + std::to_string(a.len) + " and " +
                         std::to_string(b.len));
  std::int64_t diff = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i) diff += std::popcount(a.words[i] ^ b.words[i]);
  return static_cast<std::int64_t>(a.len) - 2 * diff;
}

inline std::int64_t masked_xnor_dot(const BitRow& a, const BitRow& b, const ValidMask& m) {
  if (a.len != b.len || a.len != m.size())
    throw DimensionError("masked_xnor_dot: lengths " + std::to_string(a.len) + ", " +
                         std::to_string(b.len) + ", mask " + std::to_string(m.size()));
  const auto mw = m.words();
  std::int64_t diff = 0;
  for (std::size_t i = 0; i < a.words.size(); ++i)
    diff += std::popcount((a.words[i] ^ b.words[i]) & mw[i]);
  return static_cast<std::int64_t>(m.ones_count()) - 2 * diff;
}

// Serialized form: row_len (u64 LE), word count (u64 LE), words (u64 LE each).
inline void write_bits(io::ByteWriter& w, const BitTensor& t) {
  w.put_u64(t.row_len());
  w.put_u64(t.words().size());
  for (auto word : t.words()) w.put_u64(word);
}

inline std::size_t serialized_bits_size(std::size_t rows, std::size_t row_len) {
  return 16 + 8 * rows * words_for(row_len);
}

inline BitTensor read_bits(io::ByteReader& r, std::size_t rows, std::size_t row_len) {
  const std::size_t at = r.offset();
  const std::uint64_t len = r.get_u64();
  const std::uint64_t count = r.get_u64();
  if (len != row_len || count != rows * words_for(row_len))
    throw FormatError("bit tensor header (row_len " + std::to_string(len) + ", words " +
                          std::to_string(count) + ") does not match expected (" +
                          std::to_string(row_len) + ", " +
                          std::to_string(rows * words_for(row_len)) + ")",
                      at);
  BitTensor t = BitTensor::rows_of(rows, row_len);
  for (auto& word : t.words()) word = r.get_u64();
  if (!t.tails_clean()) throw FormatError("bit tensor has nonzero padding bits", at);
  return t;
}

}  // namespace bitseg
