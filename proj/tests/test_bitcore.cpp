#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

#include "bitseg/bitcore.hpp"
#include "bitseg/rng.hpp"

namespace bitseg {
namespace {

std::vector<float> random_signs(SplitMix64& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = (rng.next() & 1U) ? 1.0f : -1.0f;
  return v;
}

std::int64_t brute_dot(const std::vector<float>& a, const std::vector<float>& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<std::int64_t>(a[i] * b[i]);
  return s;
}

TEST(PackSigns, AllOnes) {
  const std::vector<float> v{1, 1, 1, 1};
  const auto t = pack_signs(v);
  EXPECT_EQ(t.row_len(), 4u);
  EXPECT_EQ(t.words()[0], 0b1111u);
}

TEST(PackSigns, AllMinus) {
  const std::vector<float> v{-1, -1};
  const auto t = pack_signs(v);
  EXPECT_EQ(t.row_len(), 2u);
  EXPECT_EQ(t.words()[0], 0u);
}

TEST(PackSigns, RejectsNonSign) {
  const std::vector<float> v{1, 0.5f, -1};
  EXPECT_THROW(pack_signs(v), PreconditionError);
  const std::vector<float> z{0.0f};
  EXPECT_THROW(pack_signs(z), PreconditionError);
}

TEST(UnpackSigns, LsbFirst) {
  BitTensor t = BitTensor::rows_of(1, 2);
  t.words()[0] = 0b10;
  EXPECT_EQ(unpack_signs(t.row(0)), (std::vector<float>{-1, 1}));
  BitTensor u = BitTensor::rows_of(1, 1);
  u.words()[0] = 0b1;
  EXPECT_EQ(unpack_signs(u.row(0)), (std::vector<float>{1}));
}

TEST(PackSigns, RoundTripAndCleanTails) {
  SplitMix64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_signs(rng, 200);
    const auto t = pack_signs(v);
    ASSERT_TRUE(t.tails_clean());
    ASSERT_EQ(unpack_signs(t.row(0)), v);
  }
  for (std::size_t n = 1; n <= 130; ++n) {
    const auto v = random_signs(rng, n);
    ASSERT_EQ(unpack_signs(pack_signs(v).row(0)), v) << n;
  }
}

TEST(XnorDot, Examples) {
  const std::vector<float> a{1, -1, 1, -1}, b{1, 1, -1, -1};
  EXPECT_EQ(xnor_dot(pack_signs(a).row(0), pack_signs(b).row(0)), 0);
  EXPECT_EQ(xnor_dot(pack_signs(a).row(0), pack_signs(a).row(0)), 4);
}

TEST(XnorDot, LengthMismatch) {
  const std::vector<float> a{1, -1, 1}, b{1, 1};
  EXPECT_THROW(xnor_dot(pack_signs(a).row(0), pack_signs(b).row(0)), DimensionError);
}

TEST(XnorDot, MatchesBruteForceRandom) {
  SplitMix64 rng(3);
  for (std::size_t n = 1; n <= 300; ++n)
    for (int rep = 0; rep < 5; ++rep) {
      const auto a = random_signs(rng, n), b = random_signs(rng, n);
      const auto pa = pack_signs(a), pb = pack_signs(b);
      const auto d = xnor_dot(pa.row(0), pb.row(0));
      ASSERT_EQ(d, brute_dot(a, b));
      ASSERT_EQ((d - static_cast<std::int64_t>(n)) % 2, 0);  // parity
    }
}

TEST(XnorDot, SelfAndNegation) {
  SplitMix64 rng(5);
  for (std::size_t n : {1u, 63u, 64u, 65u, 200u}) {
    auto a = random_signs(rng, n);
    auto neg = a;
    for (auto& x : neg) x = -x;
    EXPECT_EQ(xnor_dot(pack_signs(a).row(0), pack_signs(a).row(0)), static_cast<std::int64_t>(n));
    EXPECT_EQ(xnor_dot(pack_signs(a).row(0), pack_signs(neg).row(0)),
              -static_cast<std::int64_t>(n));
  }
}

TEST(MaskedXnorDot, Example) {
  const std::vector<float> a{1, -1, 1, -1}, b{1, 1, -1, -1};
  const bool m[] = {true, true, false, false};
  EXPECT_EQ(masked_xnor_dot(pack_signs(a).row(0), pack_signs(b).row(0), ValidMask::from_bools(m)),
            0);
}

TEST(MaskedXnorDot, DegenerateMasks) {
  SplitMix64 rng(9);
  for (std::size_t n = 1; n <= 150; ++n) {
    const auto a = random_signs(rng, n), b = random_signs(rng, n);
    const auto pa = pack_signs(a), pb = pack_signs(b);
    EXPECT_EQ(masked_xnor_dot(pa.row(0), pb.row(0), ValidMask::all(n)), xnor_dot(pa.row(0), pb.row(0)));
    const std::vector<std::uint64_t> zeros(words_for(n), 0);
    EXPECT_EQ(masked_xnor_dot(pa.row(0), pb.row(0), ValidMask(zeros, n)), 0);
  }
}

TEST(MaskedXnorDot, MatchesBruteForceRandom) {
  SplitMix64 rng(21);
  for (std::size_t n = 1; n <= 300; ++n) {
    const auto a = random_signs(rng, n), b = random_signs(rng, n);
    std::unique_ptr<bool[]> m(new bool[n]);
    std::int64_t expect = 0;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = rng.next() & 1U;
      if (m[i]) expect += static_cast<std::int64_t>(a[i] * b[i]);
    }
    const auto mask = ValidMask::from_bools(std::span<const bool>(m.get(), n));
    ASSERT_EQ(masked_xnor_dot(pack_signs(a).row(0), pack_signs(b).row(0), mask), expect);
  }
}

TEST(ValidMask, OnesCountMatchesPopcount) {
  const std::vector<std::uint64_t> w{0xF0F0ULL, ~0ULL};
  const ValidMask m(w, 70);  // second word truncated to 6 bits
  EXPECT_EQ(m.ones_count(), 8u + 6u);
  EXPECT_EQ(m.words()[1], 0x3FULL);
}

TEST(BitSerialization, LayoutAndRoundTrip) {
  BitTensor t = BitTensor::rows_of(2, 70);
  t.set(0, 0, true);
  t.set(1, 69, true);
  io::ByteWriter w;
  write_bits(w, t);
  ASSERT_EQ(w.size(), serialized_bits_size(2, 70));
  const auto& b = w.bytes();
  EXPECT_EQ(static_cast<unsigned char>(b[0]), 70);  // row_len LE
  EXPECT_EQ(static_cast<unsigned char>(b[8]), 4);   // word count LE
  EXPECT_EQ(static_cast<unsigned char>(b[16]), 1);  // first word, LSB
  io::ByteReader r(b);
  EXPECT_EQ(read_bits(r, 2, 70), t);
  EXPECT_TRUE(r.at_end());
}

TEST(BitSerialization, TruncatedInputReportsOffset) {
  BitTensor t = BitTensor::rows_of(1, 10);
  io::ByteWriter w;
  write_bits(w, t);
  const std::string cut = w.bytes().substr(0, w.size() - 3);
  io::ByteReader r(cut);
  try {
    read_bits(r, 1, 10);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
}

}  // namespace
}  // namespace bitseg
