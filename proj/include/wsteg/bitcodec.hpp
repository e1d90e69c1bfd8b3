#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "wsteg/dtype.hpp"

namespace wsteg {

// A fixed-width bit string. Position 1 is the most significant bit and
// position width() the least significant, so the bottom n bits are
// positions width()-n+1 .. width().
class BitString {
 public:
  static constexpr unsigned kMaxWidth = 64;

  BitString() = default;
  // Keeps the low `width` bits of `value`.
  BitString(std::uint64_t value, unsigned width);

  // Parses "1011"-style text, first character = position 1.
  static BitString parse(std::string_view text);

  unsigned width() const { return width_; }
  std::uint64_t value() const { return value_; }
  bool bit(unsigned position) const;
  std::string str() const;

  friend bool operator==(const BitString&, const BitString&) = default;

 private:
  std::uint64_t value_ = 0;
  unsigned width_ = 0;
};

enum class IntCode { S8, U4 };

constexpr unsigned int_code_width(IntCode c) { return c == IntCode::S8 ? 8 : 4; }

BitString float_to_bits(float value);
BitString float_to_bits(Half value);
BitString float_to_bits(BFloat16 value);
float bits_to_f32(const BitString& bits);
Half bits_to_f16(const BitString& bits);
BFloat16 bits_to_bf16(const BitString& bits);

// Two's complement for S8, unsigned nibble for U4.
BitString int_to_bits(int code, IntCode kind);
int bits_to_int(const BitString& bits, IntCode kind);

BitString replace_lsb(const BitString& bits, const BitString& segment);
BitString extract_lsb(const BitString& bits, unsigned n);

constexpr std::uint64_t low_mask(unsigned n) { return n >= 64 ? ~0ull : ((1ull << n) - 1); }

// Word-level forms used on hot paths: the n-bit field starting `offset`
// bits above the least significant bit.
constexpr std::uint64_t replace_low_bits(std::uint64_t word, unsigned n, std::uint64_t segment,
                                         unsigned offset = 0) {
  const std::uint64_t mask = low_mask(n) << offset;
  return (word & ~mask) | ((segment << offset) & mask);
}

constexpr std::uint64_t extract_low_bits(std::uint64_t word, unsigned n, unsigned offset = 0) {
  return (word >> offset) & low_mask(n);
}

}  // namespace wsteg
