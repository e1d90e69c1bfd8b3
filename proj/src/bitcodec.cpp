#include "wsteg/bitcodec.hpp"

#include "wsteg/error.hpp"

namespace wsteg {

BitString::BitString(std::uint64_t value, unsigned width) : value_(value & low_mask(width)), width_(width) {
  if (width > kMaxWidth) fail(ErrorCode::BadWidth, "bit string wider than 64 bits");
}

BitString BitString::parse(std::string_view text) {
  if (text.size() > kMaxWidth) fail(ErrorCode::BadWidth, "bit string wider than 64 bits");
  std::uint64_t v = 0;
  for (char c : text) {
    if (c != '0' && c != '1') fail(ErrorCode::InvalidArgument, "bit string may only contain 0 and 1");
    v = (v << 1) | static_cast<std::uint64_t>(c == '1');
  }
  return BitString(v, static_cast<unsigned>(text.size()));
}

bool BitString::bit(unsigned position) const {
  if (position < 1 || position > width_) fail(ErrorCode::BadWidth, "bit position out of range");
  return (value_ >> (width_ - position)) & 1u;
}

std::string BitString::str() const {
  std::string s;
  s.reserve(width_);
  for (unsigned p = 1; p <= width_; ++p) s.push_back(bit(p) ? '1' : '0');
  return s;
}

BitString float_to_bits(float value) { return BitString(f32_bits(value), 32); }
BitString float_to_bits(Half value) { return BitString(value.bits, 16); }
BitString float_to_bits(BFloat16 value) { return BitString(value.bits, 16); }

namespace {

void expect_width(const BitString& bits, unsigned width) {
  if (bits.width() != width)
    fail(ErrorCode::WidthMismatch,
         "expected " + std::to_string(width) + " bits, got " + std::to_string(bits.width()));
}

}  // namespace

float bits_to_f32(const BitString& bits) {
  expect_width(bits, 32);
  return f32_from_bits(static_cast<std::uint32_t>(bits.value()));
}

Half bits_to_f16(const BitString& bits) {
  expect_width(bits, 16);
  return Half{static_cast<std::uint16_t>(bits.value())};
}

BFloat16 bits_to_bf16(const BitString& bits) {
  expect_width(bits, 16);
  return BFloat16{static_cast<std::uint16_t>(bits.value())};
}

BitString int_to_bits(int code, IntCode kind) {
  if (kind == IntCode::S8) {
    if (code < -128 || code > 127) fail(ErrorCode::ValueNotRepresentable, "code outside int8 range");
    return BitString(static_cast<std::uint8_t>(static_cast<std::int8_t>(code)), 8);
  }
  if (code < 0 || code > 15) fail(ErrorCode::ValueNotRepresentable, "code outside nibble range");
  return BitString(static_cast<std::uint64_t>(code), 4);
}

int bits_to_int(const BitString& bits, IntCode kind) {
  expect_width(bits, int_code_width(kind));
  if (kind == IntCode::S8) return static_cast<std::int8_t>(static_cast<std::uint8_t>(bits.value()));
  return static_cast<int>(bits.value());
}

BitString replace_lsb(const BitString& bits, const BitString& segment) {
  if (segment.width() > bits.width())
    fail(ErrorCode::SegmentTooWide, "segment wider than the target bit string");
  return BitString(replace_low_bits(bits.value(), segment.width(), segment.value()), bits.width());
}

BitString extract_lsb(const BitString& bits, unsigned n) {
  if (n == 0 || n > bits.width()) fail(ErrorCode::BadWidth, "extract width must be in 1..width");
  return BitString(extract_low_bits(bits.value(), n), n);
}

}  // namespace wsteg
