#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string_view>

namespace wsteg {

enum class DType { F32, F16, BF16, Q8_0, Q4_0 };

inline constexpr std::uint64_t kQuantBlockSize = 32;
inline constexpr std::size_t kQ8_0BlockBytes = 34;
inline constexpr std::size_t kQ4_0BlockBytes = 18;

std::string_view dtype_name(DType dtype);
std::optional<DType> dtype_from_name(std::string_view name);

constexpr bool is_float(DType d) { return d == DType::F32 || d == DType::F16 || d == DType::BF16; }
constexpr bool is_quantized(DType d) { return d == DType::Q8_0 || d == DType::Q4_0; }

// Width in bits of one stored element: the float pattern, or the integer code.
constexpr unsigned element_bit_width(DType d) {
  switch (d) {
    case DType::F32: return 32;
    case DType::F16: return 16;
    case DType::BF16: return 16;
    case DType::Q8_0: return 8;
    case DType::Q4_0: return 4;
  }
  return 0;
}

// Byte length of `count` elements; quantized dtypes round up to whole blocks.
std::uint64_t storage_bytes(DType dtype, std::uint64_t count);

// IEEE-754 binary16, stored as its bit pattern.
struct Half {
  std::uint16_t bits = 0;

  static Half from_float(float value);
  float to_float() const;
  friend bool operator==(Half, Half) = default;
};

// bfloat16, stored as its bit pattern.
struct BFloat16 {
  std::uint16_t bits = 0;

  static BFloat16 from_float(float value);
  float to_float() const;
  friend bool operator==(BFloat16, BFloat16) = default;
};

std::uint16_t fp32_to_fp16_bits(float value);
float fp16_bits_to_fp32(std::uint16_t bits);
std::uint16_t fp32_to_bf16_bits(float value);
float bf16_bits_to_fp32(std::uint16_t bits);

inline std::uint32_t f32_bits(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  return u;
}

inline float f32_from_bits(std::uint32_t u) {
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

// Little-endian element access on raw tensor bytes. Float dtypes only for
// the pattern/value accessors; code accessors cover the quantized dtypes.
std::uint32_t load_pattern(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index);
void store_pattern(std::span<std::uint8_t> data, DType dtype, std::uint64_t index, std::uint32_t pattern);
float load_value(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index);
void store_value(std::span<std::uint8_t> data, DType dtype, std::uint64_t index, float value);

int load_code(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index);
void store_code(std::span<std::uint8_t> data, DType dtype, std::uint64_t index, int code);
std::uint16_t load_block_scale(std::span<const std::uint8_t> data, DType dtype, std::uint64_t block);

}  // namespace wsteg
