#include "wsteg/dtype.hpp"

#include <cmath>

#include "wsteg/error.hpp"

namespace wsteg {

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    case DType::Q8_0: return "Q8_0";
    case DType::Q4_0: return "Q4_0";
  }
  return "?";
}

std::optional<DType> dtype_from_name(std::string_view name) {
  if (name == "F32") return DType::F32;
  if (name == "F16") return DType::F16;
  if (name == "BF16") return DType::BF16;
  if (name == "Q8_0") return DType::Q8_0;
  if (name == "Q4_0") return DType::Q4_0;
  return std::nullopt;
}

std::uint64_t storage_bytes(DType dtype, std::uint64_t count) {
  const std::uint64_t blocks = (count + kQuantBlockSize - 1) / kQuantBlockSize;
  switch (dtype) {
    case DType::F32: return count * 4;
    case DType::F16:
    case DType::BF16: return count * 2;
    case DType::Q8_0: return blocks * kQ8_0BlockBytes;
    case DType::Q4_0: return blocks * kQ4_0BlockBytes;
  }
  return 0;
}

std::uint16_t fp32_to_fp16_bits(float value) {
  const std::uint32_t x = f32_bits(value);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::uint32_t exp = (x >> 23) & 0xFFu;
  const std::uint32_t mant = x & 0x7FFFFFu;

  if (exp == 0xFF) {
    if (mant == 0) return static_cast<std::uint16_t>(sign | 0x7C00u);
    std::uint32_t payload = mant >> 13;
    if (payload == 0) payload = 0x200u;
    return static_cast<std::uint16_t>(sign | 0x7C00u | payload);
  }

  const int he = static_cast<int>(exp) - 127 + 15;
  if (he >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);

  if (he <= 0) {
    const int shift = 14 - he;
    if (shift >= 25) return static_cast<std::uint16_t>(sign);
    const std::uint32_t full = mant | 0x800000u;
    std::uint32_t r = full >> shift;
    const std::uint32_t rem = full & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (r & 1u))) ++r;
    return static_cast<std::uint16_t>(sign | r);
  }

  std::uint32_t r = (static_cast<std::uint32_t>(he) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (r & 1u))) ++r;
  return static_cast<std::uint16_t>(sign | r);
}

float fp16_bits_to_fp32(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exp = (bits >> 10) & 0x1Fu;
  const std::uint32_t mant = bits & 0x3FFu;
  if (exp == 0) {
    const float mag = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -mag : mag;
  }
  if (exp == 31) return f32_from_bits(sign | 0x7F800000u | (mant << 13));
  return f32_from_bits(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

std::uint16_t fp32_to_bf16_bits(float value) {
  const std::uint32_t x = f32_bits(value);
  if ((x & 0x7FFFFFFFu) > 0x7F800000u) return static_cast<std::uint16_t>((x >> 16) | 0x0040u);
  return static_cast<std::uint16_t>((x + 0x7FFFu + ((x >> 16) & 1u)) >> 16);
}

float bf16_bits_to_fp32(std::uint16_t bits) {
  return f32_from_bits(static_cast<std::uint32_t>(bits) << 16);
}

Half Half::from_float(float value) { return Half{fp32_to_fp16_bits(value)}; }
float Half::to_float() const { return fp16_bits_to_fp32(bits); }
BFloat16 BFloat16::from_float(float value) { return BFloat16{fp32_to_bf16_bits(value)}; }
float BFloat16::to_float() const { return bf16_bits_to_fp32(bits); }

namespace {

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void write_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

std::size_t code_byte(DType dtype, std::uint64_t index, bool& high_nibble) {
  const std::uint64_t block = index / kQuantBlockSize;
  const std::uint64_t j = index % kQuantBlockSize;
  if (dtype == DType::Q8_0) {
    high_nibble = false;
    return block * kQ8_0BlockBytes + 2 + j;
  }
  high_nibble = j >= kQuantBlockSize / 2;
  return block * kQ4_0BlockBytes + 2 + (j % (kQuantBlockSize / 2));
}

}  // namespace

std::uint32_t load_pattern(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index) {
  switch (dtype) {
    case DType::F32: return read_u32(data.data() + index * 4);
    case DType::F16:
    case DType::BF16: return read_u16(data.data() + index * 2);
    default: fail(ErrorCode::UnsupportedDtype, "float pattern access on quantized dtype");
  }
}

void store_pattern(std::span<std::uint8_t> data, DType dtype, std::uint64_t index,
                   std::uint32_t pattern) {
  switch (dtype) {
    case DType::F32: write_u32(data.data() + index * 4, pattern); return;
    case DType::F16:
    case DType::BF16: write_u16(data.data() + index * 2, static_cast<std::uint16_t>(pattern)); return;
    default: fail(ErrorCode::WriteToQuantizedDtype, "float pattern write on quantized dtype");
  }
}

float load_value(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index) {
  switch (dtype) {
    case DType::F32: return f32_from_bits(read_u32(data.data() + index * 4));
    case DType::F16: return fp16_bits_to_fp32(read_u16(data.data() + index * 2));
    case DType::BF16: return bf16_bits_to_fp32(read_u16(data.data() + index * 2));
    case DType::Q8_0: {
      const float d = fp16_bits_to_fp32(load_block_scale(data, dtype, index / kQuantBlockSize));
      return d * static_cast<float>(load_code(data, dtype, index));
    }
    case DType::Q4_0: {
      const float d = fp16_bits_to_fp32(load_block_scale(data, dtype, index / kQuantBlockSize));
      return d * static_cast<float>(load_code(data, dtype, index) - 8);
    }
  }
  return 0.0f;
}

void store_value(std::span<std::uint8_t> data, DType dtype, std::uint64_t index, float value) {
  switch (dtype) {
    case DType::F32: write_u32(data.data() + index * 4, f32_bits(value)); return;
    case DType::F16: write_u16(data.data() + index * 2, fp32_to_fp16_bits(value)); return;
    case DType::BF16: write_u16(data.data() + index * 2, fp32_to_bf16_bits(value)); return;
    default:
      fail(ErrorCode::WriteToQuantizedDtype,
           "cannot write a real value into a quantized tensor; address its codes instead");
  }
}

int load_code(std::span<const std::uint8_t> data, DType dtype, std::uint64_t index) {
  if (!is_quantized(dtype)) fail(ErrorCode::UnsupportedDtype, "code access on float dtype");
  bool high = false;
  const std::uint8_t byte = data[code_byte(dtype, index, high)];
  if (dtype == DType::Q8_0) return static_cast<std::int8_t>(byte);
  return high ? (byte >> 4) : (byte & 0x0F);
}

void store_code(std::span<std::uint8_t> data, DType dtype, std::uint64_t index, int code) {
  if (!is_quantized(dtype)) fail(ErrorCode::UnsupportedDtype, "code access on float dtype");
  bool high = false;
  std::uint8_t& byte = data[code_byte(dtype, index, high)];
  if (dtype == DType::Q8_0) {
    if (code < -128 || code > 127) fail(ErrorCode::CodeOutOfRange, "Q8_0 code out of range");
    byte = static_cast<std::uint8_t>(static_cast<std::int8_t>(code));
    return;
  }
  if (code < 0 || code > 15) fail(ErrorCode::CodeOutOfRange, "Q4_0 code out of range");
  if (high)
    byte = static_cast<std::uint8_t>((byte & 0x0F) | (code << 4));
  else
    byte = static_cast<std::uint8_t>((byte & 0xF0) | code);
}

std::uint16_t load_block_scale(std::span<const std::uint8_t> data, DType dtype, std::uint64_t block) {
  const std::size_t stride = dtype == DType::Q8_0 ? kQ8_0BlockBytes : kQ4_0BlockBytes;
  return read_u16(data.data() + block * stride);
}

}  // namespace wsteg
