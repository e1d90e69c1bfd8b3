#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "wsteg/dtype.hpp"
#include "wsteg/model_file.hpp"

namespace wsteg {

enum class Scheme { NONE, Q8_0, Q4_0, AFFINE };

std::string_view scheme_name(Scheme scheme);
std::optional<Scheme> scheme_from_name(std::string_view name);

// Affine quantizer: code = clamp(round(x / scale) + zero_point, min_code, max_code).
struct AffineQuantParams {
  double scale = 1.0;
  int zero_point = 0;
  int min_code = -128;
  int max_code = 127;

  void validate() const;
  friend bool operator==(const AffineQuantParams&, const AffineQuantParams&) = default;
};

// Ties round to even.
int affine_quantize(double x, const AffineQuantParams& p);
double affine_dequantize(int code, const AffineQuantParams& p);

enum class BlockScheme { Q8_0, Q4_0 };

// One 32-element block: a half-precision scale and its integer codes.
struct QuantBlock {
  BlockScheme scheme = BlockScheme::Q8_0;
  std::uint16_t scale_bits = 0;
  std::array<int, kQuantBlockSize> codes{};

  float scale() const { return fp16_bits_to_fp32(scale_bits); }
  friend bool operator==(const QuantBlock&, const QuantBlock&) = default;
};

// Q8_0: scale = max|x| / 127; codes = round(x / scale) in [-127, 127].
// Q4_0: scale = m / -8 where m is the signed value of largest magnitude;
//       codes = clamp(round(x / scale) + 8, 0, 15).
// The codes are computed against the single-precision scale; the stored
// scale is its half-precision rounding.
QuantBlock block_quantize(std::span<const float, kQuantBlockSize> values, BlockScheme scheme);
std::array<float, kQuantBlockSize> block_dequantize(const QuantBlock& block);

void encode_block(const QuantBlock& block, std::span<std::uint8_t> out);
QuantBlock decode_block(std::span<const std::uint8_t> bytes, BlockScheme scheme);

constexpr DType block_dtype(BlockScheme s) { return s == BlockScheme::Q8_0 ? DType::Q8_0 : DType::Q4_0; }
std::optional<BlockScheme> block_scheme_of(Scheme scheme);

struct QuantizeOptions {
  // Zero-pad a trailing partial block instead of failing.
  bool pad_partial_blocks = true;
  // Parameters for the AFFINE scheme.
  AffineQuantParams affine{};
};

// Block-quantizes every float tensor. The result owns its tensor bytes and
// records the scheme in metadata["quantization"].
ModelFile quantize_model(const ModelFile& model, Scheme scheme, const QuantizeOptions& options = {});

// Every tensor as F32 values: quantized tensors are dequantized block-wise.
ModelFile dequantize_model(const ModelFile& model);

// quantize_model followed by dequantize_model; for AFFINE this is the
// element-wise Q^-1(Q(x)). What a user of a quantized deployment sees.
ModelFile simulate_deployment(const ModelFile& model, Scheme scheme, const QuantizeOptions& options = {});

}  // namespace wsteg
