#include "wsteg/quant.hpp"

#include <algorithm>
#include <cmath>

#include "wsteg/error.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::NONE: return "none";
    case Scheme::Q8_0: return "q8_0";
    case Scheme::Q4_0: return "q4_0";
    case Scheme::AFFINE: return "affine";
  }
  return "?";
}

std::optional<Scheme> scheme_from_name(std::string_view name) {
  if (name == "none") return Scheme::NONE;
  if (name == "q8_0") return Scheme::Q8_0;
  if (name == "q4_0") return Scheme::Q4_0;
  if (name == "affine") return Scheme::AFFINE;
  return std::nullopt;
}

std::optional<BlockScheme> block_scheme_of(Scheme scheme) {
  if (scheme == Scheme::Q8_0) return BlockScheme::Q8_0;
  if (scheme == Scheme::Q4_0) return BlockScheme::Q4_0;
  return std::nullopt;
}

void AffineQuantParams::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale))
    fail(ErrorCode::InvalidArgument, "affine scale must be positive and finite");
  if (min_code > max_code || zero_point < min_code || zero_point > max_code)
    fail(ErrorCode::InvalidArgument, "affine zero point must lie inside the code range");
}

int affine_quantize(double x, const AffineQuantParams& p) {
  if (std::isnan(x)) return p.zero_point;
  const double q = std::nearbyint(x / p.scale) + p.zero_point;
  return static_cast<int>(std::clamp(q, static_cast<double>(p.min_code), static_cast<double>(p.max_code)));
}

double affine_dequantize(int code, const AffineQuantParams& p) {
  if (code < p.min_code || code > p.max_code)
    fail(ErrorCode::CodeOutOfRange, "code " + std::to_string(code) + " outside the affine code range");
  return p.scale * static_cast<double>(code - p.zero_point);
}

QuantBlock block_quantize(std::span<const float, kQuantBlockSize> values, BlockScheme scheme) {
  for (float v : values)
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "cannot quantize a non-finite value");

  QuantBlock block;
  block.scheme = scheme;
  if (scheme == BlockScheme::Q8_0) {
    float amax = 0.0f;
    for (float v : values) amax = std::max(amax, std::fabs(v));
    const float d = amax / 127.0f;
    block.scale_bits = fp32_to_fp16_bits(d);
    for (std::size_t j = 0; j < kQuantBlockSize; ++j) {
      if (d == 0.0f) {
        block.codes[j] = 0;
        continue;
      }
      const float q = std::nearbyint(values[j] / d);
      block.codes[j] = static_cast<int>(std::clamp(q, -127.0f, 127.0f));
    }
    return block;
  }

  float amax = 0.0f;
  float max = 0.0f;
  for (float v : values) {
    if (amax < std::fabs(v)) {
      amax = std::fabs(v);
      max = v;
    }
  }
  const float d = max / -8.0f;
  block.scale_bits = fp32_to_fp16_bits(d);
  for (std::size_t j = 0; j < kQuantBlockSize; ++j) {
    if (d == 0.0f) {
      block.codes[j] = 8;
      continue;
    }
    const float q = std::nearbyint(values[j] / d) + 8.0f;
    block.codes[j] = static_cast<int>(std::clamp(q, 0.0f, 15.0f));
  }
  return block;
}

std::array<float, kQuantBlockSize> block_dequantize(const QuantBlock& block) {
  std::array<float, kQuantBlockSize> out{};
  const float d = block.scale();
  const int offset = block.scheme == BlockScheme::Q4_0 ? 8 : 0;
  for (std::size_t j = 0; j < kQuantBlockSize; ++j) out[j] = d * static_cast<float>(block.codes[j] - offset);
  return out;
}

void encode_block(const QuantBlock& block, std::span<std::uint8_t> out) {
  out[0] = static_cast<std::uint8_t>(block.scale_bits & 0xFF);
  out[1] = static_cast<std::uint8_t>(block.scale_bits >> 8);
  if (block.scheme == BlockScheme::Q8_0) {
    for (std::size_t j = 0; j < kQuantBlockSize; ++j)
      out[2 + j] = static_cast<std::uint8_t>(static_cast<std::int8_t>(block.codes[j]));
    return;
  }
  constexpr std::size_t half = kQuantBlockSize / 2;
  for (std::size_t j = 0; j < half; ++j)
    out[2 + j] = static_cast<std::uint8_t>((block.codes[j] & 0x0F) | ((block.codes[j + half] & 0x0F) << 4));
}

QuantBlock decode_block(std::span<const std::uint8_t> bytes, BlockScheme scheme) {
  QuantBlock block;
  block.scheme = scheme;
  block.scale_bits = static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
  if (scheme == BlockScheme::Q8_0) {
    for (std::size_t j = 0; j < kQuantBlockSize; ++j) block.codes[j] = static_cast<std::int8_t>(bytes[2 + j]);
    return block;
  }
  constexpr std::size_t half = kQuantBlockSize / 2;
  for (std::size_t j = 0; j < half; ++j) {
    block.codes[j] = bytes[2 + j] & 0x0F;
    block.codes[j + half] = bytes[2 + j] >> 4;
  }
  return block;
}

namespace {

void require_float_tensors(const ModelFile& model) {
  for (const auto& t : model.tensors())
    if (!is_float(t.dtype))
      fail(ErrorCode::UnsupportedDtype, "tensor " + t.name + " is already quantized");
}

ModelFile empty_like(const ModelFile& model, FileFormat format) {
  return ModelFile(format, model.tensors(), model.metadata(), ByteStore::from_vector({}));
}

}  // namespace

ModelFile quantize_model(const ModelFile& model, Scheme scheme, const QuantizeOptions& options) {
  const auto block_scheme = block_scheme_of(scheme);
  if (!block_scheme)
    fail(ErrorCode::InvalidArgument,
         "scheme " + std::string(scheme_name(scheme)) + " has no block storage form; use simulate_deployment");
  require_float_tensors(model);

  const DType out_dtype = block_dtype(*block_scheme);
  const std::size_t stride = out_dtype == DType::Q8_0 ? kQ8_0BlockBytes : kQ4_0BlockBytes;
  ModelFile out = empty_like(model, model.format());
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    const auto& t = model.tensor(i);
    const std::uint64_t count = t.element_count();
    if (count % kQuantBlockSize != 0 && !options.pad_partial_blocks)
      fail(ErrorCode::IncompatibleShape,
           "tensor " + t.name + " has " + std::to_string(count) + " elements, not a multiple of 32");
    const std::uint64_t blocks = (count + kQuantBlockSize - 1) / kQuantBlockSize;
    std::vector<std::uint8_t> bytes(blocks * stride);
    auto src = model.tensor_data(i);
    parallel_for(blocks, [&](std::size_t begin, std::size_t end) {
      std::array<float, kQuantBlockSize> values{};
      for (std::size_t b = begin; b < end; ++b) {
        for (std::uint64_t j = 0; j < kQuantBlockSize; ++j) {
          const std::uint64_t e = b * kQuantBlockSize + j;
          values[j] = e < count ? load_value(src, t.dtype, e) : 0.0f;
        }
        const QuantBlock block = block_quantize(values, *block_scheme);
        encode_block(block, std::span<std::uint8_t>(bytes).subspan(b * stride, stride));
      }
    });
    out.replace_tensor(i, out_dtype, std::move(bytes));
  }
  out.metadata()["quantization"] = std::string(scheme_name(scheme));
  return out;
}

ModelFile dequantize_model(const ModelFile& model) {
  ModelFile out = empty_like(model, FileFormat::SAFETENSORS);
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    const auto& t = model.tensor(i);
    const std::uint64_t count = t.element_count();
    std::vector<std::uint8_t> bytes(count * 4);
    auto src = model.tensor_data(i);
    parallel_for(count, [&](std::size_t begin, std::size_t end) {
      for (std::size_t e = begin; e < end; ++e) store_value(bytes, DType::F32, e, load_value(src, t.dtype, e));
    });
    out.replace_tensor(i, DType::F32, std::move(bytes));
  }
  return out;
}

ModelFile simulate_deployment(const ModelFile& model, Scheme scheme, const QuantizeOptions& options) {
  if (scheme == Scheme::NONE) return dequantize_model(model);
  if (scheme != Scheme::AFFINE) {
    ModelFile out = dequantize_model(quantize_model(model, scheme, options));
    out.metadata()["quantization"] = std::string(scheme_name(scheme));
    return out;
  }
  options.affine.validate();
  require_float_tensors(model);
  ModelFile out = empty_like(model, FileFormat::SAFETENSORS);
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    const auto& t = model.tensor(i);
    const std::uint64_t count = t.element_count();
    std::vector<std::uint8_t> bytes(count * 4);
    auto src = model.tensor_data(i);
    for (std::uint64_t e = 0; e < count; ++e) {
      const float x = load_value(src, t.dtype, e);
      if (!std::isfinite(x)) fail(ErrorCode::NonFiniteInput, "cannot quantize a non-finite value");
      const double y = affine_dequantize(affine_quantize(x, options.affine), options.affine);
      store_value(bytes, DType::F32, e, static_cast<float>(y));
    }
    out.replace_tensor(i, DType::F32, std::move(bytes));
  }
  out.metadata()["quantization"] = "affine";
  return out;
}

}  // namespace wsteg
