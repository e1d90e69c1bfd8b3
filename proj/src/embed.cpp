#include "wsteg/embed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "wsteg/bitcodec.hpp"
#include "wsteg/error.hpp"
#include "wsteg/target.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

EligibilityRule make_rule(Scheme scheme, unsigned n, const std::optional<AffineQuantParams>& affine) {
  EligibilityRule rule;
  rule.scheme = scheme;
  rule.n = n;
  switch (scheme) {
    case Scheme::Q8_0:
      if (n < 1 || n > 8) fail(ErrorCode::BadWidth, "q8_0 codes hold 1..8 LSBs");
      rule.lo = -126;
      rule.hi = 126;
      break;
    case Scheme::Q4_0:
      if (n < 1 || n > 4) fail(ErrorCode::BadWidth, "q4_0 codes hold 1..4 LSBs");
      rule.lo = 1;
      rule.hi = 15;
      break;
    case Scheme::AFFINE: {
      if (!affine) fail(ErrorCode::InvalidArgument, "affine scheme needs quantization parameters");
      affine->validate();
      const long long span = static_cast<long long>(affine->max_code) - affine->min_code + 1;
      if (n < 1 || n > 30 || (1ll << n) > span) fail(ErrorCode::BadWidth, "n too wide for the affine code range");
      rule.lo = affine->min_code + 1;
      rule.hi = affine->max_code - 1;
      break;
    }
    case Scheme::NONE:
      fail(ErrorCode::InvalidArgument, "robust mode needs a quantization scheme");
  }
  return rule;
}

bool eligible(int code, const EligibilityRule& rule) {
  const long long step = 1ll << rule.n;
  const long long base = static_cast<long long>(code >> rule.n) * step;
  return base >= rule.lo && base + step - 1 <= rule.hi;
}

namespace {

// ---- general mode ----

void check_general_widths(const ModelFile& model, const ParameterGroup& group, unsigned n, unsigned offset,
                          std::uint64_t segments) {
  std::uint64_t seen = 0;
  for (const auto& m : group.members) {
    if (seen >= segments) break;
    if (m.size() == 0) continue;
    const auto& t = model.tensor(m.tensor);
    if (!is_float(t.dtype))
      fail(ErrorCode::UnsupportedDtype, "general mode needs float tensors; " + t.name + " is " +
                                            std::string(dtype_name(t.dtype)));
    if (n + offset > element_bit_width(t.dtype))
      fail(ErrorCode::BadWidth, "n + plane offset exceeds the " + std::string(dtype_name(t.dtype)) + " width");
    seen += m.size();
  }
}

// ---- robust mode ----

// One usable quantization block: every real element lies inside the group.
struct CodedBlock {
  std::size_t tensor = 0;
  std::uint64_t first = 0;  // element index of the block's first real element
  unsigned count = 0;       // real elements (a trailing block may be short)
  std::uint16_t scale_bits = 0;
  std::array<int, kQuantBlockSize> codes{};
};

struct RobustContext {
  Scheme scheme;
  EligibilityRule rule;
  std::optional<AffineQuantParams> affine;
  unsigned block_size() const { return scheme == Scheme::AFFINE ? 1u : static_cast<unsigned>(kQuantBlockSize); }
};

RobustContext make_context(Scheme scheme, unsigned n, const std::optional<AffineQuantParams>& affine) {
  RobustContext ctx{scheme, make_rule(scheme, n, affine), affine};
  return ctx;
}

bool usable_scale(std::uint16_t bits) {
  const float d = fp16_bits_to_fp32(bits);
  return std::isfinite(d) && d != 0.0f;
}

// Quantizes (float tensors) or decodes (quantized tensors) one block.
// Returns false for blocks that cannot carry bits: zero or non-finite
// scale, or non-finite source values.
bool load_block(const ModelFile& model, const RobustContext& ctx, std::size_t tensor, std::uint64_t first,
                unsigned count, CodedBlock& out) {
  const auto& t = model.tensor(tensor);
  const auto data = model.tensor_data(tensor);
  out.tensor = tensor;
  out.first = first;
  out.count = count;

  if (ctx.scheme == Scheme::AFFINE) {
    if (!is_float(t.dtype))
      fail(ErrorCode::UnsupportedDtype, "affine extraction needs float tensors; " + t.name + " is quantized");
    const float x = load_value(data, t.dtype, first);
    if (!std::isfinite(x)) return false;
    out.codes[0] = affine_quantize(x, *ctx.affine);
    return true;
  }

  const BlockScheme bs = *block_scheme_of(ctx.scheme);
  if (is_quantized(t.dtype)) {
    if (t.dtype != block_dtype(bs))
      fail(ErrorCode::UnsupportedDtype, "tensor " + t.name + " is " + std::string(dtype_name(t.dtype)) +
                                            " but the manifest scheme is " + std::string(scheme_name(ctx.scheme)));
    const std::size_t stride = t.dtype == DType::Q8_0 ? kQ8_0BlockBytes : kQ4_0BlockBytes;
    const QuantBlock q = decode_block(data.subspan((first / kQuantBlockSize) * stride, stride), bs);
    if (!usable_scale(q.scale_bits)) return false;
    out.scale_bits = q.scale_bits;
    out.codes = q.codes;
    return true;
  }

  std::array<float, kQuantBlockSize> values{};
  for (unsigned j = 0; j < count; ++j) {
    values[j] = load_value(data, t.dtype, first + j);
    if (!std::isfinite(values[j])) return false;
  }
  const QuantBlock q = block_quantize(values, bs);
  if (!usable_scale(q.scale_bits)) return false;
  out.scale_bits = q.scale_bits;
  out.codes = q.codes;
  return true;
}

// Visits usable blocks of the group in canonical order until `visit`
// returns false. Blocks straddling a member boundary are skipped.
template <typename Visit>
void walk_blocks(const ModelFile& model, const ParameterGroup& group, const RobustContext& ctx, Visit&& visit) {
  const std::uint64_t bsz = ctx.block_size();
  CodedBlock block;
  for (const auto& m : group.members) {
    if (m.size() == 0) continue;
    const std::uint64_t count = model.tensor(m.tensor).element_count();
    for (std::uint64_t k = m.begin / bsz; k * bsz < m.end; ++k) {
      const std::uint64_t first = k * bsz;
      const std::uint64_t last = std::min(first + bsz, count);
      if (first < m.begin || last > m.end) continue;
      if (!load_block(model, ctx, m.tensor, first, static_cast<unsigned>(last - first), block)) continue;
      if (!visit(block)) return;
    }
  }
}

std::array<float, kQuantBlockSize> dequantize_codes(const RobustContext& ctx, const CodedBlock& b) {
  if (ctx.scheme == Scheme::AFFINE) {
    std::array<float, kQuantBlockSize> out{};
    out[0] = static_cast<float>(affine_dequantize(b.codes[0], *ctx.affine));
    return out;
  }
  QuantBlock q;
  q.scheme = *block_scheme_of(ctx.scheme);
  q.scale_bits = b.scale_bits;
  q.codes = b.codes;
  return block_dequantize(q);
}

// Re-quantizes staged floats the way a deployment would.
bool requantize(const RobustContext& ctx, const std::array<float, kQuantBlockSize>& values, unsigned count,
                CodedBlock& out) {
  if (ctx.scheme == Scheme::AFFINE) {
    if (!std::isfinite(values[0])) return false;
    out.codes[0] = affine_quantize(values[0], *ctx.affine);
    return true;
  }
  std::array<float, kQuantBlockSize> padded{};
  std::copy_n(values.begin(), count, padded.begin());
  const QuantBlock q = block_quantize(padded, *block_scheme_of(ctx.scheme));
  if (!usable_scale(q.scale_bits)) return false;
  out.scale_bits = q.scale_bits;
  out.codes = q.codes;
  return true;
}

EmbedManifest base_manifest(const ParameterGroup& group, const PayloadFrame& frame, EmbedMode mode, Scheme scheme) {
  EmbedManifest m;
  m.mode = mode;
  m.scheme = scheme;
  m.grouping_strategy = group.strategy;
  m.group_id = group.id;
  m.layer_pattern = group.layer_pattern;
  m.n = frame.n;
  m.payload_bits = frame.payload_bits;
  m.pad_len = frame.pad_len;
  m.crc32 = crc32(frame.raw);
  m.seed = frame.seed;
  m.toolkit_version = kToolkitVersion;
  return m;
}

}  // namespace

EmbedManifest embed_general(ModelFile& model, const ParameterGroup& group, const PayloadFrame& frame,
                            const EmbedOptions& options) {
  const unsigned n = frame.n;
  const unsigned offset = options.plane_offset;
  const std::uint64_t segments = frame.segment_count();
  if (segments > group.size())
    fail(ErrorCode::CapacityExceeded, std::to_string(segments) + " segments do not fit in group " + group.id +
                                          " of " + std::to_string(group.size()) + " elements");
  check_general_widths(model, group, n, offset, segments);

  std::uint64_t i = 0;
  for (const auto& m : group.members) {
    if (i >= segments) break;
    if (m.size() == 0) continue;
    const DType dtype = model.tensor(m.tensor).dtype;
    auto data = model.mutable_tensor_data(m.tensor);
    for (std::uint64_t e = m.begin; e < m.end && i < segments; ++e, ++i) {
      const std::uint32_t p = load_pattern(data, dtype, e);
      store_pattern(data, dtype, e, static_cast<std::uint32_t>(replace_low_bits(p, n, frame.segment_value(i), offset)));
      if (options.trace) options.trace({m.tensor, e});
    }
  }

  EmbedManifest manifest = base_manifest(group, frame, EmbedMode::GENERAL, Scheme::NONE);
  manifest.plane_offset = offset;
  return manifest;
}

EmbedManifest embed_robust(ModelFile& model, const ParameterGroup& group, const PayloadFrame& frame, Scheme scheme,
                           const EmbedOptions& options) {
  const RobustContext ctx = make_context(scheme, frame.n, options.affine);
  for (const auto& m : group.members) {
    const auto& t = model.tensor(m.tensor);
    if (m.size() > 0 && !is_float(t.dtype))
      fail(ErrorCode::UnsupportedDtype, "robust mode embeds into float tensors; " + t.name + " is " +
                                            std::string(dtype_name(t.dtype)));
  }

  const unsigned n = frame.n;
  const std::uint64_t segments = frame.segment_count();
  const std::uint64_t mask = low_mask(n);

  // Plan: prefix assignment of segments to eligible codes.
  std::vector<CodedBlock> touched;
  std::uint64_t assigned = 0;
  if (segments > 0) {
    walk_blocks(model, group, ctx, [&](const CodedBlock& b) {
      bool used = false;
      CodedBlock staged = b;
      for (unsigned j = 0; j < b.count && assigned < segments; ++j) {
        if (!eligible(b.codes[j], ctx.rule)) continue;
        const auto seg = static_cast<int>(frame.segment_value(assigned));
        staged.codes[j] = static_cast<int>((b.codes[j] & ~static_cast<int>(mask)) | seg);
        ++assigned;
        used = true;
      }
      if (used) touched.push_back(staged);
      return assigned < segments;
    });
  }
  if (assigned < segments)
    fail(ErrorCode::CapacityExceeded, std::to_string(segments) + " segments but group " + group.id + " has only " +
                                          std::to_string(assigned) + " eligible " + std::string(scheme_name(scheme)) +
                                          " codes");

  // Stage dequantized floats and verify that re-quantization reproduces
  // every segment before anything is written.
  std::vector<std::array<float, kQuantBlockSize>> staged(touched.size());
  std::uint64_t check = 0;
  for (std::size_t b = 0; b < touched.size(); ++b) {
    staged[b] = dequantize_codes(ctx, touched[b]);
    CodedBlock again;
    if (!requantize(ctx, staged[b], touched[b].count, again))
      fail(ErrorCode::StabilityVerificationFailed, "staged block lost its scale in tensor " +
                                                       model.tensor(touched[b].tensor).name);
    for (unsigned j = 0; j < touched[b].count && check < segments; ++j) {
      if (!eligible(again.codes[j], ctx.rule)) continue;
      if (static_cast<std::uint64_t>(again.codes[j] & static_cast<int>(mask)) != frame.segment_value(check))
        fail(ErrorCode::StabilityVerificationFailed,
             "segment " + std::to_string(check) + " did not survive re-quantization in tensor " +
                 model.tensor(touched[b].tensor).name + " element " + std::to_string(touched[b].first + j));
      ++check;
    }
  }
  if (check != segments)
    fail(ErrorCode::StabilityVerificationFailed, "re-quantization changed the eligible element sequence");

  // Commit.
  std::set<std::size_t> widened;
  for (const auto& b : touched)
    if (widened.insert(b.tensor).second) model.widen_to_f32(b.tensor);
  std::uint64_t traced = 0;
  for (std::size_t b = 0; b < touched.size(); ++b) {
    auto data = model.mutable_tensor_data(touched[b].tensor);
    for (unsigned j = 0; j < touched[b].count; ++j) {
      store_value(data, DType::F32, touched[b].first + j, staged[b][j]);
      if (options.trace && traced < segments && eligible(touched[b].codes[j], ctx.rule)) {
        options.trace({touched[b].tensor, touched[b].first + j});
        ++traced;
      }
    }
  }

  EmbedManifest manifest = base_manifest(group, frame, EmbedMode::ROBUST, scheme);
  if (scheme == Scheme::AFFINE) manifest.affine = options.affine;
  return manifest;
}

ExtractedBits extract_bits(const ModelFile& model, const ParameterGroup& group, const EmbedManifest& manifest,
                           const ExtractOptions& options) {
  const unsigned n = manifest.n;
  const std::uint64_t segments = manifest.segment_count();
  BitWriter out;
  std::uint64_t got = 0;

  if (manifest.mode == EmbedMode::GENERAL) {
    const unsigned offset = manifest.plane_offset;
    for (const auto& m : group.members) {
      if (got >= segments) break;
      if (m.size() == 0) continue;
      const auto& t = model.tensor(m.tensor);
      const auto data = model.tensor_data(m.tensor);
      // Quantized tensors are read through their dequantized F32 pattern.
      const DType view = is_quantized(t.dtype) ? DType::F32 : t.dtype;
      if (n + offset > element_bit_width(view))
        fail(ErrorCode::BadWidth, "n + plane offset exceeds the " + std::string(dtype_name(view)) + " width");
      for (std::uint64_t e = m.begin; e < m.end && got < segments; ++e, ++got) {
        const std::uint32_t p = is_quantized(t.dtype) ? f32_bits(load_value(data, t.dtype, e))
                                                      : load_pattern(data, t.dtype, e);
        out.put(extract_low_bits(p, n, offset), n);
        if (options.trace) options.trace({m.tensor, e});
      }
    }
    return {out.take(), out.bit_count()};
  }

  const RobustContext ctx = make_context(manifest.scheme, n, manifest.affine);
  if (segments > 0) {
    walk_blocks(model, group, ctx, [&](const CodedBlock& b) {
      for (unsigned j = 0; j < b.count && got < segments; ++j) {
        if (!eligible(b.codes[j], ctx.rule)) continue;
        out.put(static_cast<std::uint64_t>(b.codes[j]) & low_mask(n), n);
        if (options.trace) options.trace({b.tensor, b.first + j});
        ++got;
      }
      return got < segments;
    });
  }
  return {out.take(), out.bit_count()};
}

std::vector<std::uint8_t> extract(const ModelFile& model, const EmbedManifest& manifest, const ParameterGroup& group,
                                  const ExtractOptions& options) {
  const ExtractedBits bits = extract_bits(model, group, manifest, options);
  return recover_payload(bits.packed, bits.bit_count, manifest);
}

std::vector<std::uint8_t> extract(const ModelFile& model, const EmbedManifest& manifest,
                                  const ExtractOptions& options) {
  return extract(model, manifest, resolve_group(model, manifest), options);
}

std::uint64_t robust_eligible_count(const ModelFile& model, const ParameterGroup& group, Scheme scheme, unsigned n,
                                    const std::optional<AffineQuantParams>& affine) {
  const RobustContext ctx = make_context(scheme, n, affine);
  std::uint64_t count = 0;
  walk_blocks(model, group, ctx, [&](const CodedBlock& b) {
    for (unsigned j = 0; j < b.count; ++j)
      if (eligible(b.codes[j], ctx.rule)) ++count;
    return true;
  });
  return count;
}

AffineQuantParams fit_affine(const ModelFile& model, const ParameterGroup& group) {
  double amax = 0.0;
  for (const auto& m : group.members) {
    const auto& t = model.tensor(m.tensor);
    const auto data = model.tensor_data(m.tensor);
    for (std::uint64_t e = m.begin; e < m.end; ++e) {
      const float x = load_value(data, t.dtype, e);
      if (std::isfinite(x)) amax = std::max(amax, static_cast<double>(std::fabs(x)));
    }
  }
  AffineQuantParams p;
  p.scale = amax > 0.0 ? amax / 127.0 : 1.0;
  p.zero_point = 0;
  p.min_code = -128;
  p.max_code = 127;
  return p;
}

}  // namespace wsteg
