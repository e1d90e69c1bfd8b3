#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "wsteg/group.hpp"
#include "wsteg/model_file.hpp"
#include "wsteg/payload.hpp"
#include "wsteg/quant.hpp"

namespace wsteg {

// Codes an n-bit LSB fill may move between: an eligible code's whole fill
// band [high * 2^n, high * 2^n + 2^n - 1] must stay inside [lo, hi].
// Q8_0 keeps clear of the +-127 anchor band, Q4_0 of the anchor code 0,
// affine of both clamp limits.
struct EligibilityRule {
  Scheme scheme = Scheme::Q8_0;
  unsigned n = 1;
  int lo = -126;
  int hi = 126;
};

EligibilityRule make_rule(Scheme scheme, unsigned n, const std::optional<AffineQuantParams>& affine = std::nullopt);

// Reads only the bits above the bottom n, so it is invariant under embedding.
bool eligible(int code, const EligibilityRule& rule);

using TraceFn = std::function<void(const ElementLocation&)>;

struct EmbedOptions {
  // General mode: place segments this many bits above the LSB.
  unsigned plane_offset = 0;
  // Robust mode: required for Scheme::AFFINE.
  std::optional<AffineQuantParams> affine;
  // Called for every element that receives a segment, in order.
  TraceFn trace;
};

// LSB substitution on float bit patterns: element i of the group gets
// segment i in its bottom n bits. Mutates `model` in place.
EmbedManifest embed_general(ModelFile& model, const ParameterGroup& group, const PayloadFrame& frame,
                            const EmbedOptions& options = {});

// Quantize, substitute into eligible integer codes, dequantize. Touched
// tensors are stored as F32. Nothing is written unless a re-quantization
// pass over the staged floats recovers every segment exactly.
EmbedManifest embed_robust(ModelFile& model, const ParameterGroup& group, const PayloadFrame& frame,
                           Scheme scheme, const EmbedOptions& options = {});

struct ExtractOptions {
  TraceFn trace;
};

struct ExtractedBits {
  std::vector<std::uint8_t> packed;
  std::uint64_t bit_count = 0;
};

// Segments as read from the model, before checksum verification. Stops
// early (short bit_count) when the group runs out of usable elements.
ExtractedBits extract_bits(const ModelFile& model, const ParameterGroup& group,
                           const EmbedManifest& manifest, const ExtractOptions& options = {});

// Recovers and verifies the payload. Throws ChecksumMismatchError on damage.
std::vector<std::uint8_t> extract(const ModelFile& model, const EmbedManifest& manifest,
                                  const ParameterGroup& group, const ExtractOptions& options = {});
// Resolves the group recorded in the manifest first.
std::vector<std::uint8_t> extract(const ModelFile& model, const EmbedManifest& manifest,
                                  const ExtractOptions& options = {});

// Number of elements robust mode can use in a group.
std::uint64_t robust_eligible_count(const ModelFile& model, const ParameterGroup& group, Scheme scheme,
                                    unsigned n, const std::optional<AffineQuantParams>& affine = std::nullopt);

// Affine parameters fitted to a group: scale = max|x| / 127, zero point 0,
// codes in [-128, 127].
AffineQuantParams fit_affine(const ModelFile& model, const ParameterGroup& group);

}  // namespace wsteg
