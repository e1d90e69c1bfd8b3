#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsteg/bitcodec.hpp"
#include "wsteg/group.hpp"
#include "wsteg/quant.hpp"

namespace wsteg {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Append-only MSB-first bit buffer.
class BitWriter {
 public:
  void put(std::uint64_t bits, unsigned n);
  std::uint64_t bit_count() const { return count_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t count_ = 0;
};

// Reads fixed-width fields from an MSB-first bit buffer.
std::uint64_t read_bits(std::span<const std::uint8_t> packed, std::uint64_t bit_offset, unsigned n);

// The payload bit string s, its pad, and its division into n-bit segments.
struct PayloadFrame {
  std::vector<std::uint8_t> raw;
  std::uint64_t payload_bits = 0;  // |s|
  unsigned n = 1;
  unsigned pad_len = 0;
  std::uint64_t seed = 0;
  // s followed by the pad bits, MSB-first.
  std::vector<std::uint8_t> packed;

  std::uint64_t total_bits() const { return payload_bits + pad_len; }
  std::uint64_t segment_count() const { return total_bits() / n; }
  BitString segment(std::uint64_t i) const;
  std::uint64_t segment_value(std::uint64_t i) const { return read_bits(packed, i * n, n); }
  std::vector<BitString> segments() const;
};

// s = raw bytes MSB-first; pad bits drawn from SeededBits(seed).
PayloadFrame prepare_payload(std::span<const std::uint8_t> raw, unsigned n, std::uint64_t seed);

// A frame of `bit_count` seeded random bits (no pad needed when bit_count is a
// multiple of n). Used for importance probing.
PayloadFrame random_frame(std::uint64_t bit_count, unsigned n, std::uint64_t seed);

enum class EmbedMode { GENERAL, ROBUST };

std::string_view mode_name(EmbedMode mode);
std::optional<EmbedMode> mode_from_name(std::string_view name);

// Everything extraction needs; stored as a sidecar JSON document.
struct EmbedManifest {
  int version = 1;
  EmbedMode mode = EmbedMode::GENERAL;
  Scheme scheme = Scheme::NONE;
  GroupingStrategy grouping_strategy = GroupingStrategy::MODEL;
  std::string group_id;
  std::string layer_pattern;
  unsigned n = 1;
  std::uint64_t payload_bits = 0;
  unsigned pad_len = 0;
  std::uint32_t crc32 = 0;
  std::uint64_t seed = 0;
  // General mode only: bit position of the field above the LSB.
  unsigned plane_offset = 0;
  std::optional<AffineQuantParams> affine;
  std::string toolkit_version;

  std::uint64_t segment_count() const { return (payload_bits + pad_len) / n; }
};

nlohmann::ordered_json manifest_to_json(const EmbedManifest& manifest);
EmbedManifest manifest_from_json(const nlohmann::json& doc);
void save_manifest(const EmbedManifest& manifest, const std::filesystem::path& path);
EmbedManifest load_manifest(const std::filesystem::path& path);

// Concatenates segments, drops the pad, and verifies the checksum.
std::vector<std::uint8_t> recover_payload(std::span<const BitString> segments, const EmbedManifest& manifest);
// Same, from an already-concatenated MSB-first bit buffer.
std::vector<std::uint8_t> recover_payload(std::span<const std::uint8_t> packed, std::uint64_t bit_count,
                                          const EmbedManifest& manifest);

// Fraction of differing bits over the common length, counting any length
// difference as errors.
double bit_error_rate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace wsteg
