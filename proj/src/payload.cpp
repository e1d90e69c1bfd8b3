#include "wsteg/payload.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <fstream>

#include "wsteg/error.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void BitWriter::put(std::uint64_t bits, unsigned n) {
  bits &= low_mask(n);
  while (n > 0) {
    const unsigned used = static_cast<unsigned>(count_ % 8);
    if (used == 0) bytes_.push_back(0);
    const unsigned free = 8 - used;
    const unsigned take = std::min(free, n);
    const auto chunk = static_cast<std::uint8_t>((bits >> (n - take)) & low_mask(take));
    bytes_.back() = static_cast<std::uint8_t>(bytes_.back() | (chunk << (free - take)));
    n -= take;
    count_ += take;
  }
}

std::uint64_t read_bits(std::span<const std::uint8_t> packed, std::uint64_t bit_offset, unsigned n) {
  std::uint64_t out = 0;
  while (n > 0) {
    const std::uint64_t byte = bit_offset / 8;
    const unsigned used = static_cast<unsigned>(bit_offset % 8);
    const unsigned avail = 8 - used;
    const unsigned take = std::min(avail, n);
    const std::uint64_t chunk = (packed[byte] >> (avail - take)) & low_mask(take);
    out = (out << take) | chunk;
    n -= take;
    bit_offset += take;
  }
  return out;
}

BitString PayloadFrame::segment(std::uint64_t i) const { return BitString(segment_value(i), n); }

std::vector<BitString> PayloadFrame::segments() const {
  std::vector<BitString> out;
  out.reserve(segment_count());
  for (std::uint64_t i = 0; i < segment_count(); ++i) out.push_back(segment(i));
  return out;
}

namespace {

void check_n(unsigned n) {
  if (n < 1 || n > BitString::kMaxWidth) fail(ErrorCode::BadWidth, "segment width n must be in 1..64");
}

unsigned pad_for(std::uint64_t bits, unsigned n) { return static_cast<unsigned>((n - bits % n) % n); }

}  // namespace

PayloadFrame prepare_payload(std::span<const std::uint8_t> raw, unsigned n, std::uint64_t seed) {
  check_n(n);
  PayloadFrame f;
  f.raw.assign(raw.begin(), raw.end());
  f.payload_bits = static_cast<std::uint64_t>(raw.size()) * 8;
  f.n = n;
  f.seed = seed;
  f.pad_len = pad_for(f.payload_bits, n);
  BitWriter w;
  for (auto b : raw) w.put(b, 8);
  SeededBits pad(seed);
  w.put(pad.take(f.pad_len), f.pad_len);
  f.packed = w.take();
  return f;
}

PayloadFrame random_frame(std::uint64_t bit_count, unsigned n, std::uint64_t seed) {
  check_n(n);
  PayloadFrame f;
  f.payload_bits = bit_count;
  f.n = n;
  f.seed = seed;
  f.pad_len = pad_for(bit_count, n);
  SeededBits bits(seed);
  BitWriter w;
  std::uint64_t left = bit_count + f.pad_len;
  while (left > 0) {
    const unsigned k = static_cast<unsigned>(std::min<std::uint64_t>(left, 64));
    w.put(bits.take(k), k);
    left -= k;
  }
  f.packed = w.take();
  f.raw.assign(f.packed.begin(), f.packed.begin() + static_cast<std::ptrdiff_t>((bit_count + 7) / 8));
  return f;
}

std::string_view mode_name(EmbedMode mode) { return mode == EmbedMode::GENERAL ? "general" : "robust"; }

std::optional<EmbedMode> mode_from_name(std::string_view name) {
  if (name == "general") return EmbedMode::GENERAL;
  if (name == "robust") return EmbedMode::ROBUST;
  return std::nullopt;
}

nlohmann::ordered_json manifest_to_json(const EmbedManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["mode"] = std::string(mode_name(m.mode));
  j["scheme"] = std::string(scheme_name(m.scheme));
  j["grouping_strategy"] = std::string(strategy_name(m.grouping_strategy));
  j["group_id"] = m.group_id;
  j["n"] = m.n;
  j["payload_bits"] = m.payload_bits;
  j["pad_len"] = m.pad_len;
  j["crc32"] = m.crc32;
  j["seed"] = m.seed;
  if (!m.layer_pattern.empty()) j["layer_pattern"] = m.layer_pattern;
  j["plane_offset"] = m.plane_offset;
  if (m.affine) {
    j["affine"] = {{"scale", m.affine->scale},
                   {"zero_point", m.affine->zero_point},
                   {"min_code", m.affine->min_code},
                   {"max_code", m.affine->max_code}};
  }
  j["toolkit_version"] = m.toolkit_version;
  return j;
}

EmbedManifest manifest_from_json(const nlohmann::json& doc) {
  EmbedManifest m;
  try {
    m.version = doc.at("version").get<int>();
    const auto mode = mode_from_name(doc.at("mode").get<std::string>());
    const auto scheme = scheme_from_name(doc.at("scheme").get<std::string>());
    const auto strategy = strategy_from_name(doc.at("grouping_strategy").get<std::string>());
    if (!mode || !scheme || !strategy) fail(ErrorCode::InvalidDocument, "manifest has an unknown mode, scheme or strategy");
    m.mode = *mode;
    m.scheme = *scheme;
    m.grouping_strategy = *strategy;
    m.group_id = doc.at("group_id").get<std::string>();
    m.n = doc.at("n").get<unsigned>();
    m.payload_bits = doc.at("payload_bits").get<std::uint64_t>();
    m.pad_len = doc.at("pad_len").get<unsigned>();
    m.crc32 = doc.at("crc32").get<std::uint32_t>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.layer_pattern = doc.value("layer_pattern", std::string{});
    m.plane_offset = doc.value("plane_offset", 0u);
    if (doc.contains("affine")) {
      const auto& a = doc.at("affine");
      m.affine = AffineQuantParams{a.at("scale").get<double>(), a.at("zero_point").get<int>(),
                                   a.at("min_code").get<int>(), a.at("max_code").get<int>()};
    }
    m.toolkit_version = doc.value("toolkit_version", std::string{});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDocument, std::string("malformed manifest: ") + e.what());
  }
  if (m.version != 1) fail(ErrorCode::InvalidDocument, "unsupported manifest version");
  if (m.n < 1 || m.n > BitString::kMaxWidth) fail(ErrorCode::InvalidDocument, "manifest n must be in 1..64");
  if (m.pad_len >= m.n || (m.payload_bits + m.pad_len) % m.n != 0)
    fail(ErrorCode::InvalidDocument, "manifest pad length inconsistent with n");
  if (m.mode == EmbedMode::ROBUST && m.scheme == Scheme::NONE)
    fail(ErrorCode::InvalidDocument, "robust manifest requires a quantization scheme");
  if (m.scheme == Scheme::AFFINE && !m.affine)
    fail(ErrorCode::InvalidDocument, "affine manifest requires affine parameters");
  return m;
}

void save_manifest(const EmbedManifest& manifest, const std::filesystem::path& path) {
  atomic_write(path, manifest_to_json(manifest).dump(2) + "\n");
}

EmbedManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open manifest " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDocument, std::string("manifest is not valid JSON: ") + e.what());
  }
  return manifest_from_json(doc);
}

std::vector<std::uint8_t> recover_payload(std::span<const std::uint8_t> packed, std::uint64_t bit_count,
                                          const EmbedManifest& manifest) {
  if (bit_count < manifest.payload_bits)
    fail(ErrorCode::LengthMismatch, "recovered " + std::to_string(bit_count) + " bits, payload needs " +
                                        std::to_string(manifest.payload_bits));
  if (manifest.payload_bits % 8 != 0) fail(ErrorCode::LengthMismatch, "payload length is not a whole number of bytes");
  const std::uint64_t n_bytes = manifest.payload_bits / 8;
  std::vector<std::uint8_t> out(packed.begin(), packed.begin() + static_cast<std::ptrdiff_t>(n_bytes));
  const std::uint32_t actual = crc32(out);
  if (actual != manifest.crc32) throw ChecksumMismatchError(std::move(out), manifest.crc32, actual);
  return out;
}

std::vector<std::uint8_t> recover_payload(std::span<const BitString> segments, const EmbedManifest& manifest) {
  BitWriter w;
  for (const auto& s : segments) {
    if (s.width() != manifest.n)
      fail(ErrorCode::WidthMismatch, "segment width " + std::to_string(s.width()) + " does not match n");
    w.put(s.value(), s.width());
  }
  return recover_payload(w.bytes(), w.bit_count(), manifest);
}

double bit_error_rate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  const std::size_t common = std::min(a.size(), b.size());
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  std::uint64_t errors = 8 * static_cast<std::uint64_t>(longest - common);
  for (std::size_t i = 0; i < common; ++i) errors += static_cast<unsigned>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
  return static_cast<double>(errors) / (8.0 * static_cast<double>(longest));
}

}  // namespace wsteg
