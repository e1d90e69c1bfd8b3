#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsteg/group.hpp"
#include "wsteg/model_file.hpp"

namespace wsteg {

// Overwrites the bottom k bits of every float element with seeded random
// bits, tensors in file order. Bits above plane k are never touched.
void sanitize(ModelFile& model, unsigned k, std::uint64_t seed);

struct PlaneStats {
  unsigned offset = 0;  // 0 = least significant bit
  std::uint64_t ones = 0;
  std::uint64_t total = 0;
  double chi_square = 0.0;  // against a fair coin, 1 degree of freedom
  double p_value = 1.0;

  double ones_fraction() const { return total == 0 ? 0.0 : static_cast<double>(ones) / static_cast<double>(total); }
};

struct SelectionStats {
  std::string name;
  unsigned width = 0;  // storage bits per element (code bits for quantized tensors)
  std::uint64_t elements = 0;
  std::vector<PlaneStats> planes;  // offsets 0 .. min(16, width) - 1
  unsigned entropy_planes = 0;
  double entropy_bits = 0.0;  // Shannon entropy of the bottom entropy_planes bits
};

struct StatsReport {
  std::string scope;
  std::vector<SelectionStats> tensors;
  SelectionStats aggregate;
};

inline constexpr unsigned kStatsPlanes = 16;

// Bit-plane statistics over a group (or the whole model). Float tensors are
// read as stored bit patterns, quantized tensors as their integer codes.
StatsReport lsb_stats(const ModelFile& model, const std::optional<ParameterGroup>& group = std::nullopt,
                      unsigned entropy_planes = 8);

nlohmann::ordered_json stats_to_json(const StatsReport& report);

}  // namespace wsteg
