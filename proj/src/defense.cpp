#include "wsteg/defense.hpp"

#include <algorithm>
#include <cmath>

#include "wsteg/bitcodec.hpp"
#include "wsteg/error.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

void sanitize(ModelFile& model, unsigned k, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::BadWidth, "sanitize needs k >= 1");
  for (const auto& t : model.tensors()) {
    if (!is_float(t.dtype)) fail(ErrorCode::UnsupportedDtype, "cannot sanitize quantized tensor " + t.name);
    if (k >= element_bit_width(t.dtype))
      fail(ErrorCode::BadWidth, "k = " + std::to_string(k) + " reaches the full width of " + t.name);
  }
  SeededBits bits(seed);
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    const DType dtype = model.tensor(i).dtype;
    const std::uint64_t count = model.tensor(i).element_count();
    auto data = model.mutable_tensor_data(i);
    for (std::uint64_t e = 0; e < count; ++e) {
      const std::uint32_t p = load_pattern(data, dtype, e);
      store_pattern(data, dtype, e, static_cast<std::uint32_t>(replace_low_bits(p, k, bits.take(k))));
    }
  }
}

namespace {

struct Accumulator {
  unsigned width = 0;
  unsigned planes = 0;
  unsigned entropy_planes = 0;
  std::uint64_t elements = 0;
  std::vector<std::uint64_t> ones;
  std::vector<std::uint64_t> histogram;

  Accumulator(unsigned w, unsigned k) : width(w), planes(std::min(kStatsPlanes, w)), entropy_planes(std::min(k, w)) {
    ones.assign(planes, 0);
    histogram.assign(std::size_t{1} << entropy_planes, 0);
  }

  void add(std::uint32_t pattern) {
    ++elements;
    for (unsigned b = 0; b < planes; ++b) ones[b] += (pattern >> b) & 1u;
    ++histogram[pattern & low_mask(entropy_planes)];
  }
};

std::uint32_t element_bits(std::span<const std::uint8_t> data, DType dtype, std::uint64_t e) {
  if (is_quantized(dtype)) return static_cast<std::uint32_t>(load_code(data, dtype, e)) & static_cast<std::uint32_t>(low_mask(element_bit_width(dtype)));
  return load_pattern(data, dtype, e);
}

double entropy(const std::vector<std::uint64_t>& histogram, std::uint64_t total) {
  if (total == 0) return 0.0;
  double h = 0.0;
  for (auto c : histogram) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

SelectionStats finish(std::string name, const Accumulator& acc) {
  SelectionStats s;
  s.name = std::move(name);
  s.width = acc.width;
  s.elements = acc.elements;
  for (unsigned b = 0; b < acc.planes; ++b) {
    PlaneStats p;
    p.offset = b;
    p.ones = acc.ones[b];
    p.total = acc.elements;
    if (p.total > 0) {
      const double diff = static_cast<double>(p.ones) - static_cast<double>(p.total - p.ones);
      p.chi_square = diff * diff / static_cast<double>(p.total);
      p.p_value = std::erfc(std::sqrt(p.chi_square / 2.0));
    }
    s.planes.push_back(p);
  }
  s.entropy_planes = acc.entropy_planes;
  s.entropy_bits = entropy(acc.histogram, acc.elements);
  return s;
}

}  // namespace

StatsReport lsb_stats(const ModelFile& model, const std::optional<ParameterGroup>& group, unsigned entropy_planes) {
  if (entropy_planes < 1 || entropy_planes > 16) fail(ErrorCode::BadWidth, "entropy planes must be in 1..16");
  std::vector<TensorRange> ranges;
  if (group) {
    ranges = group->members;
  } else {
    for (std::size_t i = 0; i < model.tensor_count(); ++i) ranges.push_back({i, 0, model.tensor(i).element_count()});
  }
  std::erase_if(ranges, [](const TensorRange& r) { return r.size() == 0; });
  if (ranges.empty()) fail(ErrorCode::EmptySelection, "nothing to analyse");

  unsigned min_width = 32;
  for (const auto& r : ranges) min_width = std::min(min_width, element_bit_width(model.tensor(r.tensor).dtype));

  std::vector<Accumulator> per_range;
  per_range.reserve(ranges.size());
  for (const auto& r : ranges) per_range.emplace_back(element_bit_width(model.tensor(r.tensor).dtype), entropy_planes);

  parallel_for(ranges.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = ranges[i];
      const DType dtype = model.tensor(r.tensor).dtype;
      const auto data = model.tensor_data(r.tensor);
      for (std::uint64_t e = r.begin; e < r.end; ++e) per_range[i].add(element_bits(data, dtype, e));
    }
  });

  StatsReport report;
  report.scope = group ? group->id : "model";
  Accumulator total(min_width, entropy_planes);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const auto& acc = per_range[i];
    report.tensors.push_back(finish(model.tensor(ranges[i].tensor).name, acc));
    total.elements += acc.elements;
    for (unsigned b = 0; b < total.planes; ++b) total.ones[b] += acc.ones[b];
    // Fold the finer histogram onto the aggregate's symbol width.
    const std::uint64_t fold = low_mask(total.entropy_planes);
    for (std::size_t s = 0; s < acc.histogram.size(); ++s) total.histogram[s & fold] += acc.histogram[s];
  }
  report.aggregate = finish("aggregate", total);
  return report;
}

nlohmann::ordered_json stats_to_json(const StatsReport& report) {
  auto selection = [](const SelectionStats& s) {
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["width"] = s.width;
    j["elements"] = s.elements;
    nlohmann::ordered_json planes = nlohmann::ordered_json::array();
    for (const auto& p : s.planes) {
      planes.push_back({{"offset", p.offset},
                        {"ones", p.ones},
                        {"total", p.total},
                        {"ones_fraction", p.ones_fraction()},
                        {"chi_square", p.chi_square},
                        {"p_value", p.p_value}});
    }
    j["planes"] = std::move(planes);
    j["entropy_planes"] = s.entropy_planes;
    j["entropy_bits"] = s.entropy_bits;
    return j;
  };
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["scope"] = report.scope;
  j["aggregate"] = selection(report.aggregate);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const auto& t : report.tensors) tensors.push_back(selection(t));
  j["tensors"] = std::move(tensors);
  return j;
}

}  // namespace wsteg
