#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "wsteg/defense.hpp"
#include "wsteg/embed.hpp"
#include "wsteg/target.hpp"

using namespace wsteg;
using namespace wsteg::testing;

namespace {

ModelFile f32_model(const std::vector<float>& values) {
  return parse_model(safetensors_bytes({{"w", "F32", {static_cast<std::int64_t>(values.size())}, f32_bytes(values)}}));
}

ModelFile pattern_model(const std::vector<std::uint32_t>& patterns) {
  std::vector<float> v;
  for (auto p : patterns) v.push_back(f32_from_bits(p));
  return f32_model(v);
}

}  // namespace

TEST(Sanitize, WidthChecks) {
  ModelFile m = f32_model({1.0f});
  EXPECT_WSTEG_ERROR(sanitize(m, 0, 1), ErrorCode::BadWidth);
  EXPECT_WSTEG_ERROR(sanitize(m, 32, 1), ErrorCode::BadWidth);
  ModelSpec spec;
  spec.dtype = DType::F16;
  ModelFile h = synthetic_model(spec, 1);
  EXPECT_WSTEG_ERROR(sanitize(h, 16, 1), ErrorCode::BadWidth);
  EXPECT_NO_THROW(sanitize(h, 15, 1));
  ModelFile q = quantize_model(synthetic_model({}, 1), Scheme::Q8_0);
  EXPECT_WSTEG_ERROR(sanitize(q, 1, 1), ErrorCode::UnsupportedDtype);
}

TEST(Sanitize, SingleBitTouchesOnlyLastMantissaBit) {
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    ModelFile m = f32_model({1.0f});
    sanitize(m, 1, seed);
    const auto p = load_pattern(m.tensor_data(0), DType::F32, 0);
    EXPECT_TRUE(p == 0x3F800000u || p == 0x3F800001u);
  }
}

TEST(Sanitize, NeverAltersBitsAbovePlaneK) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    ModelSpec spec;
    spec.elements_per_tensor = 1024;
    spec.dtype = t % 3 == 0 ? DType::F16 : (t % 3 == 1 ? DType::BF16 : DType::F32);
    const ModelFile orig = synthetic_model(spec, rng());
    const unsigned k = 1 + static_cast<unsigned>(rng() % 15);
    ModelFile m = orig.clone();
    sanitize(m, k, rng());
    std::uint64_t changed = 0;
    for (std::size_t i = 0; i < m.tensor_count(); ++i)
      for (std::uint64_t e = 0; e < m.tensor(i).element_count(); ++e) {
        const auto a = load_pattern(orig.tensor_data(i), m.tensor(i).dtype, e);
        const auto b = load_pattern(m.tensor_data(i), m.tensor(i).dtype, e);
        ASSERT_EQ(a >> k, b >> k);
        changed += a != b;
      }
    EXPECT_GT(changed, 0u);
  }
}

TEST(Sanitize, IdempotentForFixedSeedAndDeterministic) {
  const ModelFile orig = synthetic_model({}, 4);
  ModelFile once = orig.clone();
  sanitize(once, 10, 77);
  ModelFile twice = once.clone();
  sanitize(twice, 10, 77);
  EXPECT_TRUE(same_tensor_bytes(once, twice));
  ModelFile other = orig.clone();
  sanitize(other, 10, 78);
  EXPECT_FALSE(same_tensor_bytes(once, other));
}

TEST(Sanitize, DestroysPayloadAtOrBelowPlaneK) {
  std::mt19937_64 rng(5);
  int destroyed = 0;
  for (int t = 0; t < 100; ++t) {
    const unsigned n = 1 + static_cast<unsigned>(rng() % 8);
    const unsigned k = n + static_cast<unsigned>(rng() % 3);
    ModelFile m = synthetic_model({}, rng());
    const auto raw = random_bytes(64, rng());
    const EmbedManifest man = embed_general(m, resolve_group(m, "model"), prepare_payload(raw, n, 0));
    sanitize(m, k, rng());
    try {
      extract(m, man);
    } catch (const ChecksumMismatchError&) {
      ++destroyed;
    }
  }
  EXPECT_GE(destroyed, 99);
}

TEST(Sanitize, PayloadAbovePlaneKSurvives) {
  ModelFile m = synthetic_model({}, 6);
  const auto raw = random_bytes(256, 9);
  EmbedOptions opt;
  opt.plane_offset = 10;
  const EmbedManifest man = embed_general(m, resolve_group(m, "model"), prepare_payload(raw, 2, 0), opt);
  sanitize(m, 10, 1);
  EXPECT_EQ(extract(m, man), raw);
  sanitize(m, 11, 1);
  EXPECT_THROW(extract(m, man), ChecksumMismatchError);
}

TEST(LsbStats, ConstantPlane) {
  const StatsReport r = lsb_stats(f32_model(std::vector<float>(1000, 1.0f)));
  const PlaneStats& p0 = r.aggregate.planes[0];
  EXPECT_EQ(p0.ones_fraction(), 0.0);
  EXPECT_EQ(p0.chi_square, 1000.0);
  EXPECT_LT(p0.p_value, 1e-100);
  EXPECT_EQ(r.aggregate.entropy_bits, 0.0);
  EXPECT_EQ(r.aggregate.planes.size(), 16u);
  EXPECT_EQ(r.scope, "model");
}

TEST(LsbStats, UniformRandomPatternsLookFair) {
  std::mt19937_64 rng(7);
  std::vector<std::uint32_t> pats(200000);
  for (auto& p : pats) p = static_cast<std::uint32_t>(rng()) & 0x3FFFFFFFu;  // keep clear of NaN/inf
  const StatsReport r = lsb_stats(pattern_model(pats));
  for (const auto& p : r.aggregate.planes) {
    EXPECT_NEAR(p.ones_fraction(), 0.5, 0.01);
    // 1-dof chi-square above 20 has probability below 1e-5 under the null.
    EXPECT_LT(p.chi_square, 20.0);
  }
  EXPECT_NEAR(r.aggregate.entropy_bits, 8.0, 0.01);
}

TEST(LsbStats, MatchesBruteForceBitCounts) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    ModelSpec spec;
    spec.elements_per_tensor = 256;
    spec.dtype = t % 2 ? DType::F16 : DType::F32;
    const ModelFile m = synthetic_model(spec, rng());
    const unsigned k = 1 + static_cast<unsigned>(rng() % 12);
    const StatsReport r = lsb_stats(m, std::nullopt, k);
    ASSERT_EQ(r.tensors.size(), m.tensor_count());
    const unsigned width = element_bit_width(spec.dtype);
    std::vector<std::uint64_t> ones(16, 0);
    std::map<std::uint32_t, std::uint64_t> hist;
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < m.tensor_count(); ++i) {
      const auto& ts = r.tensors[i];
      EXPECT_EQ(ts.name, m.tensor(i).name);
      EXPECT_EQ(ts.width, width);
      for (unsigned b = 0; b < 16; ++b) {
        std::uint64_t c = 0;
        for (std::uint64_t e = 0; e < m.tensor(i).element_count(); ++e)
          c += (load_pattern(m.tensor_data(i), spec.dtype, e) >> b) & 1u;
        EXPECT_EQ(ts.planes[b].ones, c);
        ones[b] += c;
      }
      for (std::uint64_t e = 0; e < m.tensor(i).element_count(); ++e, ++total)
        ++hist[load_pattern(m.tensor_data(i), spec.dtype, e) & ((1u << k) - 1)];
    }
    double h = 0;
    for (auto [sym, c] : hist) {
      const double p = static_cast<double>(c) / static_cast<double>(total);
      h -= p * std::log2(p);
    }
    EXPECT_NEAR(r.aggregate.entropy_bits, h, 1e-9);
    for (unsigned b = 0; b < 16; ++b) {
      const auto& p = r.aggregate.planes[b];
      EXPECT_EQ(p.ones, ones[b]);
      EXPECT_EQ(p.total, total);
      const double d = 2.0 * static_cast<double>(ones[b]) - static_cast<double>(total);
      EXPECT_NEAR(p.chi_square, d * d / static_cast<double>(total), 1e-9);
      EXPECT_GE(p.p_value, 0.0);
      EXPECT_LE(p.p_value, 1.0);
    }
  }
}

TEST(LsbStats, QuantizedCodesAndMixedWidths) {
  const ModelFile m = synthetic_model({}, 9);
  const ModelFile q = quantize_model(m, Scheme::Q4_0);
  const StatsReport r = lsb_stats(q, std::nullopt, 8);
  EXPECT_EQ(r.aggregate.width, 4u);
  EXPECT_EQ(r.aggregate.planes.size(), 4u);
  EXPECT_EQ(r.aggregate.entropy_planes, 4u);
  EXPECT_LE(r.aggregate.entropy_bits, 4.0);
  std::uint64_t ones0 = 0;
  for (std::size_t i = 0; i < q.tensor_count(); ++i)
    for (std::uint64_t e = 0; e < q.tensor(i).element_count(); ++e)
      ones0 += static_cast<std::uint64_t>(load_code(q.tensor_data(i), DType::Q4_0, e) & 1);
  EXPECT_EQ(r.aggregate.planes[0].ones, ones0);
}

TEST(LsbStats, GroupScopeEmptySelectionAndDeterminism) {
  const ModelFile m = synthetic_model({}, 10);
  const ParameterGroup g = resolve_group(m, "layer:1");
  const StatsReport a = lsb_stats(m, g);
  EXPECT_EQ(a.scope, "layer:1");
  EXPECT_EQ(a.aggregate.elements, g.size());
  EXPECT_EQ(stats_to_json(a), stats_to_json(lsb_stats(m, g)));
  ParameterGroup empty;
  empty.id = "none";
  EXPECT_WSTEG_ERROR(lsb_stats(m, empty), ErrorCode::EmptySelection);
  EXPECT_WSTEG_ERROR(lsb_stats(m, std::nullopt, 0), ErrorCode::BadWidth);
  EXPECT_WSTEG_ERROR(lsb_stats(m, std::nullopt, 17), ErrorCode::BadWidth);
}

TEST(LsbStats, JsonShape) {
  const auto j = stats_to_json(lsb_stats(synthetic_model({}, 11)));
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("scope"), "model");
  EXPECT_EQ(j.at("aggregate").at("planes").size(), 16u);
  for (const auto& p : j.at("aggregate").at("planes")) {
    EXPECT_GE(p.at("ones_fraction").get<double>(), 0.0);
    EXPECT_LE(p.at("ones_fraction").get<double>(), 1.0);
    EXPECT_GE(p.at("chi_square").get<double>(), 0.0);
  }
}
