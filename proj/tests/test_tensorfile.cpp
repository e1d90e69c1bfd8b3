#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "json.hpp"
#include "wsteg/group.hpp"
#include "wsteg/model_file.hpp"
#include "wsteg/quant.hpp"
#include "wsteg/target.hpp"
#include "wsteg/util.hpp"

using namespace wsteg;
using namespace wsteg::testing;

namespace {

std::vector<std::uint8_t> minimal_file() {
  return safetensors_bytes({{"t", "F32", {2}, f32_bytes({1.0f, 2.0f})}});
}

std::uint64_t header_len(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[i];
  return n;
}

}  // namespace

TEST(Safetensors, MinimalFileParses) {
  const auto bytes = minimal_file();
  const std::string expected_header = R"({"t":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
  ASSERT_EQ(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(header_len(bytes))), expected_header);

  const ModelFile m = parse_model(bytes);
  EXPECT_EQ(m.format(), FileFormat::SAFETENSORS);
  ASSERT_EQ(m.tensor_count(), 1u);
  EXPECT_EQ(m.tensor(0).name, "t");
  EXPECT_EQ(m.tensor(0).element_count(), 2u);
  EXPECT_EQ(m.total_param_count(), 2u);
  EXPECT_EQ(load_value(m.tensor_data(0), DType::F32, 1), 2.0f);
}

TEST(Safetensors, ParseDoesNotCopyTensorData) {
  auto store = ByteStore::from_vector(minimal_file());
  const ModelFile m = parse_model(store);
  EXPECT_EQ(m.tensor_data(0).data(), store->bytes().data() + m.tensor(0).data_offset);
}

TEST(Safetensors, RoundTripKeepsTensorBytes) {
  const ModelFile m = parse_model(minimal_file());
  const ModelFile again = parse_model(write_model(m));
  EXPECT_TRUE(same_tensor_bytes(m, again));
  EXPECT_EQ(write_model(m), write_model(again));
}

TEST(Safetensors, WriterLaysTensorsContiguously) {
  std::vector<FixtureTensor> ts = {{"a", "F32", {3}, f32_bytes({1, 2, 3})},
                                   {"b", "F16", {2}, std::vector<std::uint8_t>(4, 0x3C)},
                                   {"c", "BF16", {1, 2}, std::vector<std::uint8_t>(4, 0x40)}};
  const ModelFile m = parse_model(safetensors_bytes(ts, {{"format", "pt"}}));
  const auto out = write_model(m);
  const std::uint64_t len = header_len(out);
  EXPECT_EQ(len % 8, 0u);
  const auto header = nlohmann::ordered_json::parse(std::string(out.begin() + 8, out.begin() + 8 + static_cast<long>(len)));
  std::vector<std::string> keys;
  for (auto it = header.begin(); it != header.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"__metadata__", "a", "b", "c"}));
  EXPECT_EQ(header["a"]["data_offsets"], nlohmann::json::array({0, 12}));
  EXPECT_EQ(header["b"]["data_offsets"], nlohmann::json::array({12, 16}));
  EXPECT_EQ(header["c"]["data_offsets"], nlohmann::json::array({16, 20}));
  EXPECT_EQ(out.size(), 8 + len + 20);
  const ModelFile again = parse_model(out);
  EXPECT_EQ(again.metadata().at("format"), "pt");
}

TEST(Safetensors, DeclarationOrderIsPreserved) {
  std::vector<FixtureTensor> ts = {{"zeta", "F32", {1}, f32_bytes({1})}, {"alpha", "F32", {1}, f32_bytes({2})}};
  const ModelFile m = parse_model(safetensors_bytes(ts));
  EXPECT_EQ(m.tensor(0).name, "zeta");
  EXPECT_EQ(m.tensor(1).name, "alpha");
}

TEST(Safetensors, GgufModelCannotBeWritten) {
  const auto bytes = gguf_bytes({{"w", 0, {4}, f32_bytes({1, 2, 3, 4})}});
  const ModelFile m = parse_model(bytes);
  EXPECT_WSTEG_ERROR(write_model(m), ErrorCode::UnsupportedWriteFormat);
}

TEST(Safetensors, BadMagicIsMalformed) {
  std::vector<std::uint8_t> bytes = {'X', 'X', 'X', 'X', 0, 0, 0, 0, 0, 0};
  EXPECT_WSTEG_ERROR(parse_model(bytes), ErrorCode::MalformedHeader);
  EXPECT_WSTEG_ERROR(parse_model(std::vector<std::uint8_t>{}), ErrorCode::MalformedHeader);
}

TEST(Safetensors, UnsupportedDtypeRejected) {
  EXPECT_WSTEG_ERROR(parse_model(safetensors_bytes({{"t", "I64", {1}, std::vector<std::uint8_t>(8)}})),
                     ErrorCode::UnsupportedDtype);
}

TEST(Safetensors, OverlappingTensorsRejected) {
  nlohmann::ordered_json h;
  h["a"] = {{"dtype", "F32"}, {"shape", {2}}, {"data_offsets", {0, 8}}};
  h["b"] = {{"dtype", "F32"}, {"shape", {2}}, {"data_offsets", {4, 12}}};
  const std::string text = h.dump();
  std::vector<std::uint8_t> bytes(8);
  bytes[0] = static_cast<std::uint8_t>(text.size());
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.resize(bytes.size() + 12);
  EXPECT_WSTEG_ERROR(parse_model(bytes), ErrorCode::OverlappingTensors);
}

TEST(Safetensors, LengthMustMatchShape) {
  EXPECT_WSTEG_ERROR(parse_model(safetensors_bytes({{"t", "F32", {3}, f32_bytes({1, 2})}})), ErrorCode::MalformedHeader);
}

TEST(Safetensors, EveryTruncationIsRejected) {
  const auto bytes = safetensors_bytes({{"a", "F32", {4}, f32_bytes({1, 2, 3, 4})}, {"b", "F16", {2}, {0, 0x3C, 0, 0x40}}});
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    try {
      parse_model(prefix);
      ADD_FAILURE() << "prefix of " << cut << " bytes parsed";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedHeader) << cut;
    }
  }
}

TEST(Safetensors, FuzzedBytesNeverEscapeAsForeignExceptions) {
  const auto base = safetensors_bytes({{"a", "F32", {4}, f32_bytes({1, 2, 3, 4})}, {"b", "BF16", {2}, {0, 0x3F, 0, 0x40}}});
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3000; ++trial) {
    auto bytes = base;
    const int flips = 1 + static_cast<int>(rng() % 4);
    for (int f = 0; f < flips; ++f) bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    try {
      const ModelFile m = parse_model(bytes);
      for (std::size_t i = 0; i < m.tensor_count(); ++i) {
        const auto d = m.tensor_data(i);
        EXPECT_EQ(d.size(), m.tensor(i).data_length);
      }
    } catch (const Error&) {
    }
  }
}

TEST(Safetensors, FuzzedValidModelsRoundTrip) {
  std::mt19937_64 rng(5);
  const std::vector<std::string> dtypes = {"F32", "F16", "BF16"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<FixtureTensor> ts;
    const int count = static_cast<int>(rng() % 6);
    for (int i = 0; i < count; ++i) {
      FixtureTensor t;
      t.name = "t" + std::to_string(rng() % 1000) + "_" + std::to_string(i);
      t.dtype = dtypes[rng() % 3];
      const int rank = static_cast<int>(rng() % 3);
      std::uint64_t n = 1;
      for (int r = 0; r < rank; ++r) {
        t.shape.push_back(static_cast<std::int64_t>(rng() % 5));
        n *= static_cast<std::uint64_t>(t.shape.back());
      }
      t.data = random_bytes(n * (t.dtype == "F32" ? 4 : 2), rng());
      ts.push_back(std::move(t));
    }
    std::map<std::string, std::string> meta;
    if (rng() % 2) meta["k" + std::to_string(rng() % 10)] = "v";
    const ModelFile m = parse_model(safetensors_bytes(ts, meta));
    const auto written = write_model(m);
    const ModelFile again = parse_model(written);
    ASSERT_TRUE(same_tensor_bytes(m, again));
    EXPECT_EQ(again.metadata(), m.metadata());
    for (std::size_t i = 0; i < m.tensor_count(); ++i) {
      EXPECT_EQ(again.tensor(i).name, m.tensor(i).name);
      EXPECT_EQ(again.tensor(i).shape, m.tensor(i).shape);
    }
    EXPECT_EQ(write_model(again), written);
  }
}

TEST(Safetensors, TwoParsesGiveIdenticalElementStreams) {
  const ModelFile a = synthetic_model({}, 3);
  const auto bytes = write_model(a);
  const ModelFile x = parse_model(bytes);
  const ModelFile y = parse_model(bytes);
  const auto gx = make_groups(x, GroupingStrategy::MODEL).front();
  ASSERT_EQ(gx.size(), a.total_param_count());
  for (std::uint64_t i = 0; i < gx.size(); i += 97) EXPECT_EQ(f32_bits(read_element(x, gx, i)), f32_bits(read_element(y, gx, i)));
}

TEST(Gguf, F32TensorParses) {
  const auto bytes = gguf_bytes({{"w", 0, {3, 2}, f32_bytes({1, 2, 3, 4, 5, 6})}}, {{"general.name", "toy"}});
  const ModelFile m = parse_model(bytes);
  EXPECT_EQ(m.format(), FileFormat::GGUF);
  ASSERT_EQ(m.tensor_count(), 1u);
  EXPECT_EQ(m.tensor(0).dtype, DType::F32);
  EXPECT_EQ(m.tensor(0).shape, (std::vector<std::int64_t>{2, 3}));
  EXPECT_EQ(m.metadata().at("general.name"), "toy");
  EXPECT_EQ(m.metadata().at("tokenizer.ggml.scores"), "[array of 3]");
  EXPECT_EQ(load_value(m.tensor_data(0), DType::F32, 5), 6.0f);
  EXPECT_EQ(m.tensor(0).data_offset % 32, 0u);
}

TEST(Gguf, QuantizedTensorsAndAlignment) {
  std::array<float, 32> v{};
  for (int i = 0; i < 32; ++i) v[i] = static_cast<float>(i) / 10.0f - 1.0f;
  std::vector<std::uint8_t> q8(kQ8_0BlockBytes), q4(kQ4_0BlockBytes);
  encode_block(block_quantize(v, BlockScheme::Q8_0), q8);
  encode_block(block_quantize(v, BlockScheme::Q4_0), q4);
  const auto bytes = gguf_bytes({{"a", 8, {32}, q8}, {"b", 2, {32}, q4}, {"c", 1, {2}, {0, 0x3C, 0, 0xC0}}}, {}, 64, true);
  const ModelFile m = parse_model(bytes);
  ASSERT_EQ(m.tensor_count(), 3u);
  EXPECT_EQ(m.tensor(0).dtype, DType::Q8_0);
  EXPECT_EQ(m.tensor(1).dtype, DType::Q4_0);
  EXPECT_EQ(m.tensor(2).dtype, DType::F16);
  for (const auto& t : m.tensors()) EXPECT_EQ(t.data_offset % 64, 0u);
  EXPECT_EQ(m.metadata().at("general.alignment"), "64");
  EXPECT_NEAR(load_value(m.tensor_data(0), DType::Q8_0, 31), 2.1f, 0.01f);
  EXPECT_EQ(load_value(m.tensor_data(2), DType::F16, 1), -2.0f);
}

TEST(Gguf, RejectsUnsupportedTypeAndVersion) {
  EXPECT_WSTEG_ERROR(parse_model(gguf_bytes({{"w", 12, {256}, std::vector<std::uint8_t>(144)}})),
                     ErrorCode::UnsupportedDtype);
  auto bytes = gguf_bytes({{"w", 0, {1}, f32_bytes({1})}});
  bytes[4] = 2;
  EXPECT_WSTEG_ERROR(parse_model(bytes), ErrorCode::MalformedHeader);
}

TEST(Gguf, EveryTruncationIsRejected) {
  const auto bytes = gguf_bytes({{"w", 0, {4}, f32_bytes({1, 2, 3, 4})}}, {{"general.name", "x"}});
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    try {
      parse_model(prefix, FileFormat::GGUF);
      ADD_FAILURE() << "prefix of " << cut << " bytes parsed";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedHeader) << cut;
    }
  }
}

TEST(Gguf, FuzzedBytesOnlyRaiseToolkitErrors) {
  const auto base = gguf_bytes({{"w", 0, {4}, f32_bytes({1, 2, 3, 4})}, {"q", 8, {32}, std::vector<std::uint8_t>(34)}},
                               {{"general.name", "x"}});
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3000; ++trial) {
    auto bytes = base;
    for (int f = 0; f < 3; ++f) bytes[rng() % bytes.size()] = static_cast<std::uint8_t>(rng());
    try {
      (void)parse_model(bytes);
    } catch (const Error&) {
    }
  }
}

TEST(ElementAccess, ReadWriteAndBounds) {
  ModelFile m = parse_model(minimal_file());
  const ParameterGroup g = whole_tensor_group(m, 0);
  EXPECT_EQ(read_element(m, g, 1), 2.0f);
  write_element(m, g, 0, 0.0f);
  EXPECT_EQ(read_element(m, g, 0), 0.0f);
  EXPECT_WSTEG_ERROR(read_element(m, g, 2), ErrorCode::IndexOutOfGroup);
  EXPECT_WSTEG_ERROR(write_element(m, g, 2, 1.0f), ErrorCode::IndexOutOfGroup);
}

TEST(ElementAccess, GroupOrderFollowsMembers) {
  std::vector<FixtureTensor> ts = {{"a", "F32", {2}, f32_bytes({1, 2})}, {"b", "F16", {2, 1}, {0, 0x42, 0, 0x44}}};
  const ModelFile m = parse_model(safetensors_bytes(ts));
  ParameterGroup g;
  g.members = {{0, 1, 2}, {1, 0, 2}};
  EXPECT_EQ(g.size(), 3u);
  EXPECT_EQ(read_element(m, g, 0), 2.0f);
  EXPECT_EQ(read_element(m, g, 1), 3.0f);
  EXPECT_EQ(read_element(m, g, 2), 4.0f);
  std::vector<ElementLocation> seen;
  for (GroupCursor c(g); !c.done(); c.next()) seen.push_back(c.location());
  EXPECT_EQ(seen, (std::vector<ElementLocation>{{0, 1}, {1, 0}, {1, 1}}));
}

TEST(ElementAccess, F16WritesKeepWidth) {
  ModelFile m = parse_model(safetensors_bytes({{"h", "F16", {2}, {0, 0x3C, 0, 0x3C}}}));
  const ParameterGroup g = whole_tensor_group(m, 0);
  write_element(m, g, 1, -2.0f);
  EXPECT_EQ(m.tensor(0).dtype, DType::F16);
  EXPECT_EQ(load_pattern(m.tensor_data(0), DType::F16, 1), 0xC000u);
}

TEST(ElementAccess, QuantizedNeedsRawCodeAccess) {
  const ModelFile f = parse_model(safetensors_bytes({{"q", "F32", {32}, f32_bytes(std::vector<float>(32, 1.0f))}}));
  ModelFile q = quantize_model(f, Scheme::Q8_0);
  const ParameterGroup g = whole_tensor_group(q, 0);
  EXPECT_WSTEG_ERROR(write_element(q, g, 0, 0.5f), ErrorCode::WriteToQuantizedDtype);
  EXPECT_EQ(read_code(q, g, 3), 127);
  write_code(q, g, 3, -5);
  EXPECT_EQ(read_code(q, g, 3), -5);
  EXPECT_WSTEG_ERROR(write_code(q, g, 3, 200), ErrorCode::CodeOutOfRange);
}

TEST(ModelFileIo, MappedFilesAreCopyOnWrite) {
  TempDir dir;
  const auto path = dir / "m.safetensors";
  const auto bytes = minimal_file();
  atomic_write(path, std::span<const std::uint8_t>(bytes));
  ModelFile m = load_model(path);
  write_element(m, whole_tensor_group(m, 0), 0, 42.0f);
  EXPECT_EQ(read_element(m, whole_tensor_group(m, 0), 0), 42.0f);
  EXPECT_EQ(read_file(path), bytes);
}

TEST(ModelFileIo, SaveIsAtomicAndLeavesNoTemporaries) {
  TempDir dir;
  const ModelFile m = synthetic_model({}, 1);
  save_model(m, dir / "out.safetensors");
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir.path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1);
  EXPECT_EQ(read_file(dir / "out.safetensors"), write_model(m));
}

TEST(ModelFileIo, CloneIsIndependent) {
  ModelFile m = parse_model(minimal_file());
  ModelFile c = m.clone();
  write_element(c, whole_tensor_group(c, 0), 0, 9.0f);
  EXPECT_EQ(read_element(m, whole_tensor_group(m, 0), 0), 1.0f);
  EXPECT_EQ(read_element(c, whole_tensor_group(c, 0), 0), 9.0f);
}

TEST(ModelFileIo, WidenToF32PreservesValues) {
  ModelFile m = parse_model(safetensors_bytes({{"h", "BF16", {2}, {0x80, 0x3F, 0x01, 0xC0}}}));
  const float a = load_value(m.tensor_data(0), DType::BF16, 0);
  const float b = load_value(m.tensor_data(0), DType::BF16, 1);
  m.widen_to_f32(0);
  EXPECT_EQ(m.tensor(0).dtype, DType::F32);
  EXPECT_EQ(load_value(m.tensor_data(0), DType::F32, 0), a);
  EXPECT_EQ(load_value(m.tensor_data(0), DType::F32, 1), b);
}
