#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wsteg/dtype.hpp"
#include "wsteg/error.hpp"
#include "wsteg/model_file.hpp"

namespace wsteg::testing {

struct FixtureTensor {
  std::string name;
  std::string dtype;  // safetensors dtype string
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> data;
};

// Raw safetensors bytes; offsets are assigned contiguously in list order.
std::vector<std::uint8_t> safetensors_bytes(const std::vector<FixtureTensor>& tensors,
                                            const std::map<std::string, std::string>& metadata = {});

std::vector<std::uint8_t> f32_bytes(const std::vector<float>& values);

struct GgufTensor {
  std::string name;
  std::uint32_t ggml_type = 0;   // 0 F32, 1 F16, 2 Q4_0, 8 Q8_0, 30 BF16
  std::vector<std::uint64_t> ne;  // fastest-varying dimension first
  std::vector<std::uint8_t> data;
};

// Minimal GGUF v3 writer: string and u32 metadata plus one array entry.
std::vector<std::uint8_t> gguf_bytes(const std::vector<GgufTensor>& tensors,
                                     const std::map<std::string, std::string>& string_kv = {},
                                     std::uint32_t alignment = 32, bool write_alignment_key = false);

// The same tensors (F32/F16/BF16/Q8_0/Q4_0) re-serialized as GGUF.
std::vector<std::uint8_t> gguf_from_model(const ModelFile& model);

struct ModelSpec {
  unsigned layers = 2;
  std::vector<std::string> matrices{"attn.q.weight", "attn.k.weight", "mlp.up.weight"};
  std::uint64_t elements_per_tensor = 4096;
  DType dtype = DType::F32;
  double sigma = 0.02;
  bool with_embedding = true;  // adds a layer-less "embed.weight" first
};

// Seeded Gaussian weights named "model.layers.<i>.<matrix>".
ModelFile synthetic_model(const ModelSpec& spec, std::uint64_t seed);

std::vector<std::uint8_t> random_bytes(std::size_t n, std::uint64_t seed);

// Byte-for-byte equality of every tensor's stored data.
bool same_tensor_bytes(const ModelFile& a, const ModelFile& b);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace wsteg::testing

// Expects `stmt` to throw wsteg::Error carrying `expected_code`.
#define EXPECT_WSTEG_ERROR(stmt, expected_code)                                              \
  do {                                                                                       \
    try {                                                                                    \
      stmt;                                                                                  \
      ADD_FAILURE() << "expected " << ::wsteg::error_code_name(expected_code) << ", nothing thrown"; \
    } catch (const ::wsteg::Error& e_) {                                                     \
      EXPECT_EQ(e_.code(), expected_code) << e_.what();                                      \
    }                                                                                        \
  } while (0)
