#include "fixtures.hpp"

#include <unistd.h>

#include <cstring>
#include <random>

#include "json.hpp"

namespace wsteg::testing {

std::vector<std::uint8_t> safetensors_bytes(const std::vector<FixtureTensor>& tensors,
                                            const std::map<std::string, std::string>& metadata) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    header[t.name] = {{"dtype", t.dtype}, {"shape", t.shape}, {"data_offsets", {offset, offset + t.data.size()}}};
    offset += t.data.size();
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(8);
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(len >> (8 * i));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : tensors) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

std::vector<std::uint8_t> f32_bytes(const std::vector<float>& values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.insert(out.end(), s.begin(), s.end());
}

}  // namespace

std::vector<std::uint8_t> gguf_bytes(const std::vector<GgufTensor>& tensors,
                                     const std::map<std::string, std::string>& string_kv, std::uint32_t alignment,
                                     bool write_alignment_key) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'G', 'G', 'U', 'F'});
  put<std::uint32_t>(out, 3);
  put<std::uint64_t>(out, tensors.size());
  put<std::uint64_t>(out, string_kv.size() + 1 + (write_alignment_key ? 1 : 0));
  for (const auto& [k, v] : string_kv) {
    put_string(out, k);
    put<std::uint32_t>(out, 8);
    put_string(out, v);
  }
  put_string(out, "tokenizer.ggml.scores");
  put<std::uint32_t>(out, 9);
  put<std::uint32_t>(out, 6);
  put<std::uint64_t>(out, 3);
  for (float f : {0.5f, -1.0f, 2.0f}) put<float>(out, f);
  if (write_alignment_key) {
    put_string(out, "general.alignment");
    put<std::uint32_t>(out, 4);
    put<std::uint32_t>(out, alignment);
  }
  std::uint64_t offset = 0;
  std::vector<std::uint64_t> offsets;
  for (const auto& t : tensors) {
    put_string(out, t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ne.size()));
    for (auto d : t.ne) put<std::uint64_t>(out, d);
    put<std::uint32_t>(out, t.ggml_type);
    put<std::uint64_t>(out, offset);
    offsets.push_back(offset);
    offset += (t.data.size() + alignment - 1) / alignment * alignment;
  }
  while (out.size() % alignment != 0) out.push_back(0);
  const std::size_t base = out.size();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    out.resize(base + offsets[i], 0);
    out.insert(out.end(), tensors[i].data.begin(), tensors[i].data.end());
  }
  return out;
}

ModelFile synthetic_model(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, spec.sigma);
  std::vector<FixtureTensor> tensors;
  auto make = [&](const std::string& name) {
    FixtureTensor t;
    t.name = name;
    t.dtype = std::string(dtype_name(spec.dtype));
    t.shape = {static_cast<std::int64_t>(spec.elements_per_tensor / 64), 64};
    if (spec.elements_per_tensor % 64 != 0) t.shape = {static_cast<std::int64_t>(spec.elements_per_tensor)};
    t.data.resize(storage_bytes(spec.dtype, spec.elements_per_tensor));
    for (std::uint64_t e = 0; e < spec.elements_per_tensor; ++e)
      store_value(t.data, spec.dtype, e, static_cast<float>(normal(rng)));
    tensors.push_back(std::move(t));
  };
  if (spec.with_embedding) make("model.embed.weight");
  for (unsigned l = 0; l < spec.layers; ++l)
    for (const auto& m : spec.matrices) make("model.layers." + std::to_string(l) + "." + m);
  return parse_model(safetensors_bytes(tensors));
}

std::vector<std::uint8_t> random_bytes(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

bool same_tensor_bytes(const ModelFile& a, const ModelFile& b) {
  if (a.tensor_count() != b.tensor_count()) return false;
  for (std::size_t i = 0; i < a.tensor_count(); ++i) {
    if (a.tensor(i).dtype != b.tensor(i).dtype) return false;
    const auto x = a.tensor_data(i);
    const auto y = b.tensor_data(i);
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size()) != 0) return false;
  }
  return true;
}

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "wsteg-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> gguf_from_model(const ModelFile& model) {
  std::vector<GgufTensor> out;
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    const auto& t = model.tensor(i);
    GgufTensor g;
    g.name = t.name;
    switch (t.dtype) {
      case DType::F32: g.ggml_type = 0; break;
      case DType::F16: g.ggml_type = 1; break;
      case DType::Q4_0: g.ggml_type = 2; break;
      case DType::Q8_0: g.ggml_type = 8; break;
      case DType::BF16: g.ggml_type = 30; break;
      default: throw std::invalid_argument("no ggml type for " + t.name);
    }
    for (auto it = t.shape.rbegin(); it != t.shape.rend(); ++it) g.ne.push_back(static_cast<std::uint64_t>(*it));
    const auto data = model.tensor_data(i);
    g.data.assign(data.begin(), data.end());
    out.push_back(std::move(g));
  }
  return gguf_bytes(out);
}

}  // namespace wsteg::testing
