#include <cstring>

#include "json.hpp"
#include "wsteg/error.hpp"
#include "wsteg/model_file.hpp"

namespace wsteg::detail {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kMaxHeaderBytes = 100u << 20;
constexpr std::uint64_t kMaxElements = 1ull << 48;

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t checked_u64(const ojson& v, const std::string& what) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(ErrorCode::MalformedHeader, what + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

}  // namespace

ModelFile parse_safetensors(std::shared_ptr<ByteStore> store) {
  auto bytes = store->bytes();
  if (bytes.size() < 8) fail(ErrorCode::MalformedHeader, "truncated safetensors length prefix");
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len < 2 || header_len > kMaxHeaderBytes || header_len > bytes.size() - 8)
    fail(ErrorCode::MalformedHeader, "safetensors header length out of bounds");

  const char* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  ojson header;
  try {
    header = ojson::parse(header_begin, header_begin + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("safetensors header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) fail(ErrorCode::MalformedHeader, "safetensors header must be an object");

  const std::uint64_t data_begin = 8 + header_len;
  const std::uint64_t data_end = bytes.size();
  std::map<std::string, std::string> metadata;
  std::vector<TensorRecord> tensors;

  for (auto it = header.begin(); it != header.end(); ++it) {
    const std::string& key = it.key();
    const ojson& entry = it.value();
    if (key == "__metadata__") {
      if (!entry.is_object()) fail(ErrorCode::MalformedHeader, "__metadata__ must be an object");
      for (auto m = entry.begin(); m != entry.end(); ++m) {
        if (!m.value().is_string()) fail(ErrorCode::MalformedHeader, "__metadata__ values must be strings");
        metadata[m.key()] = m.value().get<std::string>();
      }
      continue;
    }
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets"))
      fail(ErrorCode::MalformedHeader, "tensor entry " + key + " is missing fields");
    const auto& dtype_v = entry["dtype"];
    if (!dtype_v.is_string()) fail(ErrorCode::MalformedHeader, "dtype of " + key + " must be a string");
    const auto dtype = dtype_from_name(dtype_v.get<std::string>());
    if (!dtype || !is_float(*dtype))
      fail(ErrorCode::UnsupportedDtype, "tensor " + key + " has unsupported dtype " + dtype_v.get<std::string>());

    TensorRecord t;
    t.name = key;
    t.dtype = *dtype;
    const auto& shape = entry["shape"];
    if (!shape.is_array()) fail(ErrorCode::MalformedHeader, "shape of " + key + " must be an array");
    std::uint64_t count = 1;
    for (const auto& d : shape) {
      const std::uint64_t dim = checked_u64(d, "shape of " + key);
      if (dim != 0 && count > kMaxElements / dim) fail(ErrorCode::MalformedHeader, "shape of " + key + " too large");
      count *= dim;
      t.shape.push_back(static_cast<std::int64_t>(dim));
    }
    const auto& offs = entry["data_offsets"];
    if (!offs.is_array() || offs.size() != 2)
      fail(ErrorCode::MalformedHeader, "data_offsets of " + key + " must be a pair");
    const std::uint64_t begin = checked_u64(offs[0], "data_offsets of " + key);
    const std::uint64_t end = checked_u64(offs[1], "data_offsets of " + key);
    if (end < begin || end > data_end - data_begin)
      fail(ErrorCode::MalformedHeader, "data_offsets of " + key + " out of bounds");
    t.data_offset = data_begin + begin;
    t.data_length = end - begin;
    tensors.push_back(std::move(t));
  }

  check_tensor_layout(tensors, data_begin, data_end);
  return ModelFile(FileFormat::SAFETENSORS, std::move(tensors), std::move(metadata), std::move(store));
}

std::string safetensors_header(const ModelFile& model) {
  ojson header = ojson::object();
  if (!model.metadata().empty()) {
    ojson meta = ojson::object();
    for (const auto& [k, v] : model.metadata()) meta[k] = v;
    header["__metadata__"] = std::move(meta);
  }
  std::uint64_t offset = 0;
  for (const auto& t : model.tensors()) {
    ojson entry = ojson::object();
    entry["dtype"] = std::string(dtype_name(t.dtype));
    entry["shape"] = t.shape;
    entry["data_offsets"] = {offset, offset + t.data_length};
    offset += t.data_length;
    header[t.name] = std::move(entry);
  }
  std::string text = header.dump();
  while (text.size() % 8 != 0) text.push_back(' ');
  return text;
}

}  // namespace wsteg::detail
