#include <cstring>
#include <sstream>

#include "wsteg/error.hpp"
#include "wsteg/model_file.hpp"

namespace wsteg::detail {

namespace {

enum GgufValueType : std::uint32_t {
  kU8 = 0, kI8 = 1, kU16 = 2, kI16 = 3, kU32 = 4, kI32 = 5, kF32 = 6,
  kBool = 7, kString = 8, kArray = 9, kU64 = 10, kI64 = 11, kF64 = 12,
};

// ggml type ids for the subset this reader accepts.
enum GgmlType : std::uint32_t { kGgmlF32 = 0, kGgmlF16 = 1, kGgmlQ4_0 = 2, kGgmlQ8_0 = 8, kGgmlBF16 = 30 };

constexpr std::uint64_t kMaxCount = 1ull << 32;
constexpr std::uint64_t kMaxElements = 1ull << 48;

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) fail(ErrorCode::MalformedHeader, "truncated GGUF header");
  }

  template <class T>
  T read() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string read_string() {
    const auto len = read<std::uint64_t>();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  void skip(std::uint64_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t scalar_size(std::uint32_t type) {
  switch (type) {
    case kU8: case kI8: case kBool: return 1;
    case kU16: case kI16: return 2;
    case kU32: case kI32: case kF32: return 4;
    case kU64: case kI64: case kF64: return 8;
    default: return 0;
  }
}

std::string read_scalar_text(Reader& r, std::uint32_t type) {
  std::ostringstream os;
  switch (type) {
    case kU8: os << static_cast<unsigned>(r.read<std::uint8_t>()); break;
    case kI8: os << static_cast<int>(r.read<std::int8_t>()); break;
    case kU16: os << r.read<std::uint16_t>(); break;
    case kI16: os << r.read<std::int16_t>(); break;
    case kU32: os << r.read<std::uint32_t>(); break;
    case kI32: os << r.read<std::int32_t>(); break;
    case kF32: os << r.read<float>(); break;
    case kBool: os << (r.read<std::uint8_t>() ? "true" : "false"); break;
    case kU64: os << r.read<std::uint64_t>(); break;
    case kI64: os << r.read<std::int64_t>(); break;
    case kF64: os << r.read<double>(); break;
    case kString: return r.read_string();
    default: fail(ErrorCode::MalformedHeader, "unknown GGUF value type " + std::to_string(type));
  }
  return os.str();
}

// Arrays are skimmed: their contents are skipped and summarized.
std::string read_value_text(Reader& r, std::uint32_t type) {
  if (type != kArray) return read_scalar_text(r, type);
  const auto elem_type = r.read<std::uint32_t>();
  const auto count = r.read<std::uint64_t>();
  if (count > kMaxCount) fail(ErrorCode::MalformedHeader, "GGUF array too long");
  if (elem_type == kString) {
    for (std::uint64_t i = 0; i < count; ++i) r.skip(r.read<std::uint64_t>());
  } else if (elem_type == kArray) {
    for (std::uint64_t i = 0; i < count; ++i) read_value_text(r, kArray);
  } else {
    const std::size_t sz = scalar_size(elem_type);
    if (sz == 0) fail(ErrorCode::MalformedHeader, "unknown GGUF array element type");
    r.skip(count * sz);
  }
  return "[array of " + std::to_string(count) + "]";
}

DType map_ggml_type(std::uint32_t t, const std::string& name) {
  switch (t) {
    case kGgmlF32: return DType::F32;
    case kGgmlF16: return DType::F16;
    case kGgmlBF16: return DType::BF16;
    case kGgmlQ8_0: return DType::Q8_0;
    case kGgmlQ4_0: return DType::Q4_0;
    default:
      fail(ErrorCode::UnsupportedDtype, "tensor " + name + " has unsupported ggml type " + std::to_string(t));
  }
}

}  // namespace

ModelFile parse_gguf(std::shared_ptr<ByteStore> store) {
  auto bytes = store->bytes();
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "GGUF", 4) != 0) fail(ErrorCode::MalformedHeader, "bad GGUF magic");
  r.skip(4);
  const auto version = r.read<std::uint32_t>();
  if (version != 3) fail(ErrorCode::MalformedHeader, "unsupported GGUF version " + std::to_string(version));
  const auto n_tensors = r.read<std::uint64_t>();
  const auto n_kv = r.read<std::uint64_t>();
  if (n_tensors > kMaxCount || n_kv > kMaxCount) fail(ErrorCode::MalformedHeader, "GGUF counts out of range");

  std::map<std::string, std::string> metadata;
  std::uint64_t alignment = 32;
  for (std::uint64_t i = 0; i < n_kv; ++i) {
    std::string key = r.read_string();
    const auto type = r.read<std::uint32_t>();
    if (key == "general.alignment" && type == kU32) {
      alignment = r.read<std::uint32_t>();
      if (alignment == 0 || (alignment & (alignment - 1)) != 0)
        fail(ErrorCode::MalformedHeader, "GGUF alignment must be a power of two");
      metadata[key] = std::to_string(alignment);
      continue;
    }
    metadata[std::move(key)] = read_value_text(r, type);
  }

  std::vector<TensorRecord> tensors;
  std::vector<std::uint64_t> rel_offsets;
  tensors.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n_tensors, 1 << 16)));
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    TensorRecord t;
    t.name = r.read_string();
    const auto n_dims = r.read<std::uint32_t>();
    if (n_dims == 0 || n_dims > 8) fail(ErrorCode::MalformedHeader, "tensor " + t.name + " has bad rank");
    std::vector<std::int64_t> ne(n_dims);
    std::uint64_t count = 1;
    for (auto& d : ne) {
      const auto dim = r.read<std::uint64_t>();
      if (dim != 0 && count > kMaxElements / dim) fail(ErrorCode::MalformedHeader, "tensor " + t.name + " too large");
      count *= dim;
      d = static_cast<std::int64_t>(dim);
    }
    // ggml lists the fastest-varying dimension first; store row-major order.
    t.shape.assign(ne.rbegin(), ne.rend());
    t.dtype = map_ggml_type(r.read<std::uint32_t>(), t.name);
    const auto offset = r.read<std::uint64_t>();
    if (offset % alignment != 0) fail(ErrorCode::MalformedHeader, "tensor " + t.name + " is misaligned");
    t.data_length = storage_bytes(t.dtype, count);
    rel_offsets.push_back(offset);
    tensors.push_back(std::move(t));
  }

  const std::uint64_t data_begin = (r.pos() + alignment - 1) / alignment * alignment;
  if (data_begin > bytes.size()) fail(ErrorCode::MalformedHeader, "GGUF data section missing");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (rel_offsets[i] > bytes.size() - data_begin)
      fail(ErrorCode::MalformedHeader, "tensor " + tensors[i].name + " lies outside the file");
    tensors[i].data_offset = data_begin + rel_offsets[i];
  }
  check_tensor_layout(tensors, data_begin, bytes.size());
  return ModelFile(FileFormat::GGUF, std::move(tensors), std::move(metadata), std::move(store));
}

}  // namespace wsteg::detail
