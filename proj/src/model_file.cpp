#include "wsteg/model_file.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "wsteg/error.hpp"
#include "wsteg/util.hpp"

namespace wsteg {

std::string_view format_name(FileFormat format) {
  return format == FileFormat::SAFETENSORS ? "safetensors" : "gguf";
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= static_cast<std::uint64_t>(d);
  return n;
}

namespace {

class VectorStore final : public ByteStore {
 public:
  explicit VectorStore(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}
  std::span<std::uint8_t> bytes() override { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class MappedStore final : public ByteStore {
 public:
  explicit MappedStore(const std::filesystem::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) fail(ErrorCode::IoError, "cannot open " + path.string());
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      fail(ErrorCode::IoError, "cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
      void* p = ::mmap(nullptr, size_, PROT_READ | PROT_WRITE, MAP_PRIVATE, fd, 0);
      if (p == MAP_FAILED) {
        ::close(fd);
        fail(ErrorCode::IoError, "cannot map " + path.string());
      }
      data_ = static_cast<std::uint8_t*>(p);
    }
    ::close(fd);
  }
  ~MappedStore() override {
    if (data_) ::munmap(data_, size_);
  }
  MappedStore(const MappedStore&) = delete;
  MappedStore& operator=(const MappedStore&) = delete;

  std::span<std::uint8_t> bytes() override { return {data_, size_}; }

 private:
  std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
};

}  // namespace

std::shared_ptr<ByteStore> ByteStore::from_vector(std::vector<std::uint8_t> bytes) {
  return std::make_shared<VectorStore>(std::move(bytes));
}

std::shared_ptr<ByteStore> ByteStore::map_file(const std::filesystem::path& path) {
  return std::make_shared<MappedStore>(path);
}

ModelFile::ModelFile(FileFormat format, std::vector<TensorRecord> tensors,
                     std::map<std::string, std::string> metadata, std::shared_ptr<ByteStore> store)
    : format_(format),
      tensors_(std::move(tensors)),
      metadata_(std::move(metadata)),
      store_(std::move(store)),
      replaced_(tensors_.size()) {}

ModelFile ModelFile::clone() const {
  auto src = store_->bytes();
  ModelFile copy(format_, tensors_, metadata_,
                 ByteStore::from_vector(std::vector<std::uint8_t>(src.begin(), src.end())));
  copy.replaced_ = replaced_;
  return copy;
}

std::optional<std::size_t> ModelFile::find(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  return std::nullopt;
}

std::uint64_t ModelFile::total_param_count() const {
  return std::accumulate(tensors_.begin(), tensors_.end(), std::uint64_t{0},
                         [](std::uint64_t acc, const TensorRecord& t) { return acc + t.element_count(); });
}

std::span<const std::uint8_t> ModelFile::tensor_data(std::size_t i) const {
  if (replaced_.at(i)) return *replaced_[i];
  const auto& t = tensors_[i];
  return store_->bytes().subspan(t.data_offset, t.data_length);
}

std::span<std::uint8_t> ModelFile::mutable_tensor_data(std::size_t i) {
  if (replaced_.at(i)) return *replaced_[i];
  const auto& t = tensors_[i];
  return store_->bytes().subspan(t.data_offset, t.data_length);
}

void ModelFile::replace_tensor(std::size_t i, DType dtype, std::vector<std::uint8_t> data) {
  auto& t = tensors_.at(i);
  if (data.size() != storage_bytes(dtype, t.element_count()))
    fail(ErrorCode::IncompatibleShape, "replacement data size does not match tensor " + t.name);
  t.dtype = dtype;
  t.data_offset = 0;
  t.data_length = data.size();
  replaced_[i] = std::move(data);
}

void ModelFile::widen_to_f32(std::size_t i) {
  const auto& t = tensors_.at(i);
  if (t.dtype == DType::F32) return;
  if (!is_float(t.dtype)) fail(ErrorCode::UnsupportedDtype, "cannot widen quantized tensor " + t.name);
  const std::uint64_t n = t.element_count();
  std::vector<std::uint8_t> out(n * 4);
  auto src = tensor_data(i);
  for (std::uint64_t e = 0; e < n; ++e) store_value(out, DType::F32, e, load_value(src, t.dtype, e));
  replace_tensor(i, DType::F32, std::move(out));
}

namespace detail {

void check_tensor_layout(std::vector<TensorRecord>& tensors, std::uint64_t region_begin,
                         std::uint64_t region_end) {
  std::vector<std::size_t> order(tensors.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (t.data_offset < region_begin || t.data_offset > region_end ||
        t.data_length > region_end - t.data_offset)
      fail(ErrorCode::MalformedHeader, "tensor " + t.name + " lies outside the data region");
    if (t.data_length != storage_bytes(t.dtype, t.element_count()))
      fail(ErrorCode::MalformedHeader, "tensor " + t.name + " byte length does not match its shape");
    if (is_quantized(t.dtype) && t.element_count() % kQuantBlockSize != 0)
      fail(ErrorCode::MalformedHeader, "quantized tensor " + t.name + " is not a whole number of blocks");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tensors[a].data_offset < tensors[b].data_offset;
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& prev = tensors[order[k - 1]];
    const auto& cur = tensors[order[k]];
    if (prev.data_length > 0 && cur.data_length > 0 &&
        prev.data_offset + prev.data_length > cur.data_offset)
      fail(ErrorCode::OverlappingTensors, "tensors " + prev.name + " and " + cur.name + " overlap");
  }
  std::set<std::string_view> names;
  for (const auto& t : tensors)
    if (!names.insert(t.name).second) fail(ErrorCode::MalformedHeader, "duplicate tensor name " + t.name);
}

}  // namespace detail

ModelFile parse_model(std::shared_ptr<ByteStore> store, std::optional<FileFormat> format_hint) {
  auto bytes = store->bytes();
  if (bytes.empty()) fail(ErrorCode::MalformedHeader, "empty input");
  FileFormat format;
  if (format_hint) {
    format = *format_hint;
  } else if (bytes.size() >= 4 && std::memcmp(bytes.data(), "GGUF", 4) == 0) {
    format = FileFormat::GGUF;
  } else if (bytes.size() >= 9 && bytes[8] == '{') {
    format = FileFormat::SAFETENSORS;
  } else {
    fail(ErrorCode::MalformedHeader, "unrecognized file magic");
  }
  return format == FileFormat::GGUF ? detail::parse_gguf(std::move(store))
                                    : detail::parse_safetensors(std::move(store));
}

ModelFile parse_model(std::vector<std::uint8_t> bytes, std::optional<FileFormat> format_hint) {
  return parse_model(ByteStore::from_vector(std::move(bytes)), format_hint);
}

ModelFile load_model(const std::filesystem::path& path, std::optional<FileFormat> format_hint) {
  return parse_model(ByteStore::map_file(path), format_hint);
}

namespace {

void check_writable(const ModelFile& model) {
  if (model.format() != FileFormat::SAFETENSORS)
    fail(ErrorCode::UnsupportedWriteFormat, "only safetensors output is supported");
  for (const auto& t : model.tensors())
    if (!is_float(t.dtype))
      fail(ErrorCode::UnsupportedDtype,
           "tensor " + t.name + " has dtype " + std::string(dtype_name(t.dtype)) +
               ", which safetensors cannot store");
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

void stream_model(const ModelFile& model, std::ostream& out) {
  const std::string header = detail::safetensors_header(model);
  write_u64_le(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    auto data = model.tensor_data(i);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  }
}

}  // namespace

std::vector<std::uint8_t> write_model(const ModelFile& model) {
  check_writable(model);
  const std::string header = detail::safetensors_header(model);
  std::vector<std::uint8_t> out;
  std::uint64_t total = 8 + header.size();
  for (const auto& t : model.tensors()) total += t.data_length;
  out.reserve(total);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((header.size() >> (8 * i)) & 0xFF));
  out.insert(out.end(), header.begin(), header.end());
  for (std::size_t i = 0; i < model.tensor_count(); ++i) {
    auto data = model.tensor_data(i);
    out.insert(out.end(), data.begin(), data.end());
  }
  return out;
}

void save_model(const ModelFile& model, const std::filesystem::path& path) {
  check_writable(model);
  atomic_write(path, [&](std::ostream& out) { stream_model(model, out); });
}

}  // namespace wsteg
