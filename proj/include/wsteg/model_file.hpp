#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wsteg/dtype.hpp"

namespace wsteg {

enum class FileFormat { SAFETENSORS, GGUF };

std::string_view format_name(FileFormat format);

struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::int64_t> shape;
  // Absolute offset into the backing bytes the model was parsed from.
  std::uint64_t data_offset = 0;
  std::uint64_t data_length = 0;

  std::uint64_t element_count() const;
};

// Owner of the bytes a ModelFile references. File-backed stores are private
// copy-on-write mappings, so element writes never reach the source file.
class ByteStore {
 public:
  virtual ~ByteStore() = default;
  virtual std::span<std::uint8_t> bytes() = 0;

  static std::shared_ptr<ByteStore> from_vector(std::vector<std::uint8_t> bytes);
  static std::shared_ptr<ByteStore> map_file(const std::filesystem::path& path);
};

// A parsed weight file. Tensor data stays in the backing store until a
// tensor is replaced wholesale (dtype change, quantization), at which point
// the model owns the new bytes. Move-only; use clone() for an independent copy.
class ModelFile {
 public:
  ModelFile(FileFormat format, std::vector<TensorRecord> tensors,
            std::map<std::string, std::string> metadata, std::shared_ptr<ByteStore> store);

  ModelFile(ModelFile&&) noexcept = default;
  ModelFile& operator=(ModelFile&&) noexcept = default;
  ModelFile(const ModelFile&) = delete;
  ModelFile& operator=(const ModelFile&) = delete;

  ModelFile clone() const;

  FileFormat format() const { return format_; }
  const std::vector<TensorRecord>& tensors() const { return tensors_; }
  const TensorRecord& tensor(std::size_t i) const { return tensors_.at(i); }
  std::size_t tensor_count() const { return tensors_.size(); }
  std::optional<std::size_t> find(std::string_view name) const;

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  std::map<std::string, std::string>& metadata() { return metadata_; }

  std::uint64_t total_param_count() const;

  std::span<const std::uint8_t> tensor_data(std::size_t i) const;
  std::span<std::uint8_t> mutable_tensor_data(std::size_t i);

  // Swap in new storage for tensor i. Shape is kept; data length must match
  // the dtype's storage size for the element count.
  void replace_tensor(std::size_t i, DType dtype, std::vector<std::uint8_t> data);

  // Widen a F16/BF16 tensor to F32 in place (values preserved exactly).
  void widen_to_f32(std::size_t i);

 private:
  FileFormat format_;
  std::vector<TensorRecord> tensors_;
  std::map<std::string, std::string> metadata_;
  std::shared_ptr<ByteStore> store_;
  std::vector<std::optional<std::vector<std::uint8_t>>> replaced_;
};

ModelFile parse_model(std::shared_ptr<ByteStore> store,
                      std::optional<FileFormat> format_hint = std::nullopt);
ModelFile parse_model(std::vector<std::uint8_t> bytes,
                      std::optional<FileFormat> format_hint = std::nullopt);
ModelFile load_model(const std::filesystem::path& path,
                     std::optional<FileFormat> format_hint = std::nullopt);

// Safetensors serialization. Tensors are laid out contiguously in model order.
std::vector<std::uint8_t> write_model(const ModelFile& model);
// Streams the serialized model to disk via a temporary file and rename.
void save_model(const ModelFile& model, const std::filesystem::path& path);

namespace detail {
ModelFile parse_safetensors(std::shared_ptr<ByteStore> store);
ModelFile parse_gguf(std::shared_ptr<ByteStore> store);
std::string safetensors_header(const ModelFile& model);
void check_tensor_layout(std::vector<TensorRecord>& tensors, std::uint64_t region_begin,
                         std::uint64_t region_end);
}  // namespace detail

}  // namespace wsteg
