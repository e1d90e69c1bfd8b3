#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wsteg/model_file.hpp"

namespace wsteg {

enum class GroupingStrategy { MODEL, NAME, LAYER, MATRIX };

std::string_view strategy_name(GroupingStrategy strategy);
std::optional<GroupingStrategy> strategy_from_name(std::string_view name);

struct TensorRange {
  std::size_t tensor = 0;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t size() const { return end - begin; }
  friend bool operator==(const TensorRange&, const TensorRange&) = default;
};

// An ordered selection of model elements: ranges in file order, elements
// row-major within each range.
struct ParameterGroup {
  std::string id;
  GroupingStrategy strategy = GroupingStrategy::MODEL;
  std::vector<TensorRange> members;
  std::optional<int> layer_index;
  // Pattern the group was resolved with (empty for MODEL/MATRIX groups).
  std::string layer_pattern;

  std::uint64_t size() const;
};

struct ElementLocation {
  std::size_t tensor = 0;
  std::uint64_t element = 0;
  friend bool operator==(const ElementLocation&, const ElementLocation&) = default;
};

ParameterGroup whole_tensor_group(const ModelFile& model, std::size_t tensor);

ElementLocation locate(const ParameterGroup& group, std::uint64_t index);

// Real-valued access in group order. Reads dequantize quantized elements;
// writes round to the tensor's float dtype and reject quantized tensors.
float read_element(const ModelFile& model, const ParameterGroup& group, std::uint64_t index);
void write_element(ModelFile& model, const ParameterGroup& group, std::uint64_t index, float value);

// Raw integer-code access for quantized tensors.
int read_code(const ModelFile& model, const ParameterGroup& group, std::uint64_t index);
void write_code(ModelFile& model, const ParameterGroup& group, std::uint64_t index, int code);

// Sequential walk over a group's elements without per-step range lookup.
class GroupCursor {
 public:
  explicit GroupCursor(const ParameterGroup& group);

  bool done() const { return member_ >= group_->members.size(); }
  ElementLocation location() const { return {group_->members[member_].tensor, element_}; }
  void next();

 private:
  void skip_empty();

  const ParameterGroup* group_;
  std::size_t member_ = 0;
  std::uint64_t element_ = 0;
};

}  // namespace wsteg
