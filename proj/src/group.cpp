#include "wsteg/group.hpp"

#include "wsteg/error.hpp"

namespace wsteg {

std::string_view strategy_name(GroupingStrategy strategy) {
  switch (strategy) {
    case GroupingStrategy::MODEL: return "model";
    case GroupingStrategy::NAME: return "name";
    case GroupingStrategy::LAYER: return "layer";
    case GroupingStrategy::MATRIX: return "matrix";
  }
  return "?";
}

std::optional<GroupingStrategy> strategy_from_name(std::string_view name) {
  if (name == "model") return GroupingStrategy::MODEL;
  if (name == "name") return GroupingStrategy::NAME;
  if (name == "layer") return GroupingStrategy::LAYER;
  if (name == "matrix") return GroupingStrategy::MATRIX;
  return std::nullopt;
}

std::uint64_t ParameterGroup::size() const {
  std::uint64_t n = 0;
  for (const auto& m : members) n += m.size();
  return n;
}

ParameterGroup whole_tensor_group(const ModelFile& model, std::size_t tensor) {
  ParameterGroup g;
  g.id = "matrix:" + model.tensor(tensor).name;
  g.strategy = GroupingStrategy::MATRIX;
  g.members.push_back({tensor, 0, model.tensor(tensor).element_count()});
  return g;
}

ElementLocation locate(const ParameterGroup& group, std::uint64_t index) {
  std::uint64_t remaining = index;
  for (const auto& m : group.members) {
    if (remaining < m.size()) return {m.tensor, m.begin + remaining};
    remaining -= m.size();
  }
  fail(ErrorCode::IndexOutOfGroup,
       "index " + std::to_string(index) + " outside group " + group.id + " of size " +
           std::to_string(group.size()));
}

float read_element(const ModelFile& model, const ParameterGroup& group, std::uint64_t index) {
  const auto loc = locate(group, index);
  return load_value(model.tensor_data(loc.tensor), model.tensor(loc.tensor).dtype, loc.element);
}

void write_element(ModelFile& model, const ParameterGroup& group, std::uint64_t index, float value) {
  const auto loc = locate(group, index);
  const DType dtype = model.tensor(loc.tensor).dtype;
  if (is_quantized(dtype))
    fail(ErrorCode::WriteToQuantizedDtype, "tensor " + model.tensor(loc.tensor).name + " is quantized");
  store_value(model.mutable_tensor_data(loc.tensor), dtype, loc.element, value);
}

int read_code(const ModelFile& model, const ParameterGroup& group, std::uint64_t index) {
  const auto loc = locate(group, index);
  return load_code(model.tensor_data(loc.tensor), model.tensor(loc.tensor).dtype, loc.element);
}

void write_code(ModelFile& model, const ParameterGroup& group, std::uint64_t index, int code) {
  const auto loc = locate(group, index);
  store_code(model.mutable_tensor_data(loc.tensor), model.tensor(loc.tensor).dtype, loc.element, code);
}

GroupCursor::GroupCursor(const ParameterGroup& group) : group_(&group) {
  if (!done()) element_ = group_->members[0].begin;
  skip_empty();
}

void GroupCursor::skip_empty() {
  while (member_ < group_->members.size() && element_ >= group_->members[member_].end) {
    ++member_;
    if (member_ < group_->members.size()) element_ = group_->members[member_].begin;
  }
}

void GroupCursor::next() {
  ++element_;
  skip_empty();
}

}  // namespace wsteg
