#include "fairdiff/params.hpp"

#include <algorithm>

#include "fairdiff/errors.hpp"

namespace fairdiff {

std::size_t ParamLayout::add(std::string name, std::size_t rows, std::size_t cols) {
  if (find(name)) throw ConfigError("duplicate parameter segment '" + name + "'");
  segments_.push_back({std::move(name), total_, rows, cols});
  total_ += rows * cols;
  return segments_.size() - 1;
}

std::optional<std::size_t> ParamLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  return std::nullopt;
}

const ParamSegment& ParamLayout::at(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw IndexError("no parameter segment named '" + std::string(name) + "'");
  return segments_[*idx];
}

std::vector<unsigned char> segment_mask(const ParamLayout& layout, std::span<const std::string> names) {
  std::vector<unsigned char> mask(layout.total(), 0);
  for (const auto& name : names) {
    const auto& seg = layout.at(name);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.size(), 1);
  }
  return mask;
}

}  // namespace fairdiff
