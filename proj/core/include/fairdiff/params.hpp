#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fairdiff {

/// A named rows x cols block inside a flat parameter vector (row-major).
struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

class ParamLayout {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  const std::vector<ParamSegment>& segments() const { return segments_; }
  std::size_t total() const { return total_; }

  std::optional<std::size_t> find(std::string_view name) const;
  const ParamSegment& at(std::string_view name) const;

  template <typename T>
  std::span<T> view(std::span<T> flat, std::string_view name) const {
    const auto& seg = at(name);
    return flat.subspan(seg.offset, seg.size());
  }

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;

 private:
  std::vector<ParamSegment> segments_;
  std::size_t total_ = 0;
};

/// Element mask over a flat parameter vector built from a set of segment names.
std::vector<unsigned char> segment_mask(const ParamLayout& layout, std::span<const std::string> names);

}  // namespace fairdiff
