#pragma once

#include <stdexcept>
#include <string>

namespace fairdiff {

/// Error categories. The CLI maps each category onto a distinct exit code.
enum class ErrorCategory {
  kConfig = 2,
  kArgument = 3,
  kIndex = 4,
  kShape = 5,
  kResource = 6,
  kTraining = 7,
  kIo = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::kConfig, what) {}
};
struct ArgumentError : Error {
  explicit ArgumentError(const std::string& what) : Error(ErrorCategory::kArgument, what) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& what) : Error(ErrorCategory::kIndex, what) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorCategory::kShape, what) {}
};
struct ResourceError : Error {
  explicit ResourceError(const std::string& what) : Error(ErrorCategory::kResource, what) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& what) : Error(ErrorCategory::kTraining, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::kIo, what) {}
};

const char* category_name(ErrorCategory category) noexcept;

}  // namespace fairdiff
