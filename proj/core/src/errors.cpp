#include "fairdiff/errors.hpp"

namespace fairdiff {

const char* category_name(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::kConfig: return "configuration";
    case ErrorCategory::kArgument: return "argument";
    case ErrorCategory::kIndex: return "index";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kResource: return "resource";
    case ErrorCategory::kTraining: return "training";
    case ErrorCategory::kIo: return "io";
  }
  return "unknown";
}

}  // namespace fairdiff
