#pragma once

#include <vector>

namespace fairdiff {

/// One synthetic record: clean sample, context identifier, one class label per attribute.
struct LabeledSample {
  std::vector<double> x0;
  int context = 0;
  std::vector<int> labels;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

using Dataset = std::vector<LabeledSample>;

}  // namespace fairdiff
