#pragma once

#include <span>
#include <vector>

namespace fairdiff {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW over a flat parameter vector. Elements outside `mask` are never written.
class AdamW {
 public:
  AdamW(std::size_t size, AdamWOptions options, std::vector<unsigned char> mask = {});

  void step(std::span<double> params, std::span<const double> grad);

  long steps() const { return steps_; }
  const AdamWOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }

 private:
  AdamWOptions options_;
  std::vector<unsigned char> mask_;
  std::vector<double> m_;
  std::vector<double> v_;
  long steps_ = 0;
};

}  // namespace fairdiff
