#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/params.hpp"

namespace fairdiff {

enum class Activation { kTanh, kRelu, kSilu };

const char* to_string(Activation activation);

/// Small fully connected network with hand-written backward pass. Used for the
/// attribute classifiers and the frozen feature extractors.
class Mlp {
 public:
  struct Cache {
    std::vector<std::vector<double>> inputs;  // input of each layer
    std::vector<std::vector<double>> pre;     // pre-activation of each hidden layer
  };

  Mlp() = default;
  Mlp(std::vector<int> sizes, Activation activation, std::uint64_t seed, double init_gain = 1.0);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  Activation activation() const { return activation_; }
  std::uint64_t seed() const { return seed_; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  const ParamLayout& layout() const { return layout_; }

  void forward(std::span<const double> x, std::span<double> out, Cache* cache) const;
  std::vector<double> forward(std::span<const double> x) const;

  /// Accumulates into g_params (empty to skip) and overwrites g_x (empty to skip).
  void backward(const Cache& cache, std::span<const double> g_out, std::span<double> g_params,
                std::span<double> g_x) const;

  /// e.g. "mlp[4-16-2]/tanh/seed=7".
  std::string descriptor() const;

 private:
  std::vector<int> sizes_;
  Activation activation_ = Activation::kTanh;
  std::uint64_t seed_ = 0;
  ParamLayout layout_;
  std::vector<double> params_;
};

}  // namespace fairdiff
