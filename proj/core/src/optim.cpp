#include "fairdiff/optim.hpp"

#include <cmath>

#include "fairdiff/errors.hpp"

namespace fairdiff {

AdamW::AdamW(std::size_t size, AdamWOptions options, std::vector<unsigned char> mask)
    : options_(options), mask_(std::move(mask)), m_(size, 0.0), v_(size, 0.0) {
  if (mask_.empty()) mask_.assign(size, 1);
  if (mask_.size() != size) throw ShapeError("optimizer mask size mismatch");
  if (!(options_.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ShapeError("optimizer step size mismatch");
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = options_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask_[i]) continue;
    const double g = grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + options_.epsilon);
    params[i] -= lr * (update + options_.weight_decay * params[i]);
  }
}

}  // namespace fairdiff
