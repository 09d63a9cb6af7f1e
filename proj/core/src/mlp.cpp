#include "fairdiff/mlp.hpp"

#include <cmath>

#include "fairdiff/errors.hpp"
#include "fairdiff/rng.hpp"
#include "linalg.hpp"

namespace fairdiff {

const char* to_string(Activation activation) {
  switch (activation) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kSilu: return "silu";
  }
  return "unknown";
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kSilu: return detail::silu(x);
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::kTanh: {
      const double th = std::tanh(x);
      return 1.0 - th * th;
    }
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kSilu: return detail::silu_grad(x);
  }
  return 1.0;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, Activation activation, std::uint64_t seed, double init_gain)
    : sizes_(std::move(sizes)), activation_(activation), seed_(seed) {
  if (sizes_.size() < 2) throw ConfigError("an MLP needs at least input and output sizes");
  for (int s : sizes_) {
    if (s < 1) throw ConfigError("MLP layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layout_.add("w" + std::to_string(l), static_cast<std::size_t>(sizes_[l + 1]), static_cast<std::size_t>(sizes_[l]));
    layout_.add("b" + std::to_string(l), static_cast<std::size_t>(sizes_[l + 1]), 1);
  }
  params_.assign(layout_.total(), 0.0);
  Rng rng(derive_seed(seed, 0x3171));
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    rng.fill_normal(layout_.view(std::span<double>(params_), "w" + std::to_string(l)),
                    init_gain / std::sqrt(static_cast<double>(sizes_[l])));
  }
}

void Mlp::forward(std::span<const double> x, std::span<double> out, Cache* cache) const {
  if (x.size() != static_cast<std::size_t>(input_dim())) throw ShapeError("MLP input dimension mismatch");
  if (out.size() != static_cast<std::size_t>(output_dim())) throw ShapeError("MLP output dimension mismatch");
  const std::size_t layers = sizes_.size() - 1;
  if (cache) {
    cache->inputs.resize(layers);
    cache->pre.resize(layers > 0 ? layers - 1 : 0);
  }
  std::vector<double> cur(x.begin(), x.end()), next;
  const auto& segs = layout_.segments();
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& w = segs[2 * l];
    const auto& b = segs[2 * l + 1];
    next.assign(w.rows, 0.0);
    detail::matvec(params_.data() + w.offset, w.rows, w.cols, cur.data(), next.data());
    for (std::size_t i = 0; i < w.rows; ++i) next[i] += params_[b.offset + i];
    if (cache) cache->inputs[l] = cur;
    if (l + 1 < layers) {
      if (cache) cache->pre[l] = next;
      for (double& v : next) v = activate(activation_, v);
    }
    cur.swap(next);
  }
  std::copy(cur.begin(), cur.end(), out.begin());
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  std::vector<double> out(static_cast<std::size_t>(output_dim()));
  forward(x, out, nullptr);
  return out;
}

void Mlp::backward(const Cache& cache, std::span<const double> g_out, std::span<double> g_params,
                   std::span<double> g_x) const {
  const std::size_t layers = sizes_.size() - 1;
  const auto& segs = layout_.segments();
  std::vector<double> g(g_out.begin(), g_out.end()), g_in;
  for (std::size_t l = layers; l-- > 0;) {
    const auto& w = segs[2 * l];
    const auto& b = segs[2 * l + 1];
    if (!g_params.empty()) {
      detail::add_outer(g_params.data() + w.offset, w.rows, w.cols, g.data(), cache.inputs[l].data());
      for (std::size_t i = 0; i < w.rows; ++i) g_params[b.offset + i] += g[i];
    }
    if (l == 0 && g_x.empty()) break;
    g_in.assign(w.cols, 0.0);
    detail::matvec_t(params_.data() + w.offset, w.rows, w.cols, g.data(), g_in.data());
    if (l > 0) {
      const auto& pre = cache.pre[l - 1];
      for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] *= activate_grad(activation_, pre[i]);
    }
    g.swap(g_in);
  }
  if (!g_x.empty()) std::copy(g.begin(), g.end(), g_x.begin());
}

std::string Mlp::descriptor() const {
  std::string s = "mlp[";
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(sizes_[i]);
  }
  s += "]/";
  s += to_string(activation_);
  s += "/seed=" + std::to_string(seed_);
  return s;
}

}  // namespace fairdiff
