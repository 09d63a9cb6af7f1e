#include "fairdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fairdiff/errors.hpp"
#include "fairdiff/rng.hpp"
#include "linalg.hpp"

namespace fairdiff {

using detail::add_outer;
using detail::matvec;
using detail::matvec_t;

const char* to_string(FinetuneTarget target) {
  switch (target) {
    case FinetuneTarget::kContextTable: return "context_table";
    case FinetuneTarget::kPrefix: return "prefix";
    case FinetuneTarget::kFullNetwork: return "full_network";
    case FinetuneTarget::kLowRankAdapter: return "low_rank_adapter";
  }
  return "unknown";
}

FinetuneTarget parse_finetune_target(std::string_view name) {
  if (name == "context_table" || name == "context_encoder") return FinetuneTarget::kContextTable;
  if (name == "prefix") return FinetuneTarget::kPrefix;
  if (name == "full_network") return FinetuneTarget::kFullNetwork;
  if (name == "low_rank_adapter" || name == "lora") return FinetuneTarget::kLowRankAdapter;
  throw ConfigError("unknown finetune target '" + std::string(name) + "'");
}

namespace {

constexpr const char* kNetworkSegments[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
constexpr const char* kAdapterSegments[] = {"lora_a1", "lora_b1", "lora_a2", "lora_b2", "lora_a3", "lora_b3"};

struct DenseRefs {
  const double* w;
  const double* b;
  const double* a;     // adapter up (rows x r), null when disabled
  const double* down;  // adapter down (r x cols)
  std::size_t rows, cols;
};

}  // namespace

void DenoiserModel::build_layout() {
  const auto& s = shape_;
  if (s.data_dim < 1 || s.num_contexts < 1 || s.token_dim < 1 || s.embed_dim < 1 || s.hidden < 1 ||
      s.time_dim < 0 || s.prefix_len < 0 || s.max_timestep < 1 || s.adapter_rank < 0) {
    throw ConfigError("invalid denoiser shape");
  }
  layout_ = ParamLayout{};
  const auto in = static_cast<std::size_t>(input_dim());
  const auto h = static_cast<std::size_t>(s.hidden);
  const auto d = static_cast<std::size_t>(s.data_dim);
  layout_.add("context_table", static_cast<std::size_t>(s.num_contexts + 1), static_cast<std::size_t>(s.token_dim));
  layout_.add("prefix", static_cast<std::size_t>(s.prefix_len), static_cast<std::size_t>(s.token_dim));
  layout_.add("encoder_w", static_cast<std::size_t>(s.embed_dim), static_cast<std::size_t>(encoder_input_dim()));
  layout_.add("encoder_b", static_cast<std::size_t>(s.embed_dim), 1);
  layout_.add("w1", h, in);
  layout_.add("b1", h, 1);
  layout_.add("w2", h, h);
  layout_.add("b2", h, 1);
  layout_.add("w3", d, h);
  layout_.add("b3", d, 1);
  if (s.adapter_rank > 0) {
    const auto r = static_cast<std::size_t>(s.adapter_rank);
    layout_.add("lora_a1", h, r);
    layout_.add("lora_b1", r, in);
    layout_.add("lora_a2", h, r);
    layout_.add("lora_b2", r, h);
    layout_.add("lora_a3", d, r);
    layout_.add("lora_b3", r, h);
  }
}

DenoiserModel DenoiserModel::create(const DenoiserShape& shape, std::uint64_t seed, std::span<const double> tokens) {
  DenoiserModel m;
  m.shape_ = shape;
  m.build_layout();
  m.params_.assign(m.layout_.total(), 0.0);
  Rng rng(derive_seed(seed, 0xde7015e));

  auto table = m.segment("context_table");
  const auto row_len = static_cast<std::size_t>(shape.token_dim);
  const auto ctx_len = static_cast<std::size_t>(shape.num_contexts) * row_len;
  if (!tokens.empty()) {
    if (tokens.size() != ctx_len) throw ShapeError("token initialisation has the wrong size");
    std::copy(tokens.begin(), tokens.end(), table.begin());
  } else {
    rng.fill_normal(table.first(ctx_len));
  }
  auto init_dense = [&](std::string_view name, double fan_in) {
    rng.fill_normal(m.segment(name), 1.0 / std::sqrt(fan_in));
  };
  init_dense("encoder_w", m.encoder_input_dim());
  init_dense("w1", m.input_dim());
  init_dense("w2", shape.hidden);
  init_dense("w3", shape.hidden);
  return m;
}

DenoiserModel DenoiserModel::with_adapter(int rank, std::uint64_t seed) const {
  if (rank < 1) throw ConfigError("adapter rank must be >= 1");
  DenoiserShape s = shape_;
  s.adapter_rank = rank;
  DenoiserModel m;
  m.shape_ = s;
  m.build_layout();
  m.params_.assign(m.layout_.total(), 0.0);
  for (const auto& seg : layout_.segments()) {
    if (seg.name.rfind("lora_", 0) == 0) continue;
    auto src = segment(seg.name);
    std::copy(src.begin(), src.end(), m.segment(seg.name).begin());
  }
  Rng rng(derive_seed(seed, 0x10a));
  rng.fill_normal(m.segment("lora_b1"), 1.0 / std::sqrt(static_cast<double>(input_dim())));
  rng.fill_normal(m.segment("lora_b2"), 1.0 / std::sqrt(static_cast<double>(s.hidden)));
  rng.fill_normal(m.segment("lora_b3"), 1.0 / std::sqrt(static_cast<double>(s.hidden)));
  m.prefix_enabled_ = prefix_enabled_;
  m.adapter_enabled_ = true;
  return m;
}

DenoiserModel DenoiserModel::from_parts(const DenoiserShape& shape, std::vector<double> params, bool prefix_enabled,
                                        bool adapter_enabled) {
  DenoiserModel m;
  m.shape_ = shape;
  m.build_layout();
  if (params.size() != m.layout_.total()) throw ShapeError("parameter blob does not match the denoiser shape");
  m.params_ = std::move(params);
  m.prefix_enabled_ = prefix_enabled;
  m.adapter_enabled_ = adapter_enabled && shape.adapter_rank > 0;
  return m;
}

DenoiserModel::Conditioning DenoiserModel::encode(int context, bool with_prefix) const {
  if (context < 0 || context > shape_.num_contexts) {
    throw IndexError("context " + std::to_string(context) + " out of range");
  }
  Conditioning c;
  c.context = context;
  c.with_prefix = with_prefix && shape_.prefix_len > 0;
  const auto tok = static_cast<std::size_t>(shape_.token_dim);
  c.input.assign(static_cast<std::size_t>(encoder_input_dim()), 0.0);
  auto table = segment("context_table");
  std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(context) * tok), tok,
              c.input.begin());
  if (c.with_prefix) {
    auto prefix = segment("prefix");
    std::copy(prefix.begin(), prefix.end(), c.input.begin() + static_cast<std::ptrdiff_t>(tok));
  }
  c.embed.assign(static_cast<std::size_t>(shape_.embed_dim), 0.0);
  const auto w = segment("encoder_w");
  const auto b = segment("encoder_b");
  matvec(w.data(), c.embed.size(), c.input.size(), c.input.data(), c.embed.data());
  for (std::size_t i = 0; i < c.embed.size(); ++i) c.embed[i] += b[i];
  return c;
}

void DenoiserModel::encode_backward(const Conditioning& cond, std::span<const double> g_embed,
                                    std::span<double> g_params) const {
  if (g_params.empty()) return;
  const auto& sw = layout_.at("encoder_w");
  const auto& sb = layout_.at("encoder_b");
  add_outer(g_params.data() + sw.offset, sw.rows, sw.cols, g_embed.data(), cond.input.data());
  for (std::size_t i = 0; i < sb.rows; ++i) g_params[sb.offset + i] += g_embed[i];
  std::vector<double> g_in(cond.input.size());
  matvec_t(params_.data() + sw.offset, sw.rows, sw.cols, g_embed.data(), g_in.data());
  const auto tok = static_cast<std::size_t>(shape_.token_dim);
  const auto& st = layout_.at("context_table");
  double* row = g_params.data() + st.offset + static_cast<std::size_t>(cond.context) * tok;
  for (std::size_t i = 0; i < tok; ++i) row[i] += g_in[i];
  if (cond.with_prefix) {
    const auto& sp = layout_.at("prefix");
    for (std::size_t i = 0; i < sp.size(); ++i) g_params[sp.offset + i] += g_in[tok + i];
  }
}

void DenoiserModel::time_features(int t, std::span<double> out) const {
  const double tau = static_cast<double>(t) / shape_.max_timestep;
  const std::size_t pairs = out.size() / 2;
  for (std::size_t k = 0; k < pairs; ++k) {
    const double freq = 0.5 * std::numbers::pi * static_cast<double>(1u << k);
    out[2 * k] = std::sin(freq * tau);
    out[2 * k + 1] = std::cos(freq * tau);
  }
  if (out.size() % 2 == 1) out.back() = tau;
}

void DenoiserModel::predict(std::span<const double> embed, std::span<const double> z, int t, std::span<double> eps,
                            EvalCache* cache) const {
  const auto d = static_cast<std::size_t>(shape_.data_dim);
  if (z.size() != d || eps.size() != d) throw ShapeError("denoiser input/output dimension mismatch");
  if (embed.size() != static_cast<std::size_t>(shape_.embed_dim)) throw ShapeError("embedding dimension mismatch");
  if (t < 1 || t > shape_.max_timestep) throw IndexError("denoiser timestep " + std::to_string(t) + " out of range");

  EvalCache local;
  EvalCache& c = cache ? *cache : local;
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto in = static_cast<std::size_t>(input_dim());
  const auto r = static_cast<std::size_t>(shape_.adapter_rank);
  const bool lora = adapter_enabled_ && r > 0;

  c.input.resize(in);
  std::copy(z.begin(), z.end(), c.input.begin());
  time_features(t, std::span<double>(c.input).subspan(d, static_cast<std::size_t>(shape_.time_dim)));
  std::copy(embed.begin(), embed.end(), c.input.begin() + static_cast<std::ptrdiff_t>(d + shape_.time_dim));

  const double* p = params_.data();
  auto off = [&](std::string_view name) { return p + layout_.at(name).offset; };

  auto dense = [&](const char* w, const char* b, const char* a, const char* bd, std::size_t rows, std::size_t cols,
                   const double* x, double* y, std::vector<double>& down) {
    matvec(off(w), rows, cols, x, y);
    const double* bias = off(b);
    for (std::size_t i = 0; i < rows; ++i) y[i] += bias[i];
    if (lora) {
      down.resize(r);
      matvec(off(bd), r, cols, x, down.data());
      matvec(off(a), rows, r, down.data(), y, true);
    }
  };

  c.pre1.resize(h);
  c.h1.resize(h);
  dense("w1", "b1", "lora_a1", "lora_b1", h, in, c.input.data(), c.pre1.data(), c.down1);
  for (std::size_t i = 0; i < h; ++i) c.h1[i] = detail::silu(c.pre1[i]);
  c.pre2.resize(h);
  c.h2.resize(h);
  dense("w2", "b2", "lora_a2", "lora_b2", h, h, c.h1.data(), c.pre2.data(), c.down2);
  for (std::size_t i = 0; i < h; ++i) c.h2[i] = detail::silu(c.pre2[i]);
  dense("w3", "b3", "lora_a3", "lora_b3", d, h, c.h2.data(), eps.data(), c.down3);
}

std::vector<double> DenoiserModel::predict(std::span<const double> embed, std::span<const double> z, int t) const {
  std::vector<double> eps(z.size());
  predict(embed, z, t, eps, nullptr);
  return eps;
}

void DenoiserModel::predict_backward(const EvalCache& c, std::span<const double> g_eps, std::span<double> g_params,
                                     std::span<double> g_z, std::span<double> g_embed) const {
  const auto d = static_cast<std::size_t>(shape_.data_dim);
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto in = static_cast<std::size_t>(input_dim());
  const auto r = static_cast<std::size_t>(shape_.adapter_rank);
  const bool lora = adapter_enabled_ && r > 0;
  const bool want_params = !g_params.empty();
  const double* p = params_.data();
  auto seg = [&](std::string_view name) -> const ParamSegment& { return layout_.at(name); };

  // Backward through one dense (+adapter) layer; returns gradient w.r.t. its input.
  auto dense_back = [&](const char* w, const char* b, const char* a, const char* bd, std::size_t rows,
                        std::size_t cols, const double* x, const std::vector<double>& down, const double* g,
                        double* g_x) {
    if (want_params) {
      add_outer(g_params.data() + seg(w).offset, rows, cols, g, x);
      double* gb = g_params.data() + seg(b).offset;
      for (std::size_t i = 0; i < rows; ++i) gb[i] += g[i];
    }
    matvec_t(p + seg(w).offset, rows, cols, g, g_x);
    if (lora) {
      std::vector<double> g_down(r);
      matvec_t(p + seg(a).offset, rows, r, g, g_down.data());
      if (want_params) {
        add_outer(g_params.data() + seg(a).offset, rows, r, g, down.data());
        add_outer(g_params.data() + seg(bd).offset, r, cols, g_down.data(), x);
      }
      matvec_t(p + seg(bd).offset, r, cols, g_down.data(), g_x, true);
    }
  };

  std::vector<double> g_h2(h), g_pre2(h), g_h1(h), g_pre1(h), g_in(in);
  dense_back("w3", "b3", "lora_a3", "lora_b3", d, h, c.h2.data(), c.down3, g_eps.data(), g_h2.data());
  for (std::size_t i = 0; i < h; ++i) g_pre2[i] = g_h2[i] * detail::silu_grad(c.pre2[i]);
  dense_back("w2", "b2", "lora_a2", "lora_b2", h, h, c.h1.data(), c.down2, g_pre2.data(), g_h1.data());
  for (std::size_t i = 0; i < h; ++i) g_pre1[i] = g_h1[i] * detail::silu_grad(c.pre1[i]);
  const bool need_input = !g_z.empty() || !g_embed.empty();
  if (!need_input && !want_params) return;
  if (need_input || lora) {
    dense_back("w1", "b1", "lora_a1", "lora_b1", h, in, c.input.data(), c.down1, g_pre1.data(), g_in.data());
  } else {
    add_outer(g_params.data() + seg("w1").offset, h, in, g_pre1.data(), c.input.data());
    double* gb = g_params.data() + seg("b1").offset;
    for (std::size_t i = 0; i < h; ++i) gb[i] += g_pre1[i];
  }
  if (!g_z.empty()) std::copy_n(g_in.begin(), d, g_z.begin());
  if (!g_embed.empty()) {
    const std::size_t base = d + static_cast<std::size_t>(shape_.time_dim);
    for (std::size_t i = 0; i < g_embed.size(); ++i) g_embed[i] += g_in[base + i];
  }
}

std::vector<std::string> DenoiserModel::network_segments() const {
  return {std::begin(kNetworkSegments), std::end(kNetworkSegments)};
}

std::vector<std::string> DenoiserModel::pretrain_segments() const {
  std::vector<std::string> names{"context_table", "encoder_w", "encoder_b"};
  for (const char* n : kNetworkSegments) names.emplace_back(n);
  return names;
}

std::vector<std::string> DenoiserModel::target_segments(FinetuneTarget target) const {
  switch (target) {
    case FinetuneTarget::kContextTable: return {"context_table", "encoder_w", "encoder_b"};
    case FinetuneTarget::kPrefix:
      if (shape_.prefix_len == 0) throw ConfigError("prefix finetuning needs prefix_len > 0");
      return {"prefix"};
    case FinetuneTarget::kFullNetwork: return network_segments();
    case FinetuneTarget::kLowRankAdapter:
      if (shape_.adapter_rank == 0) throw ConfigError("adapter finetuning needs an attached adapter");
      return {std::begin(kAdapterSegments), std::end(kAdapterSegments)};
  }
  return {};
}

std::uint64_t DenoiserModel::content_hash() const { return digest(params_); }

std::uint64_t DenoiserModel::content_hash(std::span<const std::string> segments) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : segments) h = digest(segment(name), h);
  return h;
}

}  // namespace fairdiff
