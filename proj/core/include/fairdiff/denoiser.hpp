#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/params.hpp"

namespace fairdiff {

/// Which parameter subset a finetuning run may update.
enum class FinetuneTarget { kContextTable, kPrefix, kFullNetwork, kLowRankAdapter };

const char* to_string(FinetuneTarget target);
FinetuneTarget parse_finetune_target(std::string_view name);

struct DenoiserShape {
  int data_dim = 8;
  int num_contexts = 1;  // the null context is an extra reserved row at index num_contexts
  int token_dim = 8;
  int prefix_len = 5;
  int embed_dim = 16;
  int time_dim = 8;
  int hidden = 64;
  int max_timestep = 100;
  int adapter_rank = 0;

  friend bool operator==(const DenoiserShape&, const DenoiserShape&) = default;
};

/// Conditional noise-prediction network eps(embed(context), z_t, t).
///
/// The context path is a token table (one row per context plus a reserved null row)
/// followed by a shared linear encoder; an optional soft prefix is concatenated to the
/// token before encoding. The noise network is a two-hidden-layer SiLU MLP over
/// [z_t, time features, embedding], with optional low-rank adapters on all three
/// dense layers (effective weight W + A * B).
///
/// All parameters live in one flat vector addressed through a ParamLayout so that
/// optimisers, checkpoints and gradient masks work uniformly.
class DenoiserModel {
 public:
  struct Conditioning {
    int context = 0;
    bool with_prefix = false;
    std::vector<double> input;  // [token row, prefix (zeros when disabled)]
    std::vector<double> embed;
  };

  /// Per-evaluation activations retained for the backward pass.
  struct EvalCache {
    std::vector<double> input;
    std::vector<double> pre1, h1, pre2, h2;
    std::vector<double> down1, down2, down3;  // B * input of each adapter
  };

  DenoiserModel() = default;

  /// Random initialisation. `tokens`, when given, seeds the context table rows
  /// (num_contexts * token_dim values; the null row starts at zero).
  static DenoiserModel create(const DenoiserShape& shape, std::uint64_t seed, std::span<const double> tokens = {});

  /// Copy with low-rank adapters of the given rank attached (A zero-initialised so the
  /// output is unchanged until A is trained). Base parameters are copied verbatim.
  DenoiserModel with_adapter(int rank, std::uint64_t seed) const;

  const DenoiserShape& shape() const { return shape_; }
  const ParamLayout& layout() const { return layout_; }
  int data_dim() const { return shape_.data_dim; }
  int null_context() const { return shape_.num_contexts; }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  std::span<const double> segment(std::string_view name) const { return layout_.view(params(), name); }
  std::span<double> segment(std::string_view name) { return layout_.view(params(), name); }

  bool prefix_enabled() const { return prefix_enabled_; }
  void set_prefix_enabled(bool on) { prefix_enabled_ = on; }
  bool adapter_enabled() const { return adapter_enabled_; }
  void set_adapter_enabled(bool on) { adapter_enabled_ = on && shape_.adapter_rank > 0; }

  Conditioning encode(int context, bool with_prefix) const;
  /// g_params += d(embed)/d(params)^T g_embed.
  void encode_backward(const Conditioning& cond, std::span<const double> g_embed, std::span<double> g_params) const;

  void predict(std::span<const double> embed, std::span<const double> z, int t, std::span<double> eps,
               EvalCache* cache) const;
  std::vector<double> predict(std::span<const double> embed, std::span<const double> z, int t) const;

  /// Vector-Jacobian product of one evaluation. Accumulates into g_params and g_embed
  /// (either may be empty to skip) and overwrites g_z (empty to skip).
  void predict_backward(const EvalCache& cache, std::span<const double> g_eps, std::span<double> g_params,
                        std::span<double> g_z, std::span<double> g_embed) const;

  /// Segment names updated by a finetune target.
  std::vector<std::string> target_segments(FinetuneTarget target) const;
  /// Segments trained by denoising pretraining.
  std::vector<std::string> pretrain_segments() const;
  /// Segment names of the noise network only (the U-Net analog).
  std::vector<std::string> network_segments() const;

  std::uint64_t content_hash() const;
  std::uint64_t content_hash(std::span<const std::string> segments) const;

  /// Restores a model from a layout/shape/parameter triple (checkpoint loading).
  static DenoiserModel from_parts(const DenoiserShape& shape, std::vector<double> params, bool prefix_enabled,
                                  bool adapter_enabled);

 private:
  void build_layout();
  void time_features(int t, std::span<double> out) const;
  int input_dim() const { return shape_.data_dim + shape_.time_dim + shape_.embed_dim; }
  int encoder_input_dim() const { return shape_.token_dim * (1 + shape_.prefix_len); }

  DenoiserShape shape_;
  ParamLayout layout_;
  std::vector<double> params_;
  bool prefix_enabled_ = false;
  bool adapter_enabled_ = false;
};

}  // namespace fairdiff
