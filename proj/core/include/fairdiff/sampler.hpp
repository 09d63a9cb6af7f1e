#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fairdiff/dataset.hpp"
#include "fairdiff/denoiser.hpp"
#include "fairdiff/errors.hpp"
#include "fairdiff/optim.hpp"
#include "fairdiff/schedule.hpp"

namespace fairdiff {

/// A denoiser bound to one context, with optional classifier-free guidance.
///
/// Guided prediction is w * eps_cond + (1 - w) * eps_uncond, so w = 1 reproduces the
/// conditional branch and w = 0 the unconditional branch exactly. The soft prefix (when
/// enabled on the model) applies to the conditional branch only.
class ConditionedDenoiser {
 public:
  struct StepCache {
    DenoiserModel::EvalCache cond;
    DenoiserModel::EvalCache uncond;
  };
  struct EmbedGrads {
    std::vector<double> cond;
    std::vector<double> uncond;
  };

  ConditionedDenoiser(const DenoiserModel& model, int context, std::optional<double> guidance_weight);

  const DenoiserModel& model() const { return *model_; }
  int data_dim() const { return model_->data_dim(); }
  bool guided() const { return guidance_.has_value(); }

  void predict(std::span<const double> z, int t, std::span<double> eps, StepCache* cache) const;

  /// VJP of one (possibly guided) prediction. g_params and embed grads accumulate; g_z is overwritten.
  void backward(const StepCache& cache, std::span<const double> g_eps, std::span<double> g_params,
                std::span<double> g_z, EmbedGrads& embed_grads) const;

  EmbedGrads zero_embed_grads() const;
  /// Pushes accumulated embedding gradients through the context encoder.
  void finish_backward(const EmbedGrads& embed_grads, std::span<double> g_params) const;

 private:
  const DenoiserModel* model_;
  std::optional<double> guidance_;
  DenoiserModel::Conditioning cond_;
  std::optional<DenoiserModel::Conditioning> uncond_;
};

/// Intermediate states of one sampling pass; z[i] is the state entering step i.
struct Trajectory {
  std::vector<int> timesteps;
  std::vector<std::vector<double>> z;
  std::vector<ConditionedDenoiser::StepCache> caches;
  std::vector<StepCoefficients> coefficients;
};

/// Runs the reverse chain over config.timesteps. Stochastic noise for step i is drawn
/// from a stream derived from `noise_seed`. When `trajectory` is given the per-step
/// states and caches are retained.
std::vector<double> run_sampler(const ConditionedDenoiser& denoiser, std::span<const double> z_T,
                                const NoiseSchedule& schedule, const SamplerConfig& config,
                                std::uint64_t noise_seed, Trajectory* trajectory);

std::vector<double> sample(const DenoiserModel& model, int context, std::span<const double> z_T,
                           const NoiseSchedule& schedule, const SamplerConfig& config, std::uint64_t noise_seed = 0);

struct PretrainOptions {
  long iterations = 6000;
  int batch_size = 128;
  AdamWOptions optimizer{2e-3, 0.9, 0.999, 1e-8, 0.0};
  double context_drop_prob = 0.1;
  double final_lr_fraction = 0.1;  // cosine decay floor
  std::uint64_t seed = 0;
  long log_every = 200;
};

struct PretrainResult {
  DenoiserModel model;
  std::vector<double> loss_trace;  // mean denoising loss over each log window
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

/// Raised when the denoising loss becomes non-finite; carries the last finite parameters.
class TrainingDiverged : public TrainingError {
 public:
  TrainingDiverged(const std::string& what, DenoiserModel last_finite, long iteration)
      : TrainingError(what), last_finite_(std::move(last_finite)), iteration_(iteration) {}
  const DenoiserModel& last_finite() const { return last_finite_; }
  long iteration() const { return iteration_; }

 private:
  DenoiserModel last_finite_;
  long iteration_;
};

/// Standard epsilon-prediction denoising objective over uniformly drawn t, with the
/// context replaced by the null context with probability context_drop_prob.
PretrainResult pretrain_denoiser(const Dataset& dataset, DenoiserModel model, const NoiseSchedule& schedule,
                                 const PretrainOptions& options);

/// Mean denoising MSE over a fixed evaluation draw (deterministic given seed).
double denoising_loss(const Dataset& dataset, const DenoiserModel& model, const NoiseSchedule& schedule,
                      int draws, std::uint64_t seed);

}  // namespace fairdiff
