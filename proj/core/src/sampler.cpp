#include "fairdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fairdiff/rng.hpp"

namespace fairdiff {

ConditionedDenoiser::ConditionedDenoiser(const DenoiserModel& model, int context,
                                         std::optional<double> guidance_weight)
    : model_(&model), guidance_(guidance_weight), cond_(model.encode(context, model.prefix_enabled())) {
  if (guidance_ && *guidance_ < 0.0) throw ConfigError("guidance weight must be >= 0");
  if (guidance_) uncond_ = model.encode(model.null_context(), false);
}

void ConditionedDenoiser::predict(std::span<const double> z, int t, std::span<double> eps, StepCache* cache) const {
  model_->predict(cond_.embed, z, t, eps, cache ? &cache->cond : nullptr);
  if (!guidance_) return;
  std::vector<double> eps_u(eps.size());
  model_->predict(uncond_->embed, z, t, eps_u, cache ? &cache->uncond : nullptr);
  const double w = *guidance_;
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = w * eps[i] + (1.0 - w) * eps_u[i];
}

void ConditionedDenoiser::backward(const StepCache& cache, std::span<const double> g_eps, std::span<double> g_params,
                                   std::span<double> g_z, EmbedGrads& embed_grads) const {
  if (!guidance_) {
    model_->predict_backward(cache.cond, g_eps, g_params, g_z, embed_grads.cond);
    return;
  }
  const double w = *guidance_;
  std::vector<double> g(g_eps.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * g_eps[i];
  std::vector<double> g_z_u(g_z.empty() ? 0 : g_z.size());
  model_->predict_backward(cache.cond, g, g_params, g_z, embed_grads.cond);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (1.0 - w) * g_eps[i];
  model_->predict_backward(cache.uncond, g, g_params, g_z_u, embed_grads.uncond);
  for (std::size_t i = 0; i < g_z.size(); ++i) g_z[i] += g_z_u[i];
}

ConditionedDenoiser::EmbedGrads ConditionedDenoiser::zero_embed_grads() const {
  EmbedGrads g;
  g.cond.assign(cond_.embed.size(), 0.0);
  if (uncond_) g.uncond.assign(uncond_->embed.size(), 0.0);
  return g;
}

void ConditionedDenoiser::finish_backward(const EmbedGrads& embed_grads, std::span<double> g_params) const {
  model_->encode_backward(cond_, embed_grads.cond, g_params);
  if (uncond_) model_->encode_backward(*uncond_, embed_grads.uncond, g_params);
}

std::vector<double> run_sampler(const ConditionedDenoiser& denoiser, std::span<const double> z_T,
                                const NoiseSchedule& schedule, const SamplerConfig& config,
                                std::uint64_t noise_seed, Trajectory* trajectory) {
  config.validate(schedule);
  const auto d = static_cast<std::size_t>(denoiser.data_dim());
  if (z_T.size() != d) throw ShapeError("initial noise has the wrong dimension");
  std::vector<double> z(z_T.begin(), z_T.end());
  std::vector<double> eps(d);
  const std::size_t steps = config.timesteps.size() - 1;
  if (trajectory) {
    trajectory->timesteps = config.timesteps;
    trajectory->z.clear();
    trajectory->caches.assign(steps, {});
    trajectory->coefficients.clear();
    trajectory->z.reserve(steps);
    trajectory->coefficients.reserve(steps);
  }
  std::vector<double> w;
  for (std::size_t i = 0; i < steps; ++i) {
    const int t = config.timesteps[i];
    const int t_prev = config.timesteps[i + 1];
    if (trajectory) {
      trajectory->z.push_back(z);
      trajectory->coefficients.push_back(step_coefficients(schedule, t, t_prev, config.stochastic));
    }
    denoiser.predict(z, t, eps, trajectory ? &trajectory->caches[i] : nullptr);
    w.clear();
    if (config.stochastic && t_prev > 0) {
      Rng rng(derive_seed(noise_seed, 0x5ca1e, static_cast<std::uint64_t>(i)));
      w = rng.normal_vector(d);
    }
    z = reverse_step(z, eps, t, t_prev, schedule, w, config.stochastic);
  }
  return z;
}

std::vector<double> sample(const DenoiserModel& model, int context, std::span<const double> z_T,
                           const NoiseSchedule& schedule, const SamplerConfig& config, std::uint64_t noise_seed) {
  ConditionedDenoiser denoiser(model, context, config.guidance_weight);
  return run_sampler(denoiser, z_T, schedule, config, noise_seed, nullptr);
}

namespace {

double cosine_lr(double base, double floor_fraction, long it, long total) {
  if (total <= 1) return base;
  const double progress = static_cast<double>(it) / static_cast<double>(total - 1);
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base * (floor_fraction + (1.0 - floor_fraction) * c);
}

}  // namespace

PretrainResult pretrain_denoiser(const Dataset& dataset, DenoiserModel model, const NoiseSchedule& schedule,
                                 const PretrainOptions& options) {
  if (dataset.empty()) throw ArgumentError("pretraining needs a non-empty dataset");
  if (options.iterations < 0 || options.batch_size < 1) throw ConfigError("pretraining needs iterations >= 0, batch >= 1");
  if (schedule.T() != model.shape().max_timestep) throw ConfigError("schedule length differs from the model's T");
  const auto d = static_cast<std::size_t>(model.data_dim());
  const auto segments = model.pretrain_segments();
  AdamW opt(model.params().size(), options.optimizer, segment_mask(model.layout(), segments));
  Rng rng(derive_seed(options.seed, 0x9e7a1));

  PretrainResult result;
  if (options.iterations == 0) {
    result.model = std::move(model);
    return result;
  }
  std::vector<double> grad(model.params().size());
  std::vector<double> noise(d), eps(d), g_eps(d), g_embed;
  DenoiserModel::EvalCache cache;
  DenoiserModel last_finite = model;
  double window = 0.0;
  long window_count = 0;
  const long log_every = std::max<long>(1, options.log_every);

  for (long it = 0; it < options.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int b = 0; b < options.batch_size; ++b) {
      const auto& s = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
      if (s.x0.size() != d) throw ShapeError("dataset sample has the wrong dimension");
      const int t = static_cast<int>(rng.uniform_int(1, schedule.T()));
      rng.fill_normal(noise);
      const bool drop = rng.uniform() < options.context_drop_prob;
      const auto cond = model.encode(drop ? model.null_context() : s.context, false);
      const auto z = forward_diffuse(s.x0, t, noise, schedule);
      model.predict(cond.embed, z, t, eps, &cache);
      const double scale = 2.0 / (static_cast<double>(d) * options.batch_size);
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = eps[i] - noise[i];
        loss += diff * diff;
        g_eps[i] = scale * diff;
      }
      g_embed.assign(cond.embed.size(), 0.0);
      model.predict_backward(cache, g_eps, grad, {}, g_embed);
      model.encode_backward(cond, g_embed, grad);
    }
    loss /= static_cast<double>(d) * options.batch_size;
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("denoising loss became non-finite at iteration " + std::to_string(it),
                             std::move(last_finite), it);
    }
    if (it == 0) result.initial_loss = loss;
    window += loss;
    ++window_count;
    if ((it + 1) % log_every == 0 || it + 1 == options.iterations) {
      result.loss_trace.push_back(window / static_cast<double>(window_count));
      window = 0.0;
      window_count = 0;
    }
    last_finite = model;
    opt.set_learning_rate(cosine_lr(options.optimizer.learning_rate, options.final_lr_fraction, it, options.iterations));
    opt.step(model.params(), grad);
  }
  result.final_loss = result.loss_trace.empty() ? result.initial_loss : result.loss_trace.back();
  result.model = std::move(model);
  return result;
}

double denoising_loss(const Dataset& dataset, const DenoiserModel& model, const NoiseSchedule& schedule, int draws,
                      std::uint64_t seed) {
  if (dataset.empty() || draws < 1) throw ArgumentError("denoising_loss needs data and draws >= 1");
  Rng rng(derive_seed(seed, 0xe7a1));
  const auto d = static_cast<std::size_t>(model.data_dim());
  std::vector<double> noise(d), eps(d);
  double total = 0.0;
  for (int k = 0; k < draws; ++k) {
    const auto& s = dataset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
    const int t = static_cast<int>(rng.uniform_int(1, schedule.T()));
    rng.fill_normal(noise);
    const auto cond = model.encode(s.context, false);
    const auto z = forward_diffuse(s.x0, t, noise, schedule);
    model.predict(cond.embed, z, t, eps, nullptr);
    for (std::size_t i = 0; i < d; ++i) total += (eps[i] - noise[i]) * (eps[i] - noise[i]);
  }
  return total / (static_cast<double>(d) * draws);
}

}  // namespace fairdiff
