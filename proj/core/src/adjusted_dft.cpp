#include "fairdiff/adjusted_dft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fairdiff/errors.hpp"
#include "fairdiff/rng.hpp"
#include "linalg.hpp"

namespace fairdiff {

GradCoefficients GradCoefficients::uniform(std::span<const int> timesteps) {
  if (timesteps.size() < 2) throw ConfigError("gradient coefficients need S >= 2");
  GradCoefficients c;
  c.timesteps.assign(timesteps.begin(), timesteps.end() - 1);
  c.raw.assign(c.timesteps.size(), 1.0);
  c.normalized = c.raw;
  return c;
}

GradCoefficients compute_grad_coefficients(const NoiseSchedule& schedule, std::span<const int> timesteps) {
  if (timesteps.size() < 2) throw ConfigError("gradient coefficients need S >= 2");
  GradCoefficients c;
  c.timesteps.assign(timesteps.begin(), timesteps.end() - 1);
  c.raw.reserve(c.timesteps.size());
  double log_sum = 0.0;
  for (int t : c.timesteps) {
    if (t < 1 || t > schedule.T()) throw ConfigError("coefficient timestep out of range");
    const double ab = schedule.alpha_bar(t);
    const double value = std::sqrt(ab) * std::sqrt(1.0 - ab) / schedule.beta(t);
    c.raw.push_back(value);
    log_sum += std::log(value);
  }
  const auto [lo, hi] = std::minmax_element(c.raw.begin(), c.raw.end());
  if (*lo == *hi) {
    c.normalized.assign(c.raw.size(), 1.0);
    return c;
  }
  const double geo_mean = std::exp(log_sum / static_cast<double>(c.raw.size()));
  c.normalized.reserve(c.raw.size());
  for (double v : c.raw) c.normalized.push_back(v / geo_mean);
  return c;
}

const char* to_string(GradientMode mode) {
  switch (mode) {
    case GradientMode::kNaive: return "naive";
    case GradientMode::kAdjusted: return "adjusted";
    case GradientMode::kAdjustedUnscaled: return "adjusted_unscaled";
  }
  return "unknown";
}

GradientMode parse_gradient_mode(std::string_view name) {
  if (name == "naive") return GradientMode::kNaive;
  if (name == "adjusted") return GradientMode::kAdjusted;
  if (name == "adjusted_unscaled") return GradientMode::kAdjustedUnscaled;
  throw ConfigError("unknown gradient mode '" + std::string(name) + "'");
}

void DifferentiableSample::backward(std::span<const double> g_x0, std::span<double> g_params) const {
  const std::size_t d = x0_.size();
  if (g_x0.size() != d) throw ShapeError("dL/dx0 has the wrong dimension");
  if (g_params.size() != denoiser_.model().params().size()) throw ShapeError("gradient buffer size mismatch");
  std::vector<double> g(g_x0.begin(), g_x0.end());
  std::vector<double> g_eps(d), g_z(d);
  auto embed_grads = denoiser_.zero_embed_grads();
  const bool naive = mode_ == GradientMode::kNaive;
  for (std::size_t i = trajectory_.caches.size(); i-- > 0;) {
    const auto [a, b] = trajectory_.coefficients[i];
    const double scale = naive ? 1.0 : scales_[i];
    for (std::size_t k = 0; k < d; ++k) g_eps[k] = scale * b * g[k];
    if (naive) {
      denoiser_.backward(trajectory_.caches[i], g_eps, g_params, g_z, embed_grads);
      for (std::size_t k = 0; k < d; ++k) g[k] = a * g[k] + g_z[k];
    } else {
      denoiser_.backward(trajectory_.caches[i], g_eps, g_params, {}, embed_grads);
      for (std::size_t k = 0; k < d; ++k) g[k] *= a;
    }
  }
  denoiser_.finish_backward(embed_grads, g_params);
}

DifferentiableSample sample_with_adjusted_grad(const DenoiserModel& model, int context, std::span<const double> z_T,
                                               const NoiseSchedule& schedule, const SamplerConfig& config,
                                               const GradCoefficients& coeffs, std::uint64_t noise_seed) {
  if (coeffs.timesteps.size() + 1 != config.timesteps.size() ||
      !std::equal(coeffs.timesteps.begin(), coeffs.timesteps.end(), config.timesteps.begin()) ||
      coeffs.normalized.size() != coeffs.timesteps.size()) {
    throw ConfigError("gradient coefficients do not match the sampler timesteps");
  }
  DifferentiableSample s(model, context, config.guidance_weight);
  s.mode_ = GradientMode::kAdjusted;
  s.scales_ = coeffs.normalized;
  s.x0_ = run_sampler(s.denoiser_, z_T, schedule, config, noise_seed, &s.trajectory_);
  return s;
}

DifferentiableSample sample_with_naive_grad(const DenoiserModel& model, int context, std::span<const double> z_T,
                                            const NoiseSchedule& schedule, const SamplerConfig& config,
                                            std::uint64_t noise_seed, long budget) {
  const long cost = static_cast<long>(config.timesteps.size()) * model.data_dim();
  if (cost > budget) {
    throw ResourceError("exact unrolled gradient needs S*d = " + std::to_string(cost) + " > budget " +
                        std::to_string(budget) + "; use the adjusted gradient instead");
  }
  DifferentiableSample s(model, context, config.guidance_weight);
  s.mode_ = GradientMode::kNaive;
  s.x0_ = run_sampler(s.denoiser_, z_T, schedule, config, noise_seed, &s.trajectory_);
  return s;
}

DifferentiableSample sample_with_grad(GradientMode mode, const DenoiserModel& model, int context,
                                      std::span<const double> z_T, const NoiseSchedule& schedule,
                                      const SamplerConfig& config, std::uint64_t noise_seed) {
  switch (mode) {
    case GradientMode::kNaive: return sample_with_naive_grad(model, context, z_T, schedule, config, noise_seed);
    case GradientMode::kAdjusted:
      return sample_with_adjusted_grad(model, context, z_T, schedule, config,
                                       compute_grad_coefficients(schedule, config.timesteps), noise_seed);
    case GradientMode::kAdjustedUnscaled: {
      auto s = sample_with_adjusted_grad(model, context, z_T, schedule, config,
                                         GradCoefficients::uniform(config.timesteps), noise_seed);
      s.mode_ = GradientMode::kAdjustedUnscaled;
      return s;
    }
  }
  throw ConfigError("unknown gradient mode");
}

IntervalSummary summarize(std::vector<double> values) {
  IntervalSummary s;
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || values[lo] == values[hi]) return values[lo];
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.median = quantile(0.5);
  s.lower = quantile(0.05);
  s.upper = quantile(0.95);
  return s;
}

GradDiagnostics diagnose_gradients(const DenoiserModel& model, int context, const NoiseSchedule& schedule,
                                   const SamplerConfig& config, const DiagnosticsOptions& options) {
  if (options.runs < 1) throw ConfigError("diagnostics need runs >= 1");
  if (!(options.r_variance > 0.0)) throw ConfigError("diagnostics need a positive R variance");
  config.validate(schedule);
  const int T = schedule.T();
  if (config.num_steps() != T + 1) {
    throw ConfigError("gradient diagnostics need the full adjacent schedule T, T-1, ..., 0");
  }
  std::vector<int> probes = options.probe_timesteps;
  if (probes.empty()) {
    for (int t = 1; t <= T; ++t) probes.push_back(t);
  }
  std::sort(probes.begin(), probes.end());
  probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
  if (probes.front() < 1 || probes.back() > T) throw ConfigError("probe timestep out of range");

  GradDiagnostics out;
  out.timesteps = probes;
  out.runs = options.runs;
  out.r_variance = options.r_variance;
  out.guided = config.guidance_weight.has_value();

  const auto d = static_cast<std::size_t>(model.data_dim());
  const double r_scale = std::sqrt(options.r_variance);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  ConditionedDenoiser denoiser(model, context, config.guidance_weight);
  std::vector<double> g_params(model.params().size());
  std::vector<double> g_z(d), scratch(d);

  auto param_norm = [&](const ConditionedDenoiser::StepCache& cache, std::span<const double> row) {
    std::fill(g_params.begin(), g_params.end(), 0.0);
    auto embed = denoiser.zero_embed_grads();
    denoiser.backward(cache, row, g_params, {}, embed);
    return detail::norm2(g_params);
  };

  for (int run = 0; run < options.runs; ++run) {
    Rng rng(derive_seed(options.seed, 0xd1a6, static_cast<std::uint64_t>(run)));
    const auto z_T = rng.normal_vector(d);
    const auto R = rng.normal_vector(d, r_scale);
    Trajectory traj;
    run_sampler(denoiser, z_T, schedule, config, derive_seed(options.seed, 0xd1a7, static_cast<std::uint64_t>(run)),
                &traj);

    std::vector<double> naive_row, scaled_row, plain_row;
    std::vector<double> r = R;
    bool overflow = false;
    std::size_t next_probe = 0;
    for (int t = 1; t <= T && next_probe < probes.size(); ++t) {
      const auto& cache = traj.caches[static_cast<std::size_t>(T - t)];
      const double A = schedule.unrolled_weight(t);
      if (probes[next_probe] == t) {
        const double plain = param_norm(cache, R);
        const double naive = overflow ? kInf : A * param_norm(cache, r);
        plain_row.push_back(plain);
        scaled_row.push_back(A * plain);
        naive_row.push_back(std::isfinite(naive) ? naive : kInf);
        ++next_probe;
      }
      if (!overflow) {
        // r <- r (I - c_t J_t), J_t = d eps^(t) / d z_t.
        auto embed = denoiser.zero_embed_grads();
        denoiser.backward(cache, r, {}, g_z, embed);
        const double c = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
        for (std::size_t k = 0; k < d; ++k) r[k] -= c * g_z[k];
        overflow = !std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); });
      }
    }
    out.naive.push_back(std::move(naive_row));
    out.scaled.push_back(std::move(scaled_row));
    out.plain.push_back(std::move(plain_row));
  }

  auto column = [&](const std::vector<std::vector<double>>& rows, std::size_t k) {
    std::vector<double> col;
    col.reserve(rows.size());
    for (const auto& row : rows) col.push_back(row[k]);
    return col;
  };
  for (std::size_t k = 0; k < probes.size(); ++k) {
    out.naive_summary.push_back(summarize(column(out.naive, k)));
    out.scaled_summary.push_back(summarize(column(out.scaled, k)));
    out.plain_summary.push_back(summarize(column(out.plain, k)));
  }
  return out;
}

}  // namespace fairdiff
