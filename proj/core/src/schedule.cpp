#include "fairdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "fairdiff/errors.hpp"

namespace fairdiff {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("noise schedule needs T >= 1");
  NoiseSchedule s;
  s.betas_ = std::move(betas);
  const std::size_t n = s.betas_.size();
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  s.sigmas_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = s.betas_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) + " outside (0, 1)");
    }
    s.alphas_[i] = 1.0 - b;
    running *= s.alphas_[i];
    s.alpha_bars_[i] = running;
    s.sigmas_[i] = std::sqrt(b);
  }
  return s;
}

namespace {

void check_t(const NoiseSchedule& s, int t, int lo) {
  if (t < lo || t > s.T()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(s.T()) + "]");
  }
}

}  // namespace

double NoiseSchedule::beta(int t) const {
  check_t(*this, t, 1);
  return betas_[t - 1];
}
double NoiseSchedule::alpha(int t) const {
  check_t(*this, t, 1);
  return alphas_[t - 1];
}
double NoiseSchedule::alpha_bar(int t) const {
  check_t(*this, t, 0);
  return t == 0 ? 1.0 : alpha_bars_[t - 1];
}
double NoiseSchedule::sigma(int t) const {
  check_t(*this, t, 1);
  return sigmas_[t - 1];
}

double NoiseSchedule::unrolled_weight(int t) const {
  const double ab = alpha_bar(t);
  return beta(t) / (std::sqrt(ab) * std::sqrt(1.0 - ab));
}

NoiseSchedule build_noise_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 1) throw ConfigError("noise schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("beta range must satisfy 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    if (kind == ScheduleKind::kLinear) {
      betas[i] = beta_start + frac * (beta_end - beta_start);
    } else {
      const double r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
      betas[i] = r * r;
    }
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> noise,
                                    const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T()) throw IndexError("forward_diffuse: timestep " + std::to_string(t) + " out of range");
  if (noise.size() != x0.size()) throw ShapeError("forward_diffuse: noise dimension mismatch");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<double> z(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) z[i] = a * x0[i] + b * noise[i];
  return z;
}

StepCoefficients step_coefficients(const NoiseSchedule& schedule, int t, int t_prev, bool stochastic) {
  if (!(t > t_prev && t_prev >= 0)) throw ConfigError("reverse step requires t > t_prev >= 0");
  if (stochastic) {
    if (t_prev != t - 1) throw ConfigError("stochastic reverse steps are only supported between adjacent timesteps");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    return {inv_sqrt_alpha, -inv_sqrt_alpha * schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t))};
  }
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double ratio = std::sqrt(ab_prev) / std::sqrt(ab);
  return {ratio, std::sqrt(1.0 - ab_prev) - ratio * std::sqrt(1.0 - ab)};
}

std::vector<double> reverse_step(std::span<const double> z_t, std::span<const double> eps, int t, int t_prev,
                                 const NoiseSchedule& schedule, std::span<const double> w, bool stochastic) {
  if (!(t > t_prev && t_prev >= 0)) throw ConfigError("reverse step requires t > t_prev >= 0");
  if (t > schedule.T()) throw IndexError("reverse step: timestep " + std::to_string(t) + " out of range");
  if (eps.size() != z_t.size()) throw ShapeError("reverse step: eps dimension mismatch");
  if (!w.empty() && w.size() != z_t.size()) throw ShapeError("reverse step: noise dimension mismatch");
  const std::size_t d = z_t.size();
  std::vector<double> out(d);
  if (stochastic) {
    if (t_prev != t - 1) throw ConfigError("stochastic reverse steps are only supported between adjacent timesteps");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double eps_coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double sigma = schedule.sigma(t);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = inv_sqrt_alpha * (z_t[i] - eps_coef * eps[i]);
      if (!w.empty()) out[i] += sigma * w[i];
    }
    return out;
  }
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double s_ab = std::sqrt(ab);
  const double s_1m = std::sqrt(1.0 - ab);
  const double s_ab_prev = std::sqrt(ab_prev);
  const double s_1m_prev = std::sqrt(1.0 - ab_prev);
  for (std::size_t i = 0; i < d; ++i) {
    const double x0_hat = (z_t[i] - s_1m * eps[i]) / s_ab;
    out[i] = s_ab_prev * x0_hat + s_1m_prev * eps[i];
  }
  return out;
}

std::vector<int> strided_timesteps(int T, int num_steps) {
  if (num_steps < 2) throw ConfigError("a sampling schedule needs at least 2 entries (T and 0)");
  if (num_steps - 1 > T) throw ConfigError("cannot take more than T strides");
  std::vector<int> ts(static_cast<std::size_t>(num_steps));
  for (int i = 0; i < num_steps; ++i) {
    const double frac = static_cast<double>(num_steps - 1 - i) / (num_steps - 1);
    ts[i] = static_cast<int>(std::lround(frac * T));
  }
  return ts;
}

SamplerConfig SamplerConfig::strided(int T, int num_steps) {
  SamplerConfig c;
  c.timesteps = strided_timesteps(T, num_steps);
  return c;
}

SamplerConfig SamplerConfig::full(int T, bool stochastic) {
  SamplerConfig c;
  c.timesteps = strided_timesteps(T, T + 1);
  c.stochastic = stochastic;
  return c;
}

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
  if (timesteps.size() < 2) throw ConfigError("sampler needs at least two timesteps");
  if (timesteps.front() != schedule.T()) throw ConfigError("sampler timesteps must start at T");
  if (timesteps.back() != 0) throw ConfigError("sampler timesteps must end at 0");
  for (std::size_t i = 1; i < timesteps.size(); ++i) {
    if (timesteps[i] >= timesteps[i - 1]) throw ConfigError("sampler timesteps must be strictly decreasing");
    if (stochastic && timesteps[i] != timesteps[i - 1] - 1) {
      throw ConfigError("stochastic sampling requires adjacent timesteps");
    }
  }
  if (guidance_weight && *guidance_weight < 0.0) throw ConfigError("guidance weight must be >= 0");
  for (int s : step_jitter) {
    if (s < 2) throw ConfigError("step_jitter entries must be >= 2");
    if (s - 1 > schedule.T()) throw ConfigError("step_jitter entry exceeds T + 1");
  }
}

}  // namespace fairdiff
