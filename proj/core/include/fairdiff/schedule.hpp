#pragma once

#include <optional>
#include <span>
#include <vector>

namespace fairdiff {

enum class ScheduleKind { kLinear, kScaledLinear };

/// Variance schedule over t = 1..T. Accessors take the 1-based step index;
/// alpha_bar(0) is defined as 1 so that t_prev = 0 denotes clean data.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Builds from an explicit beta sequence (beta_1..beta_T). Sigma defaults to sqrt(beta).
  static NoiseSchedule from_betas(std::vector<double> betas);

  int T() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;
  double sigma(int t) const;

  std::span<const double> betas() const { return betas_; }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }
  std::span<const double> sigmas() const { return sigmas_; }

  /// A_t = (1/sqrt(abar_t)) * beta_t / sqrt(1 - abar_t): weight of eps^(t) in the unrolled reverse chain.
  double unrolled_weight(int t) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

NoiseSchedule build_noise_schedule(int T, double beta_start, double beta_end, ScheduleKind kind);

/// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise.
std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> noise,
                                    const NoiseSchedule& schedule);

/// Linearisation of one reverse update: z_prev = a * z_t + b * eps (+ sigma * w when stochastic).
struct StepCoefficients {
  double a = 0.0;
  double b = 0.0;
};

StepCoefficients step_coefficients(const NoiseSchedule& schedule, int t, int t_prev, bool stochastic);

/// One reverse update from t to t_prev.
///
/// stochastic = true requires t_prev = t - 1 and applies the ancestral DDPM update
/// (1/sqrt(alpha_t)) (z_t - beta_t / sqrt(1 - abar_t) eps) + sigma_t w. An empty `w`
/// means no injected noise. Otherwise the deterministic x0-projection update is used,
/// which supports arbitrary strides.
std::vector<double> reverse_step(std::span<const double> z_t, std::span<const double> eps, int t, int t_prev,
                                 const NoiseSchedule& schedule, std::span<const double> w, bool stochastic);

struct SamplerConfig {
  std::vector<int> timesteps;  // t_1 = T > ... > t_S = 0
  std::optional<double> guidance_weight;
  bool stochastic = false;
  std::vector<int> step_jitter;  // candidate S values, resampled per finetune iteration

  int num_steps() const { return static_cast<int>(timesteps.size()); }

  /// Evenly strided schedule with S entries from T down to 0.
  static SamplerConfig strided(int T, int num_steps);
  /// Every step T, T-1, ..., 0 (S = T + 1).
  static SamplerConfig full(int T, bool stochastic);

  /// Throws ConfigError when the timesteps or jitter set violate their invariants.
  void validate(const NoiseSchedule& schedule) const;
};

std::vector<int> strided_timesteps(int T, int num_steps);

}  // namespace fairdiff
