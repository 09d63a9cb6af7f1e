#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/denoiser.hpp"
#include "fairdiff/sampler.hpp"
#include "fairdiff/schedule.hpp"

namespace fairdiff {

/// Per-step gradient scales for the adjusted pass.
///
/// raw[i] = 1 / A_{t_i} = sqrt(abar) sqrt(1 - abar) / beta at t_i, for the S - 1 steps
/// that evaluate the denoiser; normalized = raw / geometric_mean(raw).
struct GradCoefficients {
  std::vector<double> raw;
  std::vector<double> normalized;
  std::vector<int> timesteps;

  /// All-ones coefficients: detach without rescaling (B = I, A left unstandardised).
  static GradCoefficients uniform(std::span<const int> timesteps);
};

GradCoefficients compute_grad_coefficients(const NoiseSchedule& schedule, std::span<const int> timesteps);

enum class GradientMode { kNaive, kAdjusted, kAdjustedUnscaled };

const char* to_string(GradientMode mode);
GradientMode parse_gradient_mode(std::string_view name);

/// Default ceiling on S * d for exact unrolled differentiation.
inline constexpr long kNaiveGradientBudget = 1L << 20;

/// A generated sample that can propagate dL/dx0 back to the model parameters.
///
/// Forward values are produced by the same routine as sample(), so x0 is bit-identical
/// across the plain, adjusted and naive entry points.
class DifferentiableSample {
 public:
  const std::vector<double>& x0() const { return x0_; }
  GradientMode mode() const { return mode_; }
  const Trajectory& trajectory() const { return trajectory_; }

  /// Accumulates the mode's gradient of <g_x0, x0> into g_params.
  ///
  /// kNaive differentiates the full recurrence, including the dependence of each
  /// z_{t_i} on earlier predictions. The adjusted modes treat every denoiser input
  /// z_{t_i} as a constant and multiply the gradient reaching eps^(t_i) by coeffs[i];
  /// the linear scheduler path from z_{t_i} to z_{t_{i+1}} still carries gradient.
  void backward(std::span<const double> g_x0, std::span<double> g_params) const;

 private:
  friend DifferentiableSample sample_with_adjusted_grad(const DenoiserModel&, int, std::span<const double>,
                                                        const NoiseSchedule&, const SamplerConfig&,
                                                        const GradCoefficients&, std::uint64_t);
  friend DifferentiableSample sample_with_naive_grad(const DenoiserModel&, int, std::span<const double>,
                                                     const NoiseSchedule&, const SamplerConfig&, std::uint64_t,
                                                     long);
  friend DifferentiableSample sample_with_grad(GradientMode, const DenoiserModel&, int, std::span<const double>,
                                               const NoiseSchedule&, const SamplerConfig&, std::uint64_t);

  DifferentiableSample(const DenoiserModel& model, int context, std::optional<double> guidance)
      : denoiser_(model, context, guidance) {}

  ConditionedDenoiser denoiser_;
  GradientMode mode_ = GradientMode::kAdjusted;
  std::vector<double> scales_;
  Trajectory trajectory_;
  std::vector<double> x0_;
};

DifferentiableSample sample_with_adjusted_grad(const DenoiserModel& model, int context, std::span<const double> z_T,
                                               const NoiseSchedule& schedule, const SamplerConfig& config,
                                               const GradCoefficients& coeffs, std::uint64_t noise_seed = 0);

DifferentiableSample sample_with_naive_grad(const DenoiserModel& model, int context, std::span<const double> z_T,
                                            const NoiseSchedule& schedule, const SamplerConfig& config,
                                            std::uint64_t noise_seed = 0, long budget = kNaiveGradientBudget);

/// Dispatches on mode; kAdjusted normalises, kAdjustedUnscaled uses all-ones coefficients.
DifferentiableSample sample_with_grad(GradientMode mode, const DenoiserModel& model, int context,
                                      std::span<const double> z_T, const NoiseSchedule& schedule,
                                      const SamplerConfig& config, std::uint64_t noise_seed = 0);

struct IntervalSummary {
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;  // 5th percentile
  double upper = 0.0;  // 95th percentile
};

/// Per-timestep magnitudes of R A_t B_t d eps/d theta (naive), R A_t d eps/d theta
/// (scaled) and R d eps/d theta (plain), 2-norm over the noise-network parameters.
struct GradDiagnostics {
  std::vector<int> timesteps;  // ascending 1..T (or the probed subset)
  std::vector<std::vector<double>> naive;   // [run][k]
  std::vector<std::vector<double>> scaled;  // [run][k]
  std::vector<std::vector<double>> plain;   // [run][k]
  int runs = 0;
  std::string norm = "l2";
  double r_variance = 1e-4;
  bool guided = false;

  std::vector<IntervalSummary> naive_summary;
  std::vector<IntervalSummary> scaled_summary;
  std::vector<IntervalSummary> plain_summary;
};

struct DiagnosticsOptions {
  int runs = 20;
  std::uint64_t seed = 0;
  double r_variance = 1e-4;
  std::vector<int> probe_timesteps;  // empty: every t in 1..T
};

/// Walks a sampled adjacent-step trajectory (config must visit every t = T..0) and
/// accumulates R B_t by successive VJPs with d eps^(s)/d z_s. Overflow in the chain is
/// recorded as +inf for the affected timesteps.
GradDiagnostics diagnose_gradients(const DenoiserModel& model, int context, const NoiseSchedule& schedule,
                                   const SamplerConfig& config, const DiagnosticsOptions& options);

IntervalSummary summarize(std::vector<double> values);

}  // namespace fairdiff
