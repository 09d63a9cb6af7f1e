#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairdiff/adjusted_dft.hpp"
#include "fairdiff/denoiser.hpp"
#include "fairdiff/losses.hpp"
#include "fairdiff/sampler.hpp"
#include "fairdiff/schedule.hpp"
#include "fairdiff/world.hpp"

namespace fairdiff {

using Json = nlohmann::json;

/// Every recognised key with its default value.
Json default_config();

/// Reads a JSON config file and merges it over the defaults. Unknown keys are errors.
Json load_config(const std::filesystem::path& path);

/// Merges `patch` over `base`, rejecting keys absent from `base`.
void merge_config(Json& base, const Json& patch, const std::string& where = "");

/// Applies one "section.key=value" override; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(Json& config, std::string_view assignment);

struct ScheduleSettings {
  int T = 100;
  double beta_start = 0.0085;
  double beta_end = 0.12;
  ScheduleKind kind = ScheduleKind::kScaledLinear;
};

struct SamplerSettings {
  int num_steps = 21;
  bool stochastic = false;
  std::optional<double> guidance_weight;

  SamplerConfig build(int T) const;
};

struct AlignedView {
  std::vector<std::string> attributes;  // one entry, or several for an intersectional view
  std::vector<double> target;
  std::optional<std::string> conditional_on;  // name of another aligned view
};

struct FamilyWeight {
  int family = 0;
  double weight = 1.0;
};

struct FinetuneSettings {
  FinetuneTarget target = FinetuneTarget::kContextTable;
  int adapter_rank = 4;
  GradientMode gradient_mode = GradientMode::kAdjusted;
  AdamWOptions optimizer{5e-3, 0.9, 0.999, 1e-8, 0.0};
  long iterations = 600;
  int batch_size = 24;
  long checkpoint_every = 50;
  std::vector<int> step_jitter;
  std::vector<FamilyWeight> families;
  std::vector<AlignedView> views;
  std::string ot_method = "auto";  // auto | exact | monte_carlo
  long ot_draws = 10000;
  int validation_samples = 100;
  double semantics_floor = 0.7;
};

struct EvaluateSettings {
  int samples_per_context = 200;
  std::vector<ContextSplit> splits{ContextSplit::kHeldOut};
};

struct DiagnoseSettings {
  int runs = 20;
  double r_variance = 1e-4;
  bool stochastic = true;
  int context = 0;
  std::vector<int> probe_timesteps;
};

struct InvertSettings {
  long iterations = 300;
  int batch_size = 4;
  AdamWOptions optimizer{5e-2, 0.9, 0.999, 1e-8, 0.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<GradientMode> modes{GradientMode::kNaive, GradientMode::kAdjusted, GradientMode::kAdjustedUnscaled};
  int num_steps = 0;  // 0: full adjacent schedule
  bool stochastic = false;
  int context = 0;
  int target_context = -1;  // -1: a held-out context of another family or the last held-out context
};

/// Typed view of a resolved JSON config.
struct ExperimentConfig {
  Json raw;
  std::uint64_t seed = 0;
  std::string preset = "gender";
  WorldPresetOptions world;
  std::size_t world_samples = 20000;
  std::size_t classifier_samples = 8000;
  std::size_t realism_references = 512;
  DenoiserShape shape;
  ScheduleSettings schedule;
  PretrainOptions pretrain;
  SamplerSettings sampler;
  FinetuneSettings finetune;
  LossConfig loss;  // targets and region are filled by the workbench
  EvaluateSettings evaluate;
  DiagnoseSettings diagnose;
  InvertSettings invert;

  static ExperimentConfig from_json(const Json& resolved);
};

}  // namespace fairdiff
