#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fairdiff/adjusted_dft.hpp"
#include "fairdiff/checkpoint.hpp"
#include "fairdiff/config.hpp"
#include "fairdiff/losses.hpp"
#include "fairdiff/world.hpp"

namespace fairdiff {

/// Training/evaluation classifier pair over one attribute or a product of attributes.
struct ClassifierView {
  std::string name;
  std::vector<int> attributes;
  AttributeClassifier training;
  AttributeClassifier evaluation;
};

/// Everything derived deterministically from a config: world, data, schedule,
/// classifiers, frozen feature extractors and the realism reference set.
struct Workbench {
  ExperimentConfig config;
  ToyWorldSpec spec;
  Dataset dataset;
  NoiseSchedule schedule;
  DenoiserShape shape;
  std::vector<ClassifierView> views;  // each attribute, then the joint view when there are several
  FeatureExtractors extractors;
  RealismReference realism;

  static Workbench build(const ExperimentConfig& config);

  const ClassifierView& view(const std::string& name) const;
  DenoiserModel initial_model() const;
  /// Aligned-view targets and region, ready for total_loss.
  LossConfig loss_config() const;
  EvaluationSetup evaluation_setup(const DenoiserModel* frozen, int samples_per_context, bool training_role) const;
};

std::string view_name(const std::vector<std::string>& attributes);

/// Validation-time metrics used for checkpoint selection: per aligned view the bias and
/// the gap sum_k |freq_k - target_k| under the training classifiers, averaged over the
/// validation contexts, plus the semantics cosine against the frozen model.
nlohmann::json validation_metrics(const Workbench& bench, const DenoiserModel& model, const DenoiserModel& frozen,
                                  std::span<const int> contexts);

struct PretrainOutcome {
  DenoiserModel model;
  EvaluationReport held_out;
  std::filesystem::path checkpoint;
  std::vector<double> loss_trace;
};

/// Trains the biased base model and writes base.ckpt, pretrain_log.jsonl,
/// pretrain_report.jsonl, pretrain_loss.svg and resolved_config.json into out_dir.
PretrainOutcome run_pretrain(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Loads a checkpoint, resolving a partial (finetune) checkpoint against its base.
/// `frozen`, when given, receives the pretrained base model.
DenoiserModel load_model(const std::filesystem::path& path, DenoiserModel* frozen = nullptr);

struct FinetuneOutcome {
  DenoiserModel best;
  DenoiserModel last;
  long best_iteration = 0;
  nlohmann::json best_metrics;
  std::filesystem::path best_checkpoint;
  std::filesystem::path log;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Alignment finetuning of one parameter subset against a frozen copy of the base model.
/// Writes finetune_log.jsonl, ckpt_XXXXXX.ckpt every checkpoint_every iterations,
/// best.ckpt, last.ckpt, finetune_loss.svg, finetune_validation.svg and resolved_config.json.
FinetuneOutcome run_finetune(const ExperimentConfig& config, const std::filesystem::path& base_checkpoint,
                             const std::filesystem::path& out_dir);

struct InversionTrace {
  GradientMode mode = GradientMode::kAdjusted;
  std::uint64_t seed = 0;
  std::vector<double> loss;       // training loss per iteration (fresh noise each step)
  std::vector<long> eval_iterations;
  std::vector<double> eval_loss;  // loss on a fixed noise batch
  double initial = 0.0;
  double final = 0.0;
  double ratio() const { return final / initial; }
  /// Variance of the per-iteration loss relative to the initial evaluation loss.
  double trace_variance() const;
};

struct InversionResult {
  std::vector<InversionTrace> traces;
  std::vector<double> target;
};

/// Optimises a soft prefix so that samples match a fixed target under the semantics
/// loss, once per (gradient mode, seed). Writes inversion_traces.jsonl and inversion.svg.
InversionResult run_inversion_benchmark(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& out_dir);

struct EvaluateOutcome {
  EvaluationReport report;
  nlohmann::json summary;
};

/// Evaluation-classifier report over the configured context splits. Writes report.jsonl
/// and summary.json (per-view bias and minority-class frequency, mean and std).
EvaluateOutcome run_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& out_dir);

/// Gradient-magnitude diagnostics on the full adjacent chain. Writes diagnostics.jsonl
/// and gradient_magnitudes.svg.
GradDiagnostics run_diagnose(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& out_dir);

}  // namespace fairdiff
