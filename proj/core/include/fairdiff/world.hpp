#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/dataset.hpp"
#include "fairdiff/denoiser.hpp"
#include "fairdiff/losses.hpp"
#include "fairdiff/mlp.hpp"
#include "fairdiff/schedule.hpp"

namespace fairdiff {

struct AttributeSpec {
  std::string name;
  int classes = 2;
};

enum class ContextSplit { kTrain, kValidation, kHeldOut };

const char* to_string(ContextSplit split);

struct ContextInfo {
  std::string name;
  int family = 0;
  ContextSplit split = ContextSplit::kTrain;
};

/// Synthetic attribute-labelled world. Mode centers are context_centers[c] plus one
/// offset per attribute class; attribute offsets are non-zero only on the region.
/// bias_table rows are joint distributions over the attribute combinations, enumerated
/// row-major in attribute order.
struct ToyWorldSpec {
  std::vector<AttributeSpec> attributes;
  std::vector<ContextInfo> contexts;
  std::vector<std::vector<double>> bias_table;
  int data_dim = 8;
  std::vector<int> region_mask;  // 0-based coordinates
  std::vector<std::vector<double>> context_centers;
  std::vector<std::vector<std::vector<double>>> attribute_offsets;  // [attribute][class][coordinate]
  std::vector<std::vector<double>> tokens;                          // per-context denoiser token init
  double noise_scale = 0.3;

  int num_contexts() const { return static_cast<int>(contexts.size()); }
  int joint_classes() const;
  int encode_joint(std::span<const int> labels) const;
  std::vector<int> decode_joint(int joint) const;
  std::vector<double> mode_center(int context, std::span<const int> labels) const;
  /// Marginal class distribution of one attribute for a context.
  std::vector<double> marginal(int context, int attribute) const;
  std::vector<int> contexts_in(ContextSplit split, std::optional<int> family = std::nullopt) const;
  int num_families() const;

  /// Throws ConfigError when any invariant fails (row sums, region bounds, separation).
  void validate() const;
};

struct WorldPresetOptions {
  int train_per_family = 20;
  int validation_per_family = 3;
  int held_out_per_family = 5;
  int data_dim = 8;
  double noise_scale = 0.3;
  double attribute_scale = 1.0;
  std::uint64_t seed = 0;
};

/// Named presets: "gender" (one binary attribute, every context 0.9/0.1), "gender_age"
/// (gender 0.9/0.1 plus a per-context-varying binary age attribute), "two_family" (two
/// context families biased in opposite directions) and "intersectional" (gender x race, 2x2).
ToyWorldSpec make_world_spec(std::string_view preset, const WorldPresetOptions& options);

/// Samples contexts uniformly, attributes from bias_table, x0 = center + noise.
Dataset make_world(const ToyWorldSpec& spec, std::size_t num_samples, std::uint64_t seed);

/// Draws `count` samples for one fixed context.
Dataset sample_context(const ToyWorldSpec& spec, int context, std::size_t count, std::uint64_t seed);

enum class ClassifierRole { kTraining, kEvaluation };

const char* to_string(ClassifierRole role);

/// Classifier over the region slice for a view of one or more attributes (the product
/// space when several are listed).
struct AttributeClassifier {
  Mlp net;
  std::vector<int> attributes;
  int classes = 2;
  ClassifierRole role = ClassifierRole::kTraining;
  double held_out_accuracy = 0.0;

  std::string descriptor() const;
  std::vector<double> logits(std::span<const double> x, std::span<const int> region) const;
  int predict(std::span<const double> x, std::span<const int> region) const;
};

struct ClassifierTrainOptions {
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = 5e-3;
  double min_accuracy = 0.99;
};

int view_label(const ToyWorldSpec& spec, std::span<const int> attributes, std::span<const int> labels);
int view_classes(const ToyWorldSpec& spec, std::span<const int> attributes);

/// Trains a region classifier. Training and evaluation roles use different seeds and
/// architectures. Throws TrainingError when held-out accuracy stays below min_accuracy.
AttributeClassifier train_classifier(const ToyWorldSpec& spec, const Dataset& dataset, std::vector<int> attributes,
                                     ClassifierRole role, std::uint64_t seed,
                                     const ClassifierTrainOptions& options = {});

/// Mean absolute pairwise difference of group frequencies divided by K(K-1)/2.
double bias_metric(std::span<const double> freqs);

struct ViewReport {
  std::string name;
  std::vector<double> freqs;
  double bias = 0.0;
};

struct ContextReport {
  int context = 0;
  std::string name;
  int family = 0;
  ContextSplit split = ContextSplit::kTrain;
  std::vector<ViewReport> views;
  double semantics_cosine = 0.0;        // mean over samples and both extractors (when a frozen model is given)
  double classifier_disagreement = 0.0;  // evaluation vs training classifier (when given)
};

struct ViewSummary {
  std::string name;
  double bias_mean = 0.0;
  double bias_std = 0.0;
  std::vector<double> freq_mean;
  std::vector<double> freq_std;
};

struct EvaluationReport {
  std::vector<ContextReport> contexts;
  std::vector<ViewSummary> summary;
  double semantics_mean = 0.0;
  double disagreement_mean = 0.0;
  int samples_per_context = 0;
};

struct EvaluationSetup {
  const NoiseSchedule* schedule = nullptr;
  SamplerConfig sampler;
  std::span<const int> region;
  std::vector<const AttributeClassifier*> eval_classifiers;
  std::vector<const AttributeClassifier*> train_classifiers;  // optional, parallel to eval_classifiers
  const DenoiserModel* frozen = nullptr;                      // optional semantics reference
  const FeatureExtractors* extractors = nullptr;
  int samples_per_context = 200;
  std::uint64_t seed = 0;
  bool require_evaluation_role = true;  // false for validation-time selection with training classifiers
};

/// Generates samples_per_context samples per context (noise stream keyed by context and
/// seed, so two models see identical initial noise) and reports per-context attribute
/// frequencies, bias, semantics cosine against the frozen model and classifier disagreement.
EvaluationReport evaluate_model(const DenoiserModel& model, std::span<const int> contexts, const ToyWorldSpec& spec,
                                const EvaluationSetup& setup);

/// Deterministic per-(seed, context, index) initial noise shared by every model evaluated.
std::vector<double> evaluation_noise(std::uint64_t seed, int context, int index, int data_dim);

}  // namespace fairdiff
