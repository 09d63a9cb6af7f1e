#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairdiff/mlp.hpp"
#include "fairdiff/ot.hpp"

namespace fairdiff {

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Two frozen feature maps standing in for the text-supervised and self-supervised
/// image encoders used to measure semantic drift.
struct FeatureExtractors {
  Mlp first;
  Mlp second;
};

FeatureExtractors make_feature_extractors(int data_dim, std::uint64_t seed);

/// Frozen region embedding plus the embedded external reference set D_F.
struct RealismReference {
  Mlp embed;
  std::vector<std::vector<double>> reference_embeddings;
};

RealismReference make_realism_reference(Mlp embed, const std::vector<std::vector<double>>& reference_regions);

/// Sum over both extractors of (1 - cos(feat(x), feat(o))). A zero-norm feature vector
/// counts as dissimilarity 1 for that extractor. When grad_x is given it receives d/dx.
double semantics_loss(std::span<const double> x, std::span<const double> o, const FeatureExtractors& extractors,
                      std::vector<double>* grad_x = nullptr);

/// 1 - max_F cos(embed(region_x), embed(F)). Throws ConfigError on an empty reference set.
double realism_loss(std::span<const double> region_x, const RealismReference& reference,
                    std::vector<double>* grad_region = nullptr);

struct AlignmentLossValue {
  double value = 0.0;
  ProbMatrix grad_logits;  // d value / d logits
  int active = 0;          // samples with c >= C
};

/// (1/N) sum_i 1[c_i >= C] CE(softmax(logits_i), y_i); targets are constants.
AlignmentLossValue alignment_loss(const ProbMatrix& logits, const OTTargetBatch& targets, double confidence_threshold);

std::vector<double> softmax(std::span<const double> logits);

struct LossConfig {
  double confidence_threshold = 0.8;
  double lambda_face = 1.0;
  double lambda_img_1 = 8.0;
  double lambda_img_2 = 1.6;
  double lambda_img_3 = 0.32;
  std::vector<int> region;                  // 0-based coordinates of the attribute-bearing region
  std::vector<TargetDistribution> targets;  // one per aligned attribute view

  /// Non-fatal issues (e.g. lambda_img ordering); hard violations throw ConfigError.
  std::vector<std::string> validate() const;
};

/// Per-coordinate weight map of the semantics term for one sample: uniform lambda_img_1
/// when the target class agrees with the frozen sample's class, otherwise lambda_img_2
/// off-region and lambda_img_3 on-region.
std::vector<double> dynamic_weights(int target_class, int frozen_class, std::span<const int> region, int data_dim,
                                    const LossConfig& config);

/// Classifier-backed aligned attribute; the classifier reads the region slice.
struct AlignedAttribute {
  std::string name;
  const Mlp* classifier = nullptr;
};

struct LossInputs {
  const FeatureExtractors* extractors = nullptr;
  const RealismReference* realism = nullptr;
  std::vector<AlignedAttribute> attributes;  // parallel to LossConfig::targets
  OtMethod ot;
  std::vector<unsigned char> has_region;  // per sample; empty means every sample has one
};

struct TotalLoss {
  double total = 0.0;
  double align = 0.0;
  double img = 0.0;
  double face = 0.0;
  std::vector<double> align_per_attribute;
  std::vector<std::vector<double>> grad_x;  // d total / d x_i
  std::vector<OTTargetBatch> targets;       // per attribute
  std::vector<std::vector<int>> frozen_classes;
  int weight_agree = 0;     // samples weighted with lambda_img_1
  int weight_disagree = 0;  // samples with the region-split weights
  int align_active = 0;
};

std::vector<double> region_slice(std::span<const double> x, std::span<const int> region);

/// Computes per-attribute OT targets from the classifier probabilities on x. Conditional
/// targets partition the batch by the frozen model's predicted class of the conditioning
/// attribute and run the OT target generator inside each partition.
std::vector<OTTargetBatch> build_alignment_targets(const std::vector<ProbMatrix>& probs,
                                                   const std::vector<std::vector<int>>& frozen_classes,
                                                   std::span<const unsigned char> has_region,
                                                   const LossConfig& config, const OtMethod& method);

/// L_align + dynamic-weighted L_img + lambda_face L_face over a paired batch (x from the
/// model being finetuned, o from the frozen copy on the same initial noise), with the
/// gradient with respect to every x_i. `fixed_targets` bypasses target generation.
TotalLoss total_loss(const std::vector<std::vector<double>>& batch_x, const std::vector<std::vector<double>>& batch_o,
                     const LossConfig& config, const LossInputs& inputs,
                     const std::vector<OTTargetBatch>* fixed_targets = nullptr);

}  // namespace fairdiff
