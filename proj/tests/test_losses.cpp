#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fairdiff/errors.hpp"
#include "fairdiff/losses.hpp"
#include "helpers.hpp"

using namespace fairdiff;
using fairdiff::testing::central_difference;
using fairdiff::testing::max_rel_error;

namespace {

Mlp linear_map(int in, int out, const std::vector<double>& w, const std::vector<double>& b) {
  Mlp m({in, out}, Activation::kTanh, 0);
  auto wp = m.layout().view(m.params(), "w0");
  auto bp = m.layout().view(m.params(), "b0");
  std::copy(w.begin(), w.end(), wp.begin());
  std::copy(b.begin(), b.end(), bp.begin());
  return m;
}

FeatureExtractors identity_extractors() {
  const auto id = linear_map(2, 2, {1, 0, 0, 1}, {0, 0});
  return {id, id};
}

OTTargetBatch fixed(std::vector<int> y, std::vector<double> c) {
  OTTargetBatch t;
  t.y = std::move(y);
  t.c = std::move(c);
  return t;
}

}  // namespace

TEST(Semantics, IdenticalInputsCostNothing) {
  const auto ex = make_feature_extractors(6, 3);
  const std::vector<double> x{0.1, -0.2, 0.3, 0.4, -0.5, 0.6};
  EXPECT_NEAR(semantics_loss(x, x, ex), 0.0, 1e-15);
}

TEST(Semantics, OrthogonalAndAntiParallelFeatures) {
  const auto ex = identity_extractors();
  EXPECT_NEAR(semantics_loss(std::vector<double>{1, 0}, std::vector<double>{0, 1}, ex), 2.0, 1e-15);
  EXPECT_NEAR(semantics_loss(std::vector<double>{1, 0}, std::vector<double>{-1, 0}, ex), 4.0, 1e-15);
}

TEST(Semantics, ZeroFeatureCountsAsDissimilar) {
  const auto ex = identity_extractors();
  std::vector<double> g;
  EXPECT_NEAR(semantics_loss(std::vector<double>{0, 0}, std::vector<double>{1, 1}, ex, &g), 2.0, 1e-15);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0}));
}

TEST(Semantics, GradientMatchesFiniteDifferences) {
  const auto ex = make_feature_extractors(5, 9);
  const std::vector<double> x{0.4, -1.0, 0.2, 0.9, -0.3}, o{-0.2, 0.5, 0.8, 0.1, 0.0};
  std::vector<double> g;
  semantics_loss(x, o, ex, &g);
  const auto fd = central_difference(x, [&](const std::vector<double>& xx) { return semantics_loss(xx, o, ex); });
  EXPECT_LT(max_rel_error(g, fd), 1e-7);
}

TEST(Realism, SelfMatchAndOrthogonal) {
  const auto id = linear_map(2, 2, {1, 0, 0, 1}, {0, 0});
  const auto ref = make_realism_reference(id, {{1.0, 0.0}});
  EXPECT_NEAR(realism_loss(std::vector<double>{1.0, 0.0}, ref), 0.0, 1e-15);
  EXPECT_NEAR(realism_loss(std::vector<double>{0.0, 1.0}, ref), 1.0, 1e-15);
  const auto many = make_realism_reference(id, {{0.0, -1.0}, {2.0, 2.0}, {1.0, 0.0}});
  EXPECT_NEAR(realism_loss(std::vector<double>{3.0, 0.0}, many), 0.0, 1e-15);
}

TEST(Realism, ConstantEmbeddingIsAlwaysReal) {
  const auto constant = linear_map(2, 2, {0, 0, 0, 0}, {1.0, -2.0});
  const auto ref = make_realism_reference(constant, {{0.3, 0.1}, {-5.0, 2.0}});
  for (const auto& x : {std::vector<double>{1, 2}, std::vector<double>{-9, 0}}) {
    EXPECT_NEAR(realism_loss(x, ref), 0.0, 1e-15);
  }
}

TEST(Realism, EmptyReferenceSetIsAnError) {
  const auto id = linear_map(2, 2, {1, 0, 0, 1}, {0, 0});
  EXPECT_THROW(realism_loss(std::vector<double>{1, 0}, make_realism_reference(id, {})), ConfigError);
}

TEST(Realism, GradientMatchesFiniteDifferences) {
  Mlp embed({3, 6, 4}, Activation::kTanh, 12);
  const auto ref = make_realism_reference(embed, {{1.0, 0.2, -0.4}, {-0.3, 0.8, 0.5}, {0.0, -1.0, 0.1}});
  const std::vector<double> x{0.3, 0.1, -0.2};
  std::vector<double> g;
  realism_loss(x, ref, &g);
  const auto fd = central_difference(x, [&](const std::vector<double>& xx) { return realism_loss(xx, ref); });
  EXPECT_LT(max_rel_error(g, fd), 1e-7);
}

TEST(Alignment, InactiveBelowThreshold) {
  const ProbMatrix logits{{2.0, -1.0}, {0.0, 0.5}};
  const auto v = alignment_loss(logits, fixed({1, 0}, {0.6, 0.79}), 0.8);
  EXPECT_EQ(v.value, 0.0);
  EXPECT_EQ(v.active, 0);
}

TEST(Alignment, ConfidentCorrectPredictionCostsNothing) {
  const auto v = alignment_loss(ProbMatrix{{0.0, -1000.0}}, fixed({0}, {0.9}), 0.8);
  EXPECT_EQ(v.value, 0.0);
}

TEST(Alignment, UniformPredictionCostsLogTwo) {
  const auto v = alignment_loss(ProbMatrix{{0.3, 0.3}}, fixed({0}, {1.0}), 0.8);
  EXPECT_NEAR(v.value, std::log(2.0), 1e-15);
  EXPECT_NEAR(v.grad_logits[0][0], -0.5, 1e-15);
  EXPECT_NEAR(v.grad_logits[0][1], 0.5, 1e-15);
}

TEST(Alignment, AveragesOverTheWholeBatch) {
  const ProbMatrix logits{{0.0, 0.0}, {5.0, 1.0}};
  const auto v = alignment_loss(logits, fixed({1, 0}, {0.9, 0.1}), 0.8);
  EXPECT_NEAR(v.value, 0.5 * std::log(2.0), 1e-15);
  EXPECT_EQ(v.active, 1);
  EXPECT_EQ(v.grad_logits[1], (std::vector<double>{0.0, 0.0}));
}

TEST(DynamicWeights, AgreementUsesLambdaOne) {
  LossConfig cfg;
  const std::vector<int> region{0, 1};
  EXPECT_EQ(dynamic_weights(1, 1, region, 4, cfg), std::vector<double>(4, 8.0));
}

TEST(DynamicWeights, DisagreementSplitsByRegion) {
  LossConfig cfg;
  const std::vector<int> region{0, 1};
  const auto w = dynamic_weights(0, 1, region, 4, cfg);
  EXPECT_NEAR(w[0], 0.32, 1e-15);
  EXPECT_NEAR(w[1], 0.32, 1e-15);
  EXPECT_NEAR(w[2], 1.6, 1e-15);
  EXPECT_NEAR(w[3], 1.6, 1e-15);
  EXPECT_NEAR(cfg.lambda_img_2, 0.2 * cfg.lambda_img_1, 1e-15);
  EXPECT_NEAR(cfg.lambda_img_3, 0.2 * cfg.lambda_img_2, 1e-15);
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  EXPECT_TRUE(cfg.validate().empty());
  cfg.lambda_img_3 = 5.0;
  EXPECT_EQ(cfg.validate().size(), 1u);
  cfg.confidence_threshold = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

class TotalLossTest : public ::testing::Test {
 protected:
  void SetUp() override {
    extractors = make_feature_extractors(4, 1);
    realism = make_realism_reference(Mlp({2, 5, 3}, Activation::kTanh, 2), {{1.0, 0.0}, {-1.0, 0.5}, {0.2, -0.9}});
    classifier = Mlp({2, 6, 2}, Activation::kTanh, 3);
    config.region = {0, 1};
    config.targets = {TargetDistribution::uniform(2)};
    inputs.extractors = &extractors;
    inputs.realism = &realism;
    inputs.attributes = {{"gender", &classifier}};
    x = {{0.9, -0.1, 0.3, 0.2}, {-0.8, 0.4, -0.2, 0.5}, {0.1, 0.2, 0.3, -0.4}};
    o = {{1.0, 0.0, 0.2, 0.2}, {-0.6, 0.3, 0.0, 0.7}, {0.5, -0.2, 0.3, -0.1}};
  }
  FeatureExtractors extractors;
  RealismReference realism;
  Mlp classifier;
  LossConfig config;
  LossInputs inputs;
  std::vector<std::vector<double>> x, o;
};

TEST_F(TotalLossTest, AllWeightsZeroAndNothingConfident) {
  config.lambda_face = config.lambda_img_1 = config.lambda_img_2 = config.lambda_img_3 = 0.0;
  const std::vector<OTTargetBatch> targets{fixed({0, 1, 0}, {0.5, 0.5, 0.5})};
  const auto l = total_loss(x, o, config, inputs, &targets);
  EXPECT_EQ(l.total, 0.0);
  for (const auto& g : l.grad_x) EXPECT_EQ(g, std::vector<double>(4, 0.0));
}

TEST_F(TotalLossTest, IdenticalBatchesWithoutRealism) {
  config.lambda_face = 0.0;
  const std::vector<OTTargetBatch> targets{fixed({0, 1, 0}, {0.5, 0.5, 0.5})};
  EXPECT_NEAR(total_loss(x, x, config, inputs, &targets).total, 0.0, 1e-14);
}

TEST_F(TotalLossTest, SingleActiveTermIsTheTotal) {
  config.lambda_face = config.lambda_img_1 = config.lambda_img_2 = config.lambda_img_3 = 0.0;
  config.confidence_threshold = 0.0;
  const std::vector<OTTargetBatch> targets{fixed({0, 1, 1}, {0.5, 0.5, 0.5})};
  const auto l = total_loss(x, o, config, inputs, &targets);
  EXPECT_GT(l.align, 0.0);
  EXPECT_EQ(l.total, l.align);
}

TEST_F(TotalLossTest, SamplesWithoutRegionOnlyKeepSemantics) {
  inputs.has_region = {0, 0, 0};
  config.confidence_threshold = 0.0;
  const std::vector<OTTargetBatch> targets{fixed({1, 1, 1}, {1.0, 1.0, 1.0})};
  const auto l = total_loss(x, o, config, inputs, &targets);
  EXPECT_EQ(l.align, 0.0);
  EXPECT_EQ(l.face, 0.0);
  EXPECT_EQ(l.weight_agree, 3);
  double img = 0.0;
  for (std::size_t i = 0; i < 3; ++i) img += config.lambda_img_1 * semantics_loss(x[i], o[i], extractors) / 3.0;
  EXPECT_NEAR(l.img, img, 1e-14);
}

TEST_F(TotalLossTest, GradientMatchesFiniteDifferences) {
  config.confidence_threshold = 0.0;
  const std::vector<OTTargetBatch> targets{fixed({0, 1, 1}, {0.9, 0.9, 0.9})};
  const auto l = total_loss(x, o, config, inputs, &targets);
  EXPECT_GT(l.weight_disagree, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto fd = central_difference(x[i], [&](const std::vector<double>& xi) {
      auto xx = x;
      xx[i] = xi;
      return total_loss(xx, o, config, inputs, &targets).total;
    });
    EXPECT_LT(max_rel_error(l.grad_x[i], fd), 1e-6) << "sample " << i;
  }
}

TEST(AlignmentTargets, ConditionalTargetsHoldWithinEachGroup) {
  const ProbMatrix gender{{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}};
  const ProbMatrix age{{0.7, 0.3}, {0.2, 0.8}, {0.6, 0.4}, {0.9, 0.1}};
  LossConfig cfg;
  cfg.targets = {TargetDistribution::uniform(2), TargetDistribution{{0.5, 0.5}, {}, 0}};
  const std::vector<std::vector<int>> frozen{{0, 1, 0, 1}, {0, 0, 0, 0}};
  const auto t = build_alignment_targets({gender, age}, frozen, {}, cfg, OtMethod::exact());
  const auto a = expected_ot_targets({age[0], age[2]}, TargetDistribution::uniform(2), OtMethod::exact());
  const auto b = expected_ot_targets({age[1], age[3]}, TargetDistribution::uniform(2), OtMethod::exact());
  EXPECT_EQ(t[1].q[0], a.q[0]);
  EXPECT_EQ(t[1].q[2], a.q[1]);
  EXPECT_EQ(t[1].q[1], b.q[0]);
  EXPECT_EQ(t[1].q[3], b.q[1]);
  EXPECT_EQ(t[0].q, expected_ot_targets(gender, TargetDistribution::uniform(2), OtMethod::exact()).q);
}
