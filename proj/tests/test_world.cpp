#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fairdiff/errors.hpp"
#include "fairdiff/losses.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/sampler.hpp"
#include "fairdiff/world.hpp"

using namespace fairdiff;

TEST(BiasMetric, Examples) {
  EXPECT_DOUBLE_EQ(bias_metric(std::vector<double>{1.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(bias_metric(std::vector<double>{0.5, 0.5}), 0.0);
  EXPECT_NEAR(bias_metric(std::vector<double>{0.4, 0.3, 0.2, 0.1}), 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(bias_metric(std::vector<double>{0.9, 0.1}), 0.8, 1e-15);
}

TEST(BiasMetric, GridSearchAgainstPairEnumeration) {
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; a + b <= 10; ++b) {
      const std::vector<double> f{a / 10.0, b / 10.0, (10 - a - b) / 10.0};
      const double want = (std::abs(f[0] - f[1]) + std::abs(f[0] - f[2]) + std::abs(f[1] - f[2])) / 3.0;
      EXPECT_NEAR(bias_metric(f), want, 1e-15);
    }
  }
}

TEST(World, PresetLayout) {
  const auto spec = make_world_spec("gender", {});
  EXPECT_EQ(spec.num_contexts(), 28);
  EXPECT_EQ(spec.contexts_in(ContextSplit::kTrain).size(), 20u);
  EXPECT_EQ(spec.contexts_in(ContextSplit::kValidation).size(), 3u);
  EXPECT_EQ(spec.contexts_in(ContextSplit::kHeldOut).size(), 5u);
  EXPECT_EQ(spec.region_mask, (std::vector<int>{0, 1, 2, 3}));
  for (int c = 0; c < spec.num_contexts(); ++c) {
    for (int r : spec.region_mask) EXPECT_EQ(spec.context_centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)], 0.0);
  }
  const auto two = make_world_spec("two_family", {});
  EXPECT_EQ(two.num_families(), 2);
  EXPECT_NEAR(two.marginal(two.contexts_in(ContextSplit::kHeldOut, 1).front(), 0)[1], 0.85, 1e-15);
  const auto inter = make_world_spec("intersectional", {});
  EXPECT_EQ(inter.joint_classes(), 4);
  EXPECT_NEAR(inter.bias_table[0][inter.encode_joint(std::vector<int>{1, 1})], 0.1 * 0.2, 1e-15);
  EXPECT_THROW(make_world_spec("nonsense", {}), ConfigError);
}

TEST(World, EmpiricalFrequencyFollowsBiasTable) {
  const auto spec = make_world_spec("gender", {});
  const auto data = sample_context(spec, 3, 10000, 17);
  double ones = 0.0;
  for (const auto& s : data) {
    EXPECT_EQ(s.context, 3);
    ones += s.labels[0];
  }
  EXPECT_NEAR(ones / 10000.0, 0.1, 0.01);
}

TEST(World, ZeroNoiseHitsModeCenters) {
  WorldPresetOptions opt;
  opt.noise_scale = 0.0;
  const auto spec = make_world_spec("gender_age", opt);
  for (const auto& s : sample_context(spec, 5, 50, 2)) EXPECT_EQ(s.x0, spec.mode_center(5, s.labels));
}

TEST(World, Deterministic) {
  const auto spec = make_world_spec("intersectional", {});
  EXPECT_EQ(make_world(spec, 500, 4), make_world(spec, 500, 4));
  EXPECT_NE(make_world(spec, 500, 4), make_world(spec, 500, 5));
}

class ClassifierTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    spec_ = new ToyWorldSpec(make_world_spec("gender_age", {}));
    const auto data = make_world(*spec_, 4000, 8);
    training_ = new AttributeClassifier(train_classifier(*spec_, data, {0, 1}, ClassifierRole::kTraining, 1));
    evaluation_ = new AttributeClassifier(train_classifier(*spec_, data, {0, 1}, ClassifierRole::kEvaluation, 2));
  }
  static void TearDownTestSuite() {
    delete spec_;
    delete training_;
    delete evaluation_;
  }
  static ToyWorldSpec* spec_;
  static AttributeClassifier* training_;
  static AttributeClassifier* evaluation_;
};
ToyWorldSpec* ClassifierTest::spec_ = nullptr;
AttributeClassifier* ClassifierTest::training_ = nullptr;
AttributeClassifier* ClassifierTest::evaluation_ = nullptr;

TEST_F(ClassifierTest, SeparableWorldIsLearned) {
  EXPECT_GE(training_->held_out_accuracy, 0.99);
  EXPECT_GE(evaluation_->held_out_accuracy, 0.99);
  EXPECT_EQ(training_->classes, 4);
}

TEST_F(ClassifierTest, RolesDiffer) {
  EXPECT_NE(training_->descriptor(), evaluation_->descriptor());
  EXPECT_NE(training_->net.sizes(), evaluation_->net.sizes());
}

TEST_F(ClassifierTest, ModeCentersAreClassifiedCorrectly) {
  for (int c = 0; c < spec_->num_contexts(); ++c) {
    for (int j = 0; j < spec_->joint_classes(); ++j) {
      const auto labels = spec_->decode_joint(j);
      const auto x = spec_->mode_center(c, labels);
      const int want = view_label(*spec_, std::vector<int>{0, 1}, labels);
      EXPECT_EQ(training_->predict(x, spec_->region_mask), want);
      EXPECT_EQ(evaluation_->predict(x, spec_->region_mask), want);
    }
  }
}

TEST_F(ClassifierTest, UnlearnableLabelsRaiseTrainingError) {
  auto data = make_world(*spec_, 600, 9);
  Rng rng(1);
  for (auto& s : data) s.labels[0] = static_cast<int>(rng.uniform_int(0, 1));
  EXPECT_THROW(train_classifier(*spec_, data, {0}, ClassifierRole::kTraining, 3), TrainingError);
}

class EvaluationTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    spec_ = new ToyWorldSpec(make_world_spec("gender", {}));
    schedule_ = new NoiseSchedule(build_noise_schedule(100, 0.0085, 0.12, ScheduleKind::kScaledLinear));
    classifier_ = new AttributeClassifier(
        train_classifier(*spec_, make_world(*spec_, 3000, 1), {0}, ClassifierRole::kEvaluation, 5));
    DenoiserShape shape;
    shape.num_contexts = spec_->num_contexts();
    std::vector<double> tokens;
    for (const auto& t : spec_->tokens) tokens.insert(tokens.end(), t.begin(), t.end());
    PretrainOptions opt;
    opt.iterations = 1500;
    opt.seed = 3;
    const auto data = make_world(*spec_, 6000, 2);
    biased_ = new DenoiserModel(pretrain_denoiser(data, DenoiserModel::create(shape, 4, tokens), *schedule_, opt).model);
    Dataset minority;
    for (const auto& s : data) {
      if (s.labels[0] == 1) minority.push_back(s);
    }
    one_class_ =
        new DenoiserModel(pretrain_denoiser(minority, DenoiserModel::create(shape, 4, tokens), *schedule_, opt).model);
  }
  static void TearDownTestSuite() {
    delete spec_;
    delete schedule_;
    delete classifier_;
    delete biased_;
    delete one_class_;
  }
  EvaluationSetup setup(const DenoiserModel* frozen) const {
    EvaluationSetup s;
    s.schedule = schedule_;
    s.sampler = SamplerConfig::strided(100, 21);
    s.region = spec_->region_mask;
    s.eval_classifiers = {classifier_};
    s.frozen = frozen;
    s.extractors = &extractors_;
    s.samples_per_context = 200;
    s.seed = 12;
    return s;
  }
  FeatureExtractors extractors_ = make_feature_extractors(8, 6);
  static ToyWorldSpec* spec_;
  static NoiseSchedule* schedule_;
  static AttributeClassifier* classifier_;
  static DenoiserModel* biased_;
  static DenoiserModel* one_class_;
};
ToyWorldSpec* EvaluationTest::spec_ = nullptr;
NoiseSchedule* EvaluationTest::schedule_ = nullptr;
AttributeClassifier* EvaluationTest::classifier_ = nullptr;
DenoiserModel* EvaluationTest::biased_ = nullptr;
DenoiserModel* EvaluationTest::one_class_ = nullptr;

TEST_F(EvaluationTest, FrozenAgainstItselfHasUnitSemantics) {
  const auto held = spec_->contexts_in(ContextSplit::kHeldOut);
  const auto r = evaluate_model(*biased_, held, *spec_, setup(biased_));
  for (const auto& c : r.contexts) EXPECT_NEAR(c.semantics_cosine, 1.0, 1e-12);
  EXPECT_NEAR(r.semantics_mean, 1.0, 1e-12);
}

TEST_F(EvaluationTest, BiasedModelReproducesDataBias) {
  const auto held = spec_->contexts_in(ContextSplit::kHeldOut);
  const auto r = evaluate_model(*biased_, held, *spec_, setup(nullptr));
  ASSERT_EQ(r.summary.size(), 1u);
  EXPECT_NEAR(r.summary[0].bias_mean, 0.8, 0.08);
  for (const auto& c : r.contexts) EXPECT_NEAR(c.views[0].freqs[0], 0.9, 0.05 + 3.0 * std::sqrt(0.09 / 200.0));
}

TEST_F(EvaluationTest, SingleClassModelIsMaximallyBiased) {
  const auto held = spec_->contexts_in(ContextSplit::kHeldOut);
  const auto r = evaluate_model(*one_class_, held, *spec_, setup(nullptr));
  EXPECT_GT(r.summary[0].bias_mean, 0.95);
  EXPECT_GT(r.summary[0].freq_mean[1], 0.97);
}

TEST_F(EvaluationTest, TrainingRoleIsRejectedForEvaluation) {
  auto s = setup(nullptr);
  const auto train = train_classifier(*spec_, make_world(*spec_, 2000, 1), {0}, ClassifierRole::kTraining, 5);
  s.eval_classifiers = {&train};
  const auto held = spec_->contexts_in(ContextSplit::kHeldOut);
  EXPECT_THROW(evaluate_model(*biased_, held, *spec_, s), ConfigError);
}

TEST(EvaluationNoise, SharedAcrossModels) {
  EXPECT_EQ(evaluation_noise(3, 2, 7, 8), evaluation_noise(3, 2, 7, 8));
  EXPECT_NE(evaluation_noise(3, 2, 7, 8), evaluation_noise(3, 2, 8, 8));
}
