#include "fairdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "fairdiff/errors.hpp"
#include "fairdiff/report.hpp"
#include "fairdiff/rng.hpp"

namespace fairdiff {

namespace fs = std::filesystem;

// Stream tags for derive_seed; each consumer of the run seed gets its own stream.
namespace stream {
constexpr std::uint64_t kDataset = 1, kClassifierData = 2, kTrainClassifier = 3, kEvalClassifier = 4,
                        kExtractors = 5, kRealismEmbed = 6, kRealismData = 7, kEvaluation = 8, kModelInit = 9,
                        kAdapterInit = 10, kFinetunePick = 11, kFinetuneNoise = 12, kFinetuneSampler = 13,
                        kDiagnose = 14, kOt = 15, kInvertNoise = 16, kInvertEval = 17, kValidation = 18;
}

std::string view_name(const std::vector<std::string>& attributes) {
  std::string name;
  for (const auto& a : attributes) {
    if (!name.empty()) name += "x";
    name += a;
  }
  return name;
}

Workbench Workbench::build(const ExperimentConfig& config) {
  Workbench b;
  b.config = config;
  const auto seed = config.seed;
  b.spec = make_world_spec(config.preset, config.world);
  b.dataset = make_world(b.spec, config.world_samples, derive_seed(seed, stream::kDataset));
  b.schedule = build_noise_schedule(config.schedule.T, config.schedule.beta_start, config.schedule.beta_end,
                                    config.schedule.kind);
  b.shape = config.shape;
  b.shape.data_dim = b.spec.data_dim;
  b.shape.num_contexts = b.spec.num_contexts();
  b.shape.max_timestep = config.schedule.T;
  b.shape.adapter_rank = 0;

  std::vector<std::vector<int>> view_attrs;
  for (int a = 0; a < static_cast<int>(b.spec.attributes.size()); ++a) view_attrs.push_back({a});
  if (b.spec.attributes.size() > 1) {
    std::vector<int> all(b.spec.attributes.size());
    std::iota(all.begin(), all.end(), 0);
    view_attrs.push_back(all);
  }
  const auto clf_data = make_world(b.spec, config.classifier_samples, derive_seed(seed, stream::kClassifierData));
  for (std::size_t v = 0; v < view_attrs.size(); ++v) {
    ClassifierView cv;
    cv.attributes = view_attrs[v];
    std::vector<std::string> names;
    for (int a : cv.attributes) names.push_back(b.spec.attributes[static_cast<std::size_t>(a)].name);
    cv.name = view_name(names);
    cv.training = train_classifier(b.spec, clf_data, cv.attributes, ClassifierRole::kTraining,
                                   derive_seed(seed, stream::kTrainClassifier, v));
    cv.evaluation = train_classifier(b.spec, clf_data, cv.attributes, ClassifierRole::kEvaluation,
                                     derive_seed(seed, stream::kEvalClassifier, v));
    b.views.push_back(std::move(cv));
  }

  b.extractors = make_feature_extractors(b.spec.data_dim, derive_seed(seed, stream::kExtractors));
  const int region = static_cast<int>(b.spec.region_mask.size());
  Mlp embed({region, 16, 8}, Activation::kTanh, derive_seed(seed, stream::kRealismEmbed));
  std::vector<std::vector<double>> refs;
  for (const auto& s : make_world(b.spec, config.realism_references, derive_seed(seed, stream::kRealismData))) {
    refs.push_back(region_slice(s.x0, b.spec.region_mask));
  }
  b.realism = make_realism_reference(std::move(embed), refs);
  return b;
}

const ClassifierView& Workbench::view(const std::string& name) const {
  for (const auto& v : views) {
    if (v.name == name) return v;
  }
  throw ConfigError("no classifier view named '" + name + "'");
}

DenoiserModel Workbench::initial_model() const {
  std::vector<double> tokens;
  const bool fits = std::all_of(spec.tokens.begin(), spec.tokens.end(),
                                [&](const auto& t) { return t.size() == static_cast<std::size_t>(shape.token_dim); });
  if (fits) {
    for (const auto& t : spec.tokens) tokens.insert(tokens.end(), t.begin(), t.end());
  }
  return DenoiserModel::create(shape, derive_seed(config.seed, stream::kModelInit), tokens);
}

LossConfig Workbench::loss_config() const {
  LossConfig cfg = config.loss;
  cfg.region = spec.region_mask;
  cfg.targets.clear();
  std::vector<std::string> names;
  for (const auto& v : config.finetune.views) names.push_back(view_name(v.attributes));
  for (const auto& v : config.finetune.views) {
    const auto& cv = view(view_name(v.attributes));
    if (static_cast<int>(v.target.size()) != cv.training.classes) {
      throw ConfigError("target for view '" + cv.name + "' needs " + std::to_string(cv.training.classes) + " entries");
    }
    TargetDistribution t;
    t.probs = v.target;
    if (v.conditional_on) {
      const auto it = std::find(names.begin(), names.end(), *v.conditional_on);
      if (it == names.end()) throw ConfigError("conditional_on names an unknown aligned view '" + *v.conditional_on + "'");
      t.conditional_on = static_cast<int>(it - names.begin());
    }
    cfg.targets.push_back(std::move(t));
  }
  cfg.validate();
  return cfg;
}

EvaluationSetup Workbench::evaluation_setup(const DenoiserModel* frozen, int samples_per_context,
                                            bool training_role) const {
  EvaluationSetup s;
  s.schedule = &schedule;
  s.sampler = config.sampler.build(schedule.T());
  s.region = spec.region_mask;
  for (const auto& v : views) {
    if (training_role) {
      s.eval_classifiers.push_back(&v.training);
    } else {
      s.eval_classifiers.push_back(&v.evaluation);
      s.train_classifiers.push_back(&v.training);
    }
  }
  s.require_evaluation_role = !training_role;
  s.frozen = frozen;
  s.extractors = &extractors;
  s.samples_per_context = samples_per_context;
  s.seed = derive_seed(config.seed, training_role ? stream::kValidation : stream::kEvaluation);
  return s;
}

namespace {

nlohmann::json bias_by_view(const EvaluationReport& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : r.summary) j[s.name] = {{"mean", s.bias_mean}, {"std", s.bias_std}};
  return j;
}

void write_resolved(const ExperimentConfig& config, const fs::path& out_dir) {
  write_json(out_dir / "resolved_config.json", config.raw);
}

fs::path resolve_relative(const fs::path& p, const fs::path& anchor) {
  if (p.is_absolute()) return p;
  return anchor.parent_path() / p;
}

}  // namespace

PretrainOutcome run_pretrain(const ExperimentConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_resolved(config, out_dir);
  const auto bench = Workbench::build(config);
  PretrainOutcome out;
  out.checkpoint = out_dir / "base.ckpt";
  PretrainResult result;
  try {
    result = pretrain_denoiser(bench.dataset, bench.initial_model(), bench.schedule, config.pretrain);
  } catch (const TrainingDiverged& e) {
    auto ckpt = make_full_checkpoint(e.last_finite(), "pretrain", e.iteration());
    ckpt.config = config.raw;
    ckpt.metrics = {{"diverged", true}};
    save_checkpoint(out_dir / "last_finite.ckpt", ckpt);
    throw;
  }
  out.model = std::move(result.model);
  out.loss_trace = result.loss_trace;

  JsonlWriter log(out_dir / "pretrain_log.jsonl");
  PlotSeries loss_series{"denoising loss", {}, {}, {}, {}};
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    const long it = std::min<long>(static_cast<long>(i + 1) * config.pretrain.log_every, config.pretrain.iterations);
    log.write({{"iteration", it}, {"loss", result.loss_trace[i]}});
    loss_series.x.push_back(static_cast<double>(it));
    loss_series.y.push_back(result.loss_trace[i]);
  }
  write_svg_plot(out_dir / "pretrain_loss.svg", {"Pretraining", "iteration", "denoising MSE", true, {loss_series}});

  const auto held_out = bench.spec.contexts_in(ContextSplit::kHeldOut);
  out.held_out = evaluate_model(out.model, held_out, bench.spec,
                                bench.evaluation_setup(nullptr, config.evaluate.samples_per_context, false));
  JsonlWriter report(out_dir / "pretrain_report.jsonl");
  for (const auto& rec : report_to_records(out.held_out)) report.write(rec);

  auto ckpt = make_full_checkpoint(out.model, "pretrain", config.pretrain.iterations);
  ckpt.config = config.raw;
  ckpt.metrics = {{"initial_loss", result.initial_loss},
                  {"final_loss", result.final_loss},
                  {"held_out_bias", bias_by_view(out.held_out)}};
  save_checkpoint(out.checkpoint, ckpt);
  return out;
}

DenoiserModel load_model(const fs::path& path, DenoiserModel* frozen) {
  const auto ckpt = load_checkpoint(path);
  if (ckpt.segments.empty()) {
    auto model = restore_model(ckpt);
    if (frozen) *frozen = model;
    return model;
  }
  if (ckpt.base_checkpoint.empty()) throw IoError("partial checkpoint does not name its base");
  DenoiserModel base = load_model(resolve_relative(ckpt.base_checkpoint, path));
  auto model = restore_model(ckpt, &base);
  if (frozen) *frozen = std::move(base);
  return model;
}

nlohmann::json validation_metrics(const Workbench& bench, const DenoiserModel& model, const DenoiserModel& frozen,
                                  std::span<const int> contexts) {
  const auto setup = bench.evaluation_setup(&frozen, bench.config.finetune.validation_samples, true);
  const auto report = evaluate_model(model, contexts, bench.spec, setup);
  nlohmann::json views = nlohmann::json::object();
  double gap_total = 0.0;
  for (const auto& v : bench.config.finetune.views) {
    const auto name = view_name(v.attributes);
    const auto idx = static_cast<std::size_t>(
        std::find_if(bench.views.begin(), bench.views.end(), [&](const auto& cv) { return cv.name == name; }) -
        bench.views.begin());
    if (idx >= bench.views.size()) throw ConfigError("aligned view '" + name + "' has no classifier");
    double gap = 0.0;
    for (const auto& c : report.contexts) {
      const auto& f = c.views[idx].freqs;
      for (std::size_t k = 0; k < f.size(); ++k) gap += std::abs(f[k] - v.target[k]);
    }
    gap /= static_cast<double>(report.contexts.size());
    gap_total += gap;
    views[name] = {{"gap", gap}, {"bias", report.summary[idx].bias_mean}, {"freq", report.summary[idx].freq_mean}};
  }
  const double n_views = static_cast<double>(std::max<std::size_t>(1, bench.config.finetune.views.size()));
  return {{"gap", gap_total / n_views}, {"views", views}, {"semantics", report.semantics_mean}};
}

namespace {

struct FamilyPool {
  int family;
  double weight;
  std::vector<int> train;
};

std::string checkpoint_name(long iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06ld.ckpt", iteration);
  return buf;
}

OtMethod pick_ot(const FinetuneSettings& f, int n, int k, std::uint64_t seed) {
  const bool fits = count_compositions(n, k, kExactEnumerationBudget + 1) <= kExactEnumerationBudget;
  if (f.ot_method == "exact" || (f.ot_method == "auto" && fits)) return OtMethod::exact();
  return OtMethod::monte_carlo(f.ot_draws, seed);
}

}  // namespace

FinetuneOutcome run_finetune(const ExperimentConfig& config, const fs::path& base_checkpoint, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_resolved(config, out_dir);
  const auto bench = Workbench::build(config);
  const auto& ft = config.finetune;
  if (ft.views.empty()) throw ConfigError("finetuning needs at least one aligned view");

  const DenoiserModel frozen = load_model(base_checkpoint);
  if (frozen.shape() != bench.shape) throw ConfigError("base checkpoint does not match the configured world/model");
  FinetuneOutcome out;
  out.frozen_hash_before = frozen.content_hash();

  DenoiserModel model = frozen;
  if (ft.target == FinetuneTarget::kLowRankAdapter) {
    model = frozen.with_adapter(ft.adapter_rank, derive_seed(config.seed, stream::kAdapterInit));
  }
  if (ft.target == FinetuneTarget::kPrefix) model.set_prefix_enabled(true);
  const auto segments = model.target_segments(ft.target);
  AdamW opt(model.params().size(), ft.optimizer, segment_mask(model.layout(), segments));

  std::vector<FamilyPool> pools;
  if (ft.families.empty()) {
    for (int f = 0; f < bench.spec.num_families(); ++f) pools.push_back({f, 1.0, {}});
  } else {
    for (const auto& fw : ft.families) pools.push_back({fw.family, fw.weight, {}});
  }
  std::vector<double> pool_weights;
  std::vector<int> validation;
  for (auto& p : pools) {
    p.train = bench.spec.contexts_in(ContextSplit::kTrain, p.family);
    if (p.train.empty()) throw ConfigError("family " + std::to_string(p.family) + " has no training contexts");
    pool_weights.push_back(p.weight);
    auto val = bench.spec.contexts_in(ContextSplit::kValidation, p.family);
    if (val.empty()) val = p.train;
    validation.insert(validation.end(), val.begin(), val.end());
  }

  const LossConfig loss_cfg = bench.loss_config();
  LossInputs inputs;
  inputs.extractors = &bench.extractors;
  inputs.realism = &bench.realism;
  for (const auto& v : ft.views) {
    const auto& cv = bench.view(view_name(v.attributes));
    inputs.attributes.push_back({cv.name, &cv.training.net});
  }

  out.log = out_dir / "finetune_log.jsonl";
  JsonlWriter log(out.log);
  for (const auto& w : loss_cfg.validate()) log.write({{"type", "warning"}, {"message", w}});

  const int T = bench.schedule.T();
  const int d = bench.shape.data_dim;
  const int n = ft.batch_size;
  Rng pick(derive_seed(config.seed, stream::kFinetunePick));
  std::vector<double> grad(model.params().size());
  DenoiserModel last_finite = model;

  double best_gap = std::numeric_limits<double>::infinity();
  double fallback_semantics = -std::numeric_limits<double>::infinity();
  FinetuneOutcome fallback;  // highest semantics, used when no checkpoint clears the floor
  out.best = model;
  PlotSeries total_series{"total", {}, {}, {}, {}}, align_series{"align", {}, {}, {}, {}},
      img_series{"img", {}, {}, {}, {}}, face_series{"face", {}, {}, {}, {}};
  PlotSeries gap_series{"validation gap", {}, {}, {}, {}}, sem_series{"semantics cosine", {}, {}, {}, {}};

  auto checkpoint = [&](long iteration) {
    auto metrics = validation_metrics(bench, model, frozen, validation);
    metrics["iteration"] = iteration;
    log.write({{"type", "validation"}, {"iteration", iteration}, {"metrics", metrics}});
    auto ckpt = make_partial_checkpoint(model, segments, iteration);
    ckpt.base_checkpoint = fs::absolute(base_checkpoint).string();
    ckpt.config = config.raw;
    ckpt.metrics = metrics;
    save_checkpoint(out_dir / checkpoint_name(iteration), ckpt);
    gap_series.x.push_back(static_cast<double>(iteration));
    gap_series.y.push_back(metrics["gap"].get<double>());
    sem_series.x.push_back(static_cast<double>(iteration));
    sem_series.y.push_back(metrics["semantics"].get<double>());
    const double gap = metrics["gap"];
    const double semantics = metrics["semantics"];
    if (semantics > fallback_semantics) {
      fallback_semantics = semantics;
      fallback.best = model;
      fallback.best_iteration = iteration;
      fallback.best_metrics = metrics;
      fallback.best_checkpoint = out_dir / checkpoint_name(iteration);
    }
    if (semantics >= ft.semantics_floor && gap < best_gap) {
      best_gap = gap;
      out.best = model;
      out.best_iteration = iteration;
      out.best_metrics = metrics;
      out.best_checkpoint = out_dir / checkpoint_name(iteration);
    }
  };

  for (long it = 0; it < ft.iterations; ++it) {
    if (it % ft.checkpoint_every == 0) checkpoint(it);

    const auto& pool = pools[pick.categorical(pool_weights)];
    const int ctx = pool.train[static_cast<std::size_t>(pick.uniform_int(0, static_cast<long>(pool.train.size()) - 1))];
    SamplerConfig sampler = config.sampler.build(T);
    if (!sampler.stochastic && !ft.step_jitter.empty()) {
      const int s = ft.step_jitter[static_cast<std::size_t>(pick.uniform_int(0, static_cast<long>(ft.step_jitter.size()) - 1))];
      sampler.timesteps = strided_timesteps(T, s);
    }

    std::vector<DifferentiableSample> xs;
    std::vector<std::vector<double>> batch_x, batch_o;
    std::uint64_t digest_x = 0xcbf29ce484222325ULL, digest_o = digest_x;
    for (int i = 0; i < n; ++i) {
      const auto key = static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(i);
      Rng noise(derive_seed(config.seed, stream::kFinetuneNoise, key));
      const auto z = noise.normal_vector(static_cast<std::size_t>(d));
      const auto noise_seed = derive_seed(config.seed, stream::kFinetuneSampler, key);
      xs.push_back(sample_with_grad(ft.gradient_mode, model, ctx, z, bench.schedule, sampler, noise_seed));
      digest_x = digest(xs.back().trajectory().z.front(), digest_x);
      batch_x.push_back(xs.back().x0());
      batch_o.push_back(sample(frozen, ctx, z, bench.schedule, sampler, noise_seed));
      digest_o = digest(z, digest_o);
    }
    inputs.ot = pick_ot(ft, n, loss_cfg.targets.front().num_classes(), derive_seed(config.seed, stream::kOt, it));
    const auto loss = total_loss(batch_x, batch_o, loss_cfg, inputs);
    if (!std::isfinite(loss.total)) {
      auto ckpt = make_partial_checkpoint(last_finite, segments, it);
      ckpt.base_checkpoint = fs::absolute(base_checkpoint).string();
      ckpt.config = config.raw;
      ckpt.metrics = {{"diverged", true}};
      save_checkpoint(out_dir / "last_finite.ckpt", ckpt);
      throw TrainingError("finetuning loss became non-finite at iteration " + std::to_string(it));
    }
    last_finite = model;

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i) xs[static_cast<std::size_t>(i)].backward(loss.grad_x[static_cast<std::size_t>(i)], grad);
    double grad_norm = 0.0;
    for (std::size_t k = 0; k < grad.size(); ++k) grad_norm += grad[k] * grad[k];
    opt.step(model.params(), grad);

    nlohmann::json record = {{"type", "iteration"},
                             {"iteration", it},
                             {"context", ctx},
                             {"family", pool.family},
                             {"num_steps", sampler.num_steps()},
                             {"total", loss.total},
                             {"align", loss.align},
                             {"align_per_view", loss.align_per_attribute},
                             {"img", loss.img},
                             {"face", loss.face},
                             {"align_active", loss.align_active},
                             {"weight_agree", loss.weight_agree},
                             {"weight_disagree", loss.weight_disagree},
                             {"grad_norm", std::sqrt(grad_norm)},
                             {"noise_digest_x", digest_x},
                             {"noise_digest_o", digest_o}};
    log.write(record);
    total_series.x.push_back(static_cast<double>(it));
    total_series.y.push_back(loss.total);
    align_series.x.push_back(static_cast<double>(it));
    align_series.y.push_back(loss.align);
    img_series.x.push_back(static_cast<double>(it));
    img_series.y.push_back(loss.img);
    face_series.x.push_back(static_cast<double>(it));
    face_series.y.push_back(config.loss.lambda_face * loss.face);
  }
  checkpoint(ft.iterations);

  auto last = make_partial_checkpoint(model, segments, ft.iterations);
  last.base_checkpoint = fs::absolute(base_checkpoint).string();
  last.config = config.raw;
  last.metrics = validation_metrics(bench, model, frozen, validation);
  save_checkpoint(out_dir / "last.ckpt", last);
  if (out.best_checkpoint.empty()) {
    out.best = std::move(fallback.best);
    out.best_iteration = fallback.best_iteration;
    out.best_metrics = std::move(fallback.best_metrics);
    out.best_checkpoint = fallback.best_checkpoint;
  }
  if (!out.best_checkpoint.empty()) fs::copy_file(out.best_checkpoint, out_dir / "best.ckpt", fs::copy_options::overwrite_existing);
  out.best_checkpoint = out_dir / "best.ckpt";
  out.last = std::move(model);
  out.frozen_hash_after = frozen.content_hash();
  log.write({{"type", "best"}, {"iteration", out.best_iteration}, {"metrics", out.best_metrics}});

  write_svg_plot(out_dir / "finetune_loss.svg",
                 {"Finetuning loss", "iteration", "loss", false, {total_series, align_series, img_series, face_series}});
  write_svg_plot(out_dir / "finetune_validation.svg",
                 {"Validation", "iteration", "value", false, {gap_series, sem_series}});
  return out;
}

double InversionTrace::trace_variance() const {
  if (loss.size() < 3 || initial == 0.0) return 0.0;
  std::vector<double> diffs;
  for (std::size_t i = 1; i < loss.size(); ++i) diffs.push_back((loss[i] - loss[i - 1]) / initial);
  const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
  double var = 0.0;
  for (double v : diffs) var += (v - mean) * (v - mean);
  return var / static_cast<double>(diffs.size() - 1);
}

InversionResult run_inversion_benchmark(const ExperimentConfig& config, const fs::path& checkpoint,
                                        const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_resolved(config, out_dir);
  const auto bench = Workbench::build(config);
  const auto& iv = config.invert;
  if (iv.iterations < 1 || iv.batch_size < 1) throw ConfigError("invert needs iterations and batch_size >= 1");
  DenoiserModel base = load_model(checkpoint);
  if (base.shape().prefix_len == 0) throw ConfigError("the inversion benchmark optimises the soft prefix; prefix_len is 0");
  const int T = bench.schedule.T();
  const int d = bench.shape.data_dim;

  int target_ctx = iv.target_context;
  if (target_ctx < 0) {
    const int home = bench.spec.contexts[static_cast<std::size_t>(iv.context)].family;
    const auto held = bench.spec.contexts_in(ContextSplit::kHeldOut);
    target_ctx = held.back();
    for (int c : held) {
      if (bench.spec.contexts[static_cast<std::size_t>(c)].family != home) {
        target_ctx = c;
        break;
      }
    }
  }
  if (target_ctx >= bench.spec.num_contexts()) throw ConfigError("invert.target_context out of range");
  const auto& row = bench.spec.bias_table[static_cast<std::size_t>(target_ctx)];
  const int rare = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
  InversionResult result;
  result.target = bench.spec.mode_center(target_ctx, bench.spec.decode_joint(rare));

  SamplerConfig sampler = iv.num_steps == 0 ? SamplerConfig::full(T, iv.stochastic)
                                            : SamplerConfig::strided(T, iv.num_steps);
  if (iv.stochastic && iv.num_steps != 0) throw ConfigError("stochastic inversion needs the full adjacent schedule");
  sampler.validate(bench.schedule);

  auto batch_loss = [&](const DenoiserModel& model, std::uint64_t stream_id, std::uint64_t seed, long it, int count,
                        std::vector<double>* grad, GradientMode mode) {
    double total = 0.0;
    std::vector<double> g_x;
    for (int b = 0; b < count; ++b) {
      const auto key = static_cast<std::uint64_t>(it) * 1000003ULL + static_cast<std::uint64_t>(b);
      Rng noise(derive_seed(seed, stream_id, key));
      const auto z = noise.normal_vector(static_cast<std::size_t>(d));
      const auto noise_seed = derive_seed(seed, stream_id + 100, key);
      if (!grad) {
        const auto x = sample(model, iv.context, z, bench.schedule, sampler, noise_seed);
        total += semantics_loss(x, result.target, bench.extractors);
        continue;
      }
      const auto s = sample_with_grad(mode, model, iv.context, z, bench.schedule, sampler, noise_seed);
      total += semantics_loss(s.x0(), result.target, bench.extractors, &g_x);
      for (double& v : g_x) v /= count;
      s.backward(g_x, *grad);
    }
    return total / count;
  };

  JsonlWriter log(out_dir / "inversion_traces.jsonl");
  const long eval_every = std::max<long>(1, iv.iterations / 20);
  constexpr int kEvalBatch = 16;
  PlotSpec plot{"Soft-prefix inversion", "iteration", "loss / initial", false, {}};
  for (const auto mode : iv.modes) {
    for (const auto seed : iv.seeds) {
      DenoiserModel model = base;
      model.set_prefix_enabled(true);
      std::fill(model.segment("prefix").begin(), model.segment("prefix").end(), 0.0);
      const auto run_seed = derive_seed(config.seed, seed);
      AdamW opt(model.params().size(), iv.optimizer, segment_mask(model.layout(), std::vector<std::string>{"prefix"}));
      InversionTrace trace;
      trace.mode = mode;
      trace.seed = seed;
      std::vector<double> grad(model.params().size());
      for (long it = 0; it <= iv.iterations; ++it) {
        if (it % eval_every == 0 || it == iv.iterations) {
          trace.eval_iterations.push_back(it);
          trace.eval_loss.push_back(batch_loss(model, stream::kInvertEval, run_seed, 0, kEvalBatch, nullptr, mode));
        }
        if (it == iv.iterations) break;
        std::fill(grad.begin(), grad.end(), 0.0);
        trace.loss.push_back(batch_loss(model, stream::kInvertNoise, run_seed, it, iv.batch_size, &grad, mode));
        opt.step(model.params(), grad);
      }
      trace.initial = trace.eval_loss.front();
      trace.final = trace.eval_loss.back();
      log.write({{"mode", to_string(mode)},
                 {"seed", seed},
                 {"loss", trace.loss},
                 {"eval_iterations", trace.eval_iterations},
                 {"eval_loss", trace.eval_loss},
                 {"initial", trace.initial},
                 {"final", trace.final},
                 {"ratio", trace.ratio()},
                 {"trace_variance", trace.trace_variance()}});
      PlotSeries series{std::string(to_string(mode)) + " s" + std::to_string(seed), {}, {}, {}, {}};
      for (std::size_t k = 0; k < trace.eval_iterations.size(); ++k) {
        series.x.push_back(static_cast<double>(trace.eval_iterations[k]));
        series.y.push_back(trace.eval_loss[k] / trace.initial);
      }
      plot.series.push_back(std::move(series));
      result.traces.push_back(std::move(trace));
    }
  }
  write_svg_plot(out_dir / "inversion.svg", plot);
  return result;
}

EvaluateOutcome run_evaluate(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_resolved(config, out_dir);
  const auto bench = Workbench::build(config);
  DenoiserModel frozen;
  const DenoiserModel model = load_model(checkpoint, &frozen);
  if (model.shape().num_contexts != bench.shape.num_contexts) {
    throw ConfigError("checkpoint does not match the configured world");
  }
  std::vector<int> contexts;
  for (auto split : config.evaluate.splits) {
    const auto cs = bench.spec.contexts_in(split);
    contexts.insert(contexts.end(), cs.begin(), cs.end());
  }
  EvaluateOutcome out;
  out.report = evaluate_model(model, contexts, bench.spec,
                              bench.evaluation_setup(&frozen, config.evaluate.samples_per_context, false));
  JsonlWriter report(out_dir / "report.jsonl");
  for (const auto& rec : report_to_records(out.report)) report.write(rec);

  nlohmann::json views = nlohmann::json::array();
  for (std::size_t v = 0; v < bench.views.size(); ++v) {
    const auto& cv = bench.views[v];
    // Minority class: smallest mean data frequency over the evaluated contexts.
    std::vector<double> data_freq(static_cast<std::size_t>(cv.evaluation.classes), 0.0);
    for (int c : contexts) {
      const auto& row = bench.spec.bias_table[static_cast<std::size_t>(c)];
      for (int j = 0; j < bench.spec.joint_classes(); ++j) {
        const auto labels = bench.spec.decode_joint(j);
        data_freq[static_cast<std::size_t>(view_label(bench.spec, cv.attributes, labels))] += row[static_cast<std::size_t>(j)];
      }
    }
    const auto minority =
        static_cast<std::size_t>(std::min_element(data_freq.begin(), data_freq.end()) - data_freq.begin());
    const auto& s = out.report.summary[v];
    views.push_back({{"name", s.name},
                     {"bias_mean", s.bias_mean},
                     {"bias_std", s.bias_std},
                     {"freq_mean", s.freq_mean},
                     {"freq_std", s.freq_std},
                     {"minority_class", minority},
                     {"minority_freq_mean", s.freq_mean[minority]},
                     {"minority_freq_std", s.freq_std[minority]}});
  }
  // Per-family mean bias of every view.
  nlohmann::json families = nlohmann::json::object();
  std::map<int, std::vector<const ContextReport*>> by_family;
  for (const auto& ctx : out.report.contexts) by_family[ctx.family].push_back(&ctx);
  for (const auto& [family, rows] : by_family) {
    nlohmann::json fam = nlohmann::json::object();
    for (std::size_t v = 0; v < bench.views.size(); ++v) {
      double sum = 0.0;
      for (const auto* row : rows) sum += row->views[v].bias;
      fam[bench.views[v].name] = sum / static_cast<double>(rows.size());
    }
    families[std::to_string(family)] = fam;
  }
  out.summary = {{"checkpoint", checkpoint.string()},
                 {"family_bias", families},
                 {"contexts", contexts.size()},
                 {"samples_per_context", config.evaluate.samples_per_context},
                 {"views", views},
                 {"semantics_mean", out.report.semantics_mean},
                 {"disagreement_mean", out.report.disagreement_mean}};
  write_json(out_dir / "summary.json", out.summary);
  return out;
}

GradDiagnostics run_diagnose(const ExperimentConfig& config, const fs::path& checkpoint, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_resolved(config, out_dir);
  const auto schedule = build_noise_schedule(config.schedule.T, config.schedule.beta_start, config.schedule.beta_end,
                                             config.schedule.kind);
  const DenoiserModel model = load_model(checkpoint);
  SamplerConfig sampler = SamplerConfig::full(schedule.T(), config.diagnose.stochastic);
  sampler.guidance_weight = config.sampler.guidance_weight;
  DiagnosticsOptions opts;
  opts.runs = config.diagnose.runs;
  opts.seed = derive_seed(config.seed, stream::kDiagnose);
  opts.r_variance = config.diagnose.r_variance;
  opts.probe_timesteps = config.diagnose.probe_timesteps;
  const auto diag = diagnose_gradients(model, config.diagnose.context, schedule, sampler, opts);

  JsonlWriter log(out_dir / "diagnostics.jsonl");
  for (const auto& rec : diagnostics_to_records(diag)) log.write(rec);
  PlotSpec plot{"Per-timestep gradient magnitude", "t", "2-norm", true, {}};
  auto add = [&](const char* name, const std::vector<IntervalSummary>& s) {
    PlotSeries series{name, {}, {}, {}, {}};
    for (std::size_t k = 0; k < diag.timesteps.size(); ++k) {
      series.x.push_back(diag.timesteps[k]);
      series.y.push_back(s[k].median);
      series.lower.push_back(s[k].lower);
      series.upper.push_back(s[k].upper);
    }
    plot.series.push_back(std::move(series));
  };
  add("R A B de/dtheta (naive)", diag.naive_summary);
  add("R A de/dtheta", diag.scaled_summary);
  add("R de/dtheta", diag.plain_summary);
  write_svg_plot(out_dir / "gradient_magnitudes.svg", plot);
  return diag;
}

}  // namespace fairdiff
