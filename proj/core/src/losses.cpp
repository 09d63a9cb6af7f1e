#include "fairdiff/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fairdiff/errors.hpp"
#include "fairdiff/rng.hpp"
#include "linalg.hpp"

namespace fairdiff {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different sizes");
  const double na = detail::norm2(a);
  const double nb = detail::norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return detail::dot(a, b) / (na * nb);
}

FeatureExtractors make_feature_extractors(int data_dim, std::uint64_t seed) {
  return {Mlp({data_dim, 32, 16}, Activation::kTanh, derive_seed(seed, 0xc11b)),
          Mlp({data_dim, 24, 24, 16}, Activation::kSilu, derive_seed(seed, 0xd1e0))};
}

RealismReference make_realism_reference(Mlp embed, const std::vector<std::vector<double>>& reference_regions) {
  if (reference_regions.empty()) throw ConfigError("realism reference set is empty");
  RealismReference ref{std::move(embed), {}};
  ref.reference_embeddings.reserve(reference_regions.size());
  for (const auto& r : reference_regions) ref.reference_embeddings.push_back(ref.embed.forward(r));
  return ref;
}

namespace {

// d cos(a, b) / d a.
void cosine_grad(std::span<const double> a, std::span<const double> b, double cos, std::span<double> out) {
  const double na = detail::norm2(a);
  const double nb = detail::norm2(b);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = b[i] / (na * nb) - cos * a[i] / (na * na);
}

double one_extractor(const Mlp& net, std::span<const double> x, std::span<const double> o,
                     std::vector<double>* grad_x) {
  Mlp::Cache cache;
  std::vector<double> fx(static_cast<std::size_t>(net.output_dim()));
  net.forward(x, fx, grad_x ? &cache : nullptr);
  const auto fo = net.forward(o);
  if (detail::norm2(fx) == 0.0 || detail::norm2(fo) == 0.0) return 1.0;
  const double cos = cosine_similarity(fx, fo);
  if (grad_x) {
    std::vector<double> g_f(fx.size());
    cosine_grad(fx, fo, cos, g_f);
    for (double& g : g_f) g = -g;
    std::vector<double> g_x(x.size());
    net.backward(cache, g_f, {}, g_x);
    for (std::size_t i = 0; i < x.size(); ++i) (*grad_x)[i] += g_x[i];
  }
  return 1.0 - cos;
}

}  // namespace

double semantics_loss(std::span<const double> x, std::span<const double> o, const FeatureExtractors& extractors,
                      std::vector<double>* grad_x) {
  if (x.size() != o.size()) throw ShapeError("semantics loss on samples of different sizes");
  if (grad_x) grad_x->assign(x.size(), 0.0);
  return one_extractor(extractors.first, x, o, grad_x) + one_extractor(extractors.second, x, o, grad_x);
}

double realism_loss(std::span<const double> region_x, const RealismReference& reference,
                    std::vector<double>* grad_region) {
  if (reference.reference_embeddings.empty()) throw ConfigError("realism reference set is empty");
  Mlp::Cache cache;
  std::vector<double> e(static_cast<std::size_t>(reference.embed.output_dim()));
  reference.embed.forward(region_x, e, grad_region ? &cache : nullptr);
  if (grad_region) grad_region->assign(region_x.size(), 0.0);
  if (detail::norm2(e) == 0.0) return 1.0;
  std::size_t best = 0;
  double best_cos = -2.0;
  for (std::size_t f = 0; f < reference.reference_embeddings.size(); ++f) {
    const double c = cosine_similarity(e, reference.reference_embeddings[f]);
    if (c > best_cos) {
      best_cos = c;
      best = f;
    }
  }
  if (grad_region) {
    std::vector<double> g_e(e.size());
    cosine_grad(e, reference.reference_embeddings[best], best_cos, g_e);
    for (double& g : g_e) g = -g;
    reference.embed.backward(cache, g_e, {}, *grad_region);
  }
  return 1.0 - best_cos;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

AlignmentLossValue alignment_loss(const ProbMatrix& logits, const OTTargetBatch& targets,
                                  double confidence_threshold) {
  const std::size_t n = logits.size();
  if (targets.y.size() != n || targets.c.size() != n) throw ShapeError("alignment targets do not match the batch");
  AlignmentLossValue out;
  out.grad_logits.resize(n);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_logits[i].assign(logits[i].size(), 0.0);
    if (!(targets.c[i] >= confidence_threshold)) continue;
    const auto y = static_cast<std::size_t>(targets.y[i]);
    if (y >= logits[i].size()) throw IndexError("alignment target class out of range");
    ++out.active;
    // Log-sum-exp form of the cross-entropy.
    const double m = *std::max_element(logits[i].begin(), logits[i].end());
    double sum = 0.0;
    for (double v : logits[i]) sum += std::exp(v - m);
    out.value += inv_n * (m + std::log(sum) - logits[i][y]);
    const auto p = softmax(logits[i]);
    for (std::size_t k = 0; k < p.size(); ++k) out.grad_logits[i][k] = inv_n * (p[k] - (k == y ? 1.0 : 0.0));
  }
  return out;
}

std::vector<std::string> LossConfig::validate() const {
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1]");
  }
  if (!(lambda_face >= 0.0 && lambda_img_1 >= 0.0 && lambda_img_2 >= 0.0 && lambda_img_3 >= 0.0)) {
    throw ConfigError("loss weights must be >= 0");
  }
  for (int r : region) {
    if (r < 0) throw ConfigError("region coordinates must be >= 0");
  }
  for (const auto& t : targets) t.validate();
  std::vector<std::string> warnings;
  if (!(lambda_img_1 >= lambda_img_2 && lambda_img_2 >= lambda_img_3)) {
    warnings.emplace_back("expected lambda_img_1 >= lambda_img_2 >= lambda_img_3");
  }
  return warnings;
}

std::vector<double> dynamic_weights(int target_class, int frozen_class, std::span<const int> region, int data_dim,
                                    const LossConfig& config) {
  if (target_class == frozen_class) return std::vector<double>(static_cast<std::size_t>(data_dim), config.lambda_img_1);
  std::vector<double> w(static_cast<std::size_t>(data_dim), config.lambda_img_2);
  for (int r : region) {
    if (r < 0 || r >= data_dim) throw IndexError("region coordinate out of range");
    w[static_cast<std::size_t>(r)] = config.lambda_img_3;
  }
  return w;
}

std::vector<double> region_slice(std::span<const double> x, std::span<const int> region) {
  std::vector<double> out;
  out.reserve(region.size());
  for (int r : region) {
    if (r < 0 || static_cast<std::size_t>(r) >= x.size()) throw IndexError("region coordinate out of range");
    out.push_back(x[static_cast<std::size_t>(r)]);
  }
  return out;
}

std::vector<OTTargetBatch> build_alignment_targets(const std::vector<ProbMatrix>& probs,
                                                   const std::vector<std::vector<int>>& frozen_classes,
                                                   std::span<const unsigned char> has_region,
                                                   const LossConfig& config, const OtMethod& method) {
  if (probs.size() != config.targets.size()) throw ShapeError("one probability matrix per target is required");
  std::vector<OTTargetBatch> out;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const auto& target = config.targets[j];
    const std::size_t n = probs[j].size();
    const std::size_t k = static_cast<std::size_t>(target.num_classes());
    OTTargetBatch batch;
    batch.method = method;
    batch.q.assign(n, std::vector<double>(k, 1.0 / static_cast<double>(k)));
    batch.y.assign(n, 0);
    batch.c.assign(n, 1.0 / static_cast<double>(k));

    // Partition the samples that carry a region; one partition unless conditional.
    std::vector<std::vector<std::size_t>> groups;
    std::vector<int> group_key;
    for (std::size_t i = 0; i < n; ++i) {
      if (!has_region.empty() && !has_region[i]) continue;
      int key = 0;
      if (target.conditional_on) {
        const auto c = static_cast<std::size_t>(*target.conditional_on);
        if (c >= frozen_classes.size()) throw ConfigError("conditional target refers to an unknown attribute");
        key = frozen_classes[c][i];
      }
      auto it = std::find(group_key.begin(), group_key.end(), key);
      if (it == group_key.end()) {
        group_key.push_back(key);
        groups.push_back({i});
      } else {
        groups[static_cast<std::size_t>(it - group_key.begin())].push_back(i);
      }
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      ProbMatrix sub;
      for (auto i : groups[g]) sub.push_back(probs[j][i]);
      OtMethod m = method;
      m.seed = derive_seed(method.seed, j, static_cast<std::uint64_t>(group_key[g]) + 1);
      const auto res = expected_ot_targets(sub, target, m);
      for (std::size_t s = 0; s < groups[g].size(); ++s) {
        const auto i = groups[g][s];
        batch.q[i] = res.q[s];
        batch.y[i] = res.y[s];
        batch.c[i] = res.c[s];
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

TotalLoss total_loss(const std::vector<std::vector<double>>& batch_x, const std::vector<std::vector<double>>& batch_o,
                     const LossConfig& config, const LossInputs& inputs,
                     const std::vector<OTTargetBatch>* fixed_targets) {
  const std::size_t n = batch_x.size();
  if (batch_o.size() != n) throw ShapeError("paired batches differ in size");
  if (n == 0) throw ArgumentError("empty batch");
  if (inputs.attributes.size() != config.targets.size()) throw ConfigError("one classifier per target is required");
  if (!inputs.has_region.empty() && inputs.has_region.size() != n) throw ShapeError("region flags do not match batch");
  const std::size_t d = batch_x.front().size();
  const double inv_n = 1.0 / static_cast<double>(n);
  auto region_of = [&](std::size_t i) { return inputs.has_region.empty() || inputs.has_region[i]; };

  TotalLoss out;
  out.grad_x.assign(n, std::vector<double>(d, 0.0));

  // Classifier pass on the region of x (with caches) and o.
  const std::size_t m = inputs.attributes.size();
  std::vector<ProbMatrix> logits(m), probs(m);
  std::vector<std::vector<Mlp::Cache>> caches(m, std::vector<Mlp::Cache>(n));
  out.frozen_classes.assign(m, std::vector<int>(n, 0));
  for (std::size_t j = 0; j < m; ++j) {
    const Mlp* clf = inputs.attributes[j].classifier;
    if (!clf) throw ConfigError("aligned attribute without a classifier");
    for (std::size_t i = 0; i < n; ++i) {
      if (batch_x[i].size() != d || batch_o[i].size() != d) throw ShapeError("sample dimension mismatch");
      std::vector<double> l(static_cast<std::size_t>(clf->output_dim()));
      clf->forward(region_slice(batch_x[i], config.region), l, &caches[j][i]);
      probs[j].push_back(softmax(l));
      logits[j].push_back(std::move(l));
      const auto lo = clf->forward(region_slice(batch_o[i], config.region));
      out.frozen_classes[j][i] = static_cast<int>(std::max_element(lo.begin(), lo.end()) - lo.begin());
    }
  }

  if (fixed_targets) {
    if (fixed_targets->size() != m) throw ShapeError("fixed targets do not match the attributes");
    out.targets = *fixed_targets;
  } else {
    out.targets = build_alignment_targets(probs, out.frozen_classes, inputs.has_region, config, inputs.ot);
  }

  // Alignment: only samples with a region contribute, normalised by the full batch.
  for (std::size_t j = 0; j < m; ++j) {
    ProbMatrix sub_logits;
    OTTargetBatch sub_targets;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < n; ++i) {
      if (!region_of(i)) continue;
      index.push_back(i);
      sub_logits.push_back(logits[j][i]);
      sub_targets.y.push_back(out.targets[j].y[i]);
      sub_targets.c.push_back(out.targets[j].c[i]);
    }
    double value = 0.0;
    if (!index.empty()) {
      const auto al = alignment_loss(sub_logits, sub_targets, config.confidence_threshold);
      const double rescale = static_cast<double>(index.size()) * inv_n;
      value = al.value * rescale;
      out.align_active += al.active;
      const Mlp* clf = inputs.attributes[j].classifier;
      std::vector<double> g_region(config.region.size());
      for (std::size_t s = 0; s < index.size(); ++s) {
        if (al.grad_logits[s].empty() ||
            std::all_of(al.grad_logits[s].begin(), al.grad_logits[s].end(), [](double g) { return g == 0.0; })) {
          continue;
        }
        std::vector<double> g = al.grad_logits[s];
        for (double& v : g) v *= rescale;
        clf->backward(caches[j][index[s]], g, {}, g_region);
        for (std::size_t r = 0; r < config.region.size(); ++r) {
          out.grad_x[index[s]][static_cast<std::size_t>(config.region[r])] += g_region[r];
        }
      }
    }
    out.align_per_attribute.push_back(value);
    out.align += value;
  }

  // Semantics with dynamic weights.
  const bool need_img = config.lambda_img_1 > 0.0 || config.lambda_img_2 > 0.0 || config.lambda_img_3 > 0.0;
  if (need_img && !inputs.extractors) throw ConfigError("semantics term needs feature extractors");
  std::vector<bool> in_region(d, false);
  for (int r : config.region) in_region[static_cast<std::size_t>(r)] = true;
  std::vector<double> grad;
  for (std::size_t i = 0; i < n && need_img; ++i) {
    bool agree = true;
    if (region_of(i)) {
      for (std::size_t j = 0; j < m; ++j) agree = agree && out.targets[j].y[i] == out.frozen_classes[j][i];
    }
    if (agree) {
      ++out.weight_agree;
      if (config.lambda_img_1 == 0.0) continue;
      out.img += inv_n * config.lambda_img_1 * semantics_loss(batch_x[i], batch_o[i], *inputs.extractors, &grad);
      for (std::size_t k = 0; k < d; ++k) out.grad_x[i][k] += inv_n * config.lambda_img_1 * grad[k];
      continue;
    }
    ++out.weight_disagree;
    // lambda_img_2 scores changes outside the region, lambda_img_3 changes inside it.
    for (const bool inside : {false, true}) {
      const double lambda = inside ? config.lambda_img_3 : config.lambda_img_2;
      if (lambda == 0.0) continue;
      std::vector<double> mixed = batch_o[i];
      for (std::size_t k = 0; k < d; ++k) {
        if (in_region[k] == inside) mixed[k] = batch_x[i][k];
      }
      out.img += inv_n * lambda * semantics_loss(mixed, batch_o[i], *inputs.extractors, &grad);
      for (std::size_t k = 0; k < d; ++k) {
        if (in_region[k] == inside) out.grad_x[i][k] += inv_n * lambda * grad[k];
      }
    }
  }

  // Realism of the region.
  if (config.lambda_face > 0.0) {
    if (!inputs.realism) throw ConfigError("realism term needs a reference set");
    for (std::size_t i = 0; i < n; ++i) {
      if (!region_of(i)) continue;
      out.face += inv_n * realism_loss(region_slice(batch_x[i], config.region), *inputs.realism, &grad);
      for (std::size_t r = 0; r < config.region.size(); ++r) {
        out.grad_x[i][static_cast<std::size_t>(config.region[r])] += inv_n * config.lambda_face * grad[r];
      }
    }
  }

  out.total = out.align + out.img + config.lambda_face * out.face;
  return out;
}

}  // namespace fairdiff
