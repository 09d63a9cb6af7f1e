#include "fairdiff/world.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <tuple>

#include "fairdiff/errors.hpp"
#include "fairdiff/optim.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/sampler.hpp"

namespace fairdiff {

const char* to_string(ContextSplit split) {
  switch (split) {
    case ContextSplit::kTrain: return "train";
    case ContextSplit::kValidation: return "validation";
    case ContextSplit::kHeldOut: return "held_out";
  }
  return "unknown";
}

const char* to_string(ClassifierRole role) {
  return role == ClassifierRole::kTraining ? "training" : "evaluation";
}

int ToyWorldSpec::joint_classes() const {
  int k = 1;
  for (const auto& a : attributes) k *= a.classes;
  return k;
}

int ToyWorldSpec::encode_joint(std::span<const int> labels) const {
  if (labels.size() != attributes.size()) throw ShapeError("label count differs from attribute count");
  int idx = 0;
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    if (labels[a] < 0 || labels[a] >= attributes[a].classes) throw IndexError("attribute class out of range");
    idx = idx * attributes[a].classes + labels[a];
  }
  return idx;
}

std::vector<int> ToyWorldSpec::decode_joint(int joint) const {
  if (joint < 0 || joint >= joint_classes()) throw IndexError("joint class out of range");
  std::vector<int> labels(attributes.size());
  for (std::size_t a = attributes.size(); a-- > 0;) {
    labels[a] = joint % attributes[a].classes;
    joint /= attributes[a].classes;
  }
  return labels;
}

std::vector<double> ToyWorldSpec::mode_center(int context, std::span<const int> labels) const {
  if (context < 0 || context >= num_contexts()) throw IndexError("context out of range");
  std::vector<double> c = context_centers[static_cast<std::size_t>(context)];
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    const auto& off = attribute_offsets[a][static_cast<std::size_t>(labels[a])];
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += off[k];
  }
  return c;
}

std::vector<double> ToyWorldSpec::marginal(int context, int attribute) const {
  if (context < 0 || context >= num_contexts()) throw IndexError("context out of range");
  if (attribute < 0 || attribute >= static_cast<int>(attributes.size())) throw IndexError("attribute out of range");
  std::vector<double> m(static_cast<std::size_t>(attributes[static_cast<std::size_t>(attribute)].classes), 0.0);
  const auto& row = bias_table[static_cast<std::size_t>(context)];
  for (int j = 0; j < joint_classes(); ++j) {
    m[static_cast<std::size_t>(decode_joint(j)[static_cast<std::size_t>(attribute)])] += row[static_cast<std::size_t>(j)];
  }
  return m;
}

std::vector<int> ToyWorldSpec::contexts_in(ContextSplit split, std::optional<int> family) const {
  std::vector<int> out;
  for (int c = 0; c < num_contexts(); ++c) {
    const auto& info = contexts[static_cast<std::size_t>(c)];
    if (info.split == split && (!family || info.family == *family)) out.push_back(c);
  }
  return out;
}

int ToyWorldSpec::num_families() const {
  int f = 0;
  for (const auto& c : contexts) f = std::max(f, c.family + 1);
  return f;
}

void ToyWorldSpec::validate() const {
  if (data_dim < 1) throw ConfigError("world data_dim must be >= 1");
  if (attributes.empty()) throw ConfigError("world needs at least one attribute");
  for (const auto& a : attributes) {
    if (a.classes < 2) throw ConfigError("attribute '" + a.name + "' needs at least two classes");
  }
  if (contexts.empty()) throw ConfigError("world needs at least one context");
  if (bias_table.size() != contexts.size() || context_centers.size() != contexts.size() ||
      tokens.size() != contexts.size()) {
    throw ConfigError("per-context tables disagree with the context list");
  }
  const auto k = static_cast<std::size_t>(joint_classes());
  for (const auto& row : bias_table) {
    if (row.size() != k) throw ConfigError("bias_table row has the wrong number of classes");
    double sum = 0.0;
    for (double p : row) {
      if (!(p >= 0.0)) throw ConfigError("bias_table entries must be >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("bias_table rows must sum to 1");
  }
  for (const auto& c : context_centers) {
    if (c.size() != static_cast<std::size_t>(data_dim)) throw ConfigError("context center has the wrong dimension");
  }
  if (region_mask.empty()) throw ConfigError("region mask is empty");
  for (int r : region_mask) {
    if (r < 0 || r >= data_dim) throw ConfigError("region coordinate outside the data dimension");
  }
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");
  if (attribute_offsets.size() != attributes.size()) throw ConfigError("one offset table per attribute is required");
  std::vector<bool> in_region(static_cast<std::size_t>(data_dim), false);
  for (int r : region_mask) in_region[static_cast<std::size_t>(r)] = true;
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    const auto& offs = attribute_offsets[a];
    if (offs.size() != static_cast<std::size_t>(attributes[a].classes)) {
      throw ConfigError("attribute offsets do not match the class count");
    }
    for (const auto& o : offs) {
      if (o.size() != static_cast<std::size_t>(data_dim)) throw ConfigError("attribute offset has the wrong dimension");
      for (std::size_t k2 = 0; k2 < o.size(); ++k2) {
        if (!in_region[k2] && o[k2] != 0.0) throw ConfigError("attribute offsets must vanish off the region");
      }
    }
    for (std::size_t i = 0; i < offs.size(); ++i) {
      for (std::size_t j = i + 1; j < offs.size(); ++j) {
        double dist = 0.0;
        for (int r : region_mask) {
          const double diff = offs[i][static_cast<std::size_t>(r)] - offs[j][static_cast<std::size_t>(r)];
          dist += diff * diff;
        }
        if (std::sqrt(dist) < 4.0 * noise_scale) {
          throw ConfigError("attribute '" + attributes[a].name + "' classes are closer than 4 noise_scale");
        }
      }
    }
  }
}

namespace {

std::vector<double> independent_joint(const std::vector<std::vector<double>>& marginals) {
  std::vector<double> joint{1.0};
  for (const auto& m : marginals) {
    std::vector<double> next;
    next.reserve(joint.size() * m.size());
    for (double p : joint) {
      for (double q : m) next.push_back(p * q);
    }
    joint = std::move(next);
  }
  return joint;
}

}  // namespace

ToyWorldSpec make_world_spec(std::string_view preset, const WorldPresetOptions& opt) {
  if (opt.data_dim < 2) throw ConfigError("world data_dim must be >= 2");
  if (opt.train_per_family < 1 || opt.validation_per_family < 0 || opt.held_out_per_family < 1) {
    throw ConfigError("each family needs train and held-out contexts");
  }
  ToyWorldSpec spec;
  spec.data_dim = opt.data_dim;
  spec.noise_scale = opt.noise_scale;
  const int region_size = (opt.data_dim + 1) / 2;
  for (int r = 0; r < region_size; ++r) spec.region_mask.push_back(r);

  int families = 1;
  // Per (family, context-in-family index) marginal tables for every attribute.
  std::function<std::vector<std::vector<double>>(int, int)> marginals;
  if (preset == "gender") {
    spec.attributes = {{"gender", 2}};
    marginals = [](int, int) { return std::vector<std::vector<double>>{{0.9, 0.1}}; };
  } else if (preset == "gender_age") {
    spec.attributes = {{"gender", 2}, {"age", 2}};
    static constexpr double kOld[] = {0.02, 0.1, 0.3, 0.6, 0.05};
    marginals = [](int, int idx) {
      const double old = kOld[static_cast<std::size_t>(idx) % std::size(kOld)];
      return std::vector<std::vector<double>>{{0.9, 0.1}, {1.0 - old, old}};
    };
  } else if (preset == "two_family") {
    spec.attributes = {{"gender", 2}};
    families = 2;
    marginals = [](int family, int) {
      return family == 0 ? std::vector<std::vector<double>>{{0.9, 0.1}}
                         : std::vector<std::vector<double>>{{0.15, 0.85}};
    };
  } else if (preset == "intersectional") {
    spec.attributes = {{"gender", 2}, {"race", 2}};
    marginals = [](int, int) { return std::vector<std::vector<double>>{{0.9, 0.1}, {0.8, 0.2}}; };
  } else {
    throw ConfigError("unknown world preset '" + std::string(preset) + "'");
  }
  if (static_cast<int>(spec.attributes.size()) > region_size) throw ConfigError("region too small for the attributes");

  // Attribute a occupies region coordinate a (binary) or a block of the region (K > 2).
  const auto d = static_cast<std::size_t>(opt.data_dim);
  for (std::size_t a = 0; a < spec.attributes.size(); ++a) {
    const int k = spec.attributes[a].classes;
    std::vector<std::vector<double>> offs(static_cast<std::size_t>(k), std::vector<double>(d, 0.0));
    if (k == 2) {
      offs[0][a] = opt.attribute_scale;
      offs[1][a] = -opt.attribute_scale;
    } else {
      for (int c = 0; c < k; ++c) {
        offs[static_cast<std::size_t>(c)][static_cast<std::size_t>((static_cast<int>(a) + c) % region_size)] =
            2.0 * opt.attribute_scale;
      }
    }
    spec.attribute_offsets.push_back(std::move(offs));
  }

  Rng rng(derive_seed(opt.seed, 0x3041d));
  const auto off_region = d - static_cast<std::size_t>(region_size);
  for (int f = 0; f < families; ++f) {
    const auto family_token = rng.normal_vector(8);
    const auto family_dir = rng.normal_vector(off_region);
    int idx = 0;
    auto add = [&](ContextSplit split, int count) {
      for (int i = 0; i < count; ++i, ++idx) {
        ContextInfo info;
        info.name = "f" + std::to_string(f) + "_" + to_string(split) + "_" + std::to_string(i);
        info.family = f;
        info.split = split;
        spec.contexts.push_back(info);
        std::vector<double> center(d, 0.0);
        for (std::size_t k = 0; k < off_region; ++k) {
          center[static_cast<std::size_t>(region_size) + k] = 1.2 * family_dir[k] + 0.6 * rng.normal();
        }
        spec.context_centers.push_back(std::move(center));
        std::vector<double> token = family_token;
        for (double& v : token) v += 0.3 * rng.normal();
        spec.tokens.push_back(std::move(token));
        spec.bias_table.push_back(independent_joint(marginals(f, idx)));
      }
    };
    add(ContextSplit::kTrain, opt.train_per_family);
    add(ContextSplit::kValidation, opt.validation_per_family);
    add(ContextSplit::kHeldOut, opt.held_out_per_family);
  }
  spec.validate();
  return spec;
}

Dataset sample_context(const ToyWorldSpec& spec, int context, std::size_t count, std::uint64_t seed) {
  if (context < 0 || context >= spec.num_contexts()) throw IndexError("context out of range");
  Rng rng(derive_seed(seed, 0xc0, static_cast<std::uint64_t>(context)));
  Dataset out;
  out.reserve(count);
  const auto& row = spec.bias_table[static_cast<std::size_t>(context)];
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSample s;
    s.context = context;
    s.labels = spec.decode_joint(static_cast<int>(rng.categorical(row)));
    s.x0 = spec.mode_center(context, s.labels);
    for (double& v : s.x0) v += spec.noise_scale * rng.normal();
    out.push_back(std::move(s));
  }
  return out;
}

Dataset make_world(const ToyWorldSpec& spec, std::size_t num_samples, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0x3041));
  Dataset out;
  out.reserve(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i) {
    LabeledSample s;
    s.context = static_cast<int>(rng.uniform_int(0, spec.num_contexts() - 1));
    s.labels = spec.decode_joint(static_cast<int>(rng.categorical(spec.bias_table[static_cast<std::size_t>(s.context)])));
    s.x0 = spec.mode_center(s.context, s.labels);
    for (double& v : s.x0) v += spec.noise_scale * rng.normal();
    out.push_back(std::move(s));
  }
  return out;
}

int view_classes(const ToyWorldSpec& spec, std::span<const int> attributes) {
  if (attributes.empty()) throw ArgumentError("a classifier view needs at least one attribute");
  int k = 1;
  for (int a : attributes) {
    if (a < 0 || a >= static_cast<int>(spec.attributes.size())) throw IndexError("attribute out of range");
    k *= spec.attributes[static_cast<std::size_t>(a)].classes;
  }
  return k;
}

int view_label(const ToyWorldSpec& spec, std::span<const int> attributes, std::span<const int> labels) {
  int idx = 0;
  for (int a : attributes) idx = idx * spec.attributes[static_cast<std::size_t>(a)].classes + labels[static_cast<std::size_t>(a)];
  return idx;
}

std::string AttributeClassifier::descriptor() const { return std::string(to_string(role)) + ":" + net.descriptor(); }

std::vector<double> AttributeClassifier::logits(std::span<const double> x, std::span<const int> region) const {
  return net.forward(region_slice(x, region));
}

int AttributeClassifier::predict(std::span<const double> x, std::span<const int> region) const {
  const auto l = logits(x, region);
  return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

AttributeClassifier train_classifier(const ToyWorldSpec& spec, const Dataset& dataset, std::vector<int> attributes,
                                     ClassifierRole role, std::uint64_t seed, const ClassifierTrainOptions& options) {
  if (dataset.size() < 10) throw ArgumentError("classifier training needs at least 10 samples");
  const int k = view_classes(spec, attributes);
  const int in = static_cast<int>(spec.region_mask.size());
  AttributeClassifier clf;
  clf.attributes = std::move(attributes);
  clf.classes = k;
  clf.role = role;
  if (role == ClassifierRole::kTraining) {
    clf.net = Mlp({in, 16, k}, Activation::kTanh, derive_seed(seed, 0x7a1));
  } else {
    clf.net = Mlp({in, 24, 24, k}, Activation::kRelu, derive_seed(seed, 0xe7a1));
  }

  // 80/20 split by position; the dataset is already shuffled by construction.
  const std::size_t n_train = dataset.size() * 4 / 5;
  std::vector<std::vector<double>> regions;
  std::vector<int> labels;
  regions.reserve(dataset.size());
  for (const auto& s : dataset) {
    regions.push_back(region_slice(s.x0, spec.region_mask));
    labels.push_back(view_label(spec, clf.attributes, s.labels));
  }

  AdamW opt(clf.net.params().size(), {options.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  Rng rng(derive_seed(seed, 0x7a2));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(clf.net.params().size());
  std::vector<double> out(static_cast<std::size_t>(k));
  Mlp::Cache cache;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < n_train; start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(n_train, start + static_cast<std::size_t>(options.batch_size));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto i = order[b];
        clf.net.forward(regions[i], out, &cache);
        auto p = softmax(out);
        p[static_cast<std::size_t>(labels[i])] -= 1.0;
        for (double& v : p) v *= inv;
        clf.net.backward(cache, p, grad, {});
      }
      opt.step(clf.net.params(), grad);
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = n_train; i < dataset.size(); ++i) {
    clf.net.forward(regions[i], out, nullptr);
    if (std::max_element(out.begin(), out.end()) - out.begin() == labels[i]) ++correct;
  }
  clf.held_out_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size() - n_train);
  if (clf.held_out_accuracy < options.min_accuracy) {
    throw TrainingError(std::string(to_string(role)) + " classifier reached accuracy " +
                        std::to_string(clf.held_out_accuracy) + " < " + std::to_string(options.min_accuracy));
  }
  return clf;
}

double bias_metric(std::span<const double> freqs) {
  const std::size_t k = freqs.size();
  if (k < 2) throw ArgumentError("bias metric needs K >= 2");
  double sum = 0.0;
  for (double f : freqs) {
    if (!(f >= 0.0)) throw ArgumentError("frequencies must be >= 0");
    sum += f;
  }
  if (sum > 1.0 + 1e-9) throw ArgumentError("frequencies sum above 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) acc += std::abs(freqs[i] - freqs[j]);
  }
  return acc / (static_cast<double>(k * (k - 1)) / 2.0);
}

std::vector<double> evaluation_noise(std::uint64_t seed, int context, int index, int data_dim) {
  Rng rng(derive_seed(seed, 0xe0 + static_cast<std::uint64_t>(context) * 0x10001ULL, static_cast<std::uint64_t>(index)));
  return rng.normal_vector(static_cast<std::size_t>(data_dim));
}

namespace {

std::string view_name(const ToyWorldSpec& spec, const AttributeClassifier& clf) {
  std::string name;
  for (int a : clf.attributes) {
    if (!name.empty()) name += "x";
    name += spec.attributes[static_cast<std::size_t>(a)].name;
  }
  return name;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

EvaluationReport evaluate_model(const DenoiserModel& model, std::span<const int> contexts, const ToyWorldSpec& spec,
                                const EvaluationSetup& setup) {
  if (contexts.empty()) throw ArgumentError("evaluation needs at least one context");
  if (!setup.schedule) throw ConfigError("evaluation needs a noise schedule");
  if (setup.eval_classifiers.empty()) throw ConfigError("evaluation needs at least one evaluation classifier");
  for (const auto* c : setup.eval_classifiers) {
    if (!c || (setup.require_evaluation_role && c->role != ClassifierRole::kEvaluation)) throw ConfigError("evaluation requires evaluation-role classifiers");
  }
  if (!setup.train_classifiers.empty() && setup.train_classifiers.size() != setup.eval_classifiers.size()) {
    throw ConfigError("training classifiers must parallel the evaluation classifiers");
  }
  if (setup.frozen && !setup.extractors) throw ConfigError("semantics scoring needs feature extractors");
  if (setup.samples_per_context < 1) throw ConfigError("samples_per_context must be >= 1");
  const int d = model.data_dim();
  const std::size_t views = setup.eval_classifiers.size();

  EvaluationReport report;
  report.samples_per_context = setup.samples_per_context;
  for (int ctx : contexts) {
    if (ctx < 0 || ctx >= spec.num_contexts()) throw IndexError("evaluation context out of range");
    ContextReport cr;
    cr.context = ctx;
    cr.name = spec.contexts[static_cast<std::size_t>(ctx)].name;
    cr.family = spec.contexts[static_cast<std::size_t>(ctx)].family;
    cr.split = spec.contexts[static_cast<std::size_t>(ctx)].split;
    std::vector<std::vector<double>> counts(views);
    for (std::size_t v = 0; v < views; ++v) counts[v].assign(static_cast<std::size_t>(setup.eval_classifiers[v]->classes), 0.0);
    double cos_sum = 0.0;
    long disagree = 0;
    for (int i = 0; i < setup.samples_per_context; ++i) {
      const auto z = evaluation_noise(setup.seed, ctx, i, d);
      const auto noise_seed = derive_seed(setup.seed, 0x5e, static_cast<std::uint64_t>(ctx) * 100003ULL + i);
      const auto x = sample(model, ctx, z, *setup.schedule, setup.sampler, noise_seed);
      for (std::size_t v = 0; v < views; ++v) {
        const int pred = setup.eval_classifiers[v]->predict(x, setup.region);
        counts[v][static_cast<std::size_t>(pred)] += 1.0;
        if (!setup.train_classifiers.empty() && setup.train_classifiers[v]->predict(x, setup.region) != pred) ++disagree;
      }
      if (setup.frozen) {
        const auto o = sample(*setup.frozen, ctx, z, *setup.schedule, setup.sampler, noise_seed);
        const double c1 = cosine_similarity(setup.extractors->first.forward(x), setup.extractors->first.forward(o));
        const double c2 = cosine_similarity(setup.extractors->second.forward(x), setup.extractors->second.forward(o));
        cos_sum += 0.5 * (c1 + c2);
      }
    }
    const double n = setup.samples_per_context;
    for (std::size_t v = 0; v < views; ++v) {
      ViewReport vr;
      vr.name = view_name(spec, *setup.eval_classifiers[v]);
      for (double c : counts[v]) vr.freqs.push_back(c / n);
      vr.bias = bias_metric(vr.freqs);
      cr.views.push_back(std::move(vr));
    }
    cr.semantics_cosine = setup.frozen ? cos_sum / n : 0.0;
    cr.classifier_disagreement =
        setup.train_classifiers.empty() ? 0.0 : static_cast<double>(disagree) / (n * static_cast<double>(views));
    report.contexts.push_back(std::move(cr));
  }

  for (std::size_t v = 0; v < views; ++v) {
    ViewSummary s;
    s.name = report.contexts.front().views[v].name;
    std::vector<double> biases;
    const std::size_t k = report.contexts.front().views[v].freqs.size();
    std::vector<std::vector<double>> freqs(k);
    for (const auto& cr : report.contexts) {
      biases.push_back(cr.views[v].bias);
      for (std::size_t c = 0; c < k; ++c) freqs[c].push_back(cr.views[v].freqs[c]);
    }
    std::tie(s.bias_mean, s.bias_std) = mean_std(biases);
    for (const auto& f : freqs) {
      const auto [m, sd] = mean_std(f);
      s.freq_mean.push_back(m);
      s.freq_std.push_back(sd);
    }
    report.summary.push_back(std::move(s));
  }
  std::vector<double> sem, dis;
  for (const auto& cr : report.contexts) {
    sem.push_back(cr.semantics_cosine);
    dis.push_back(cr.classifier_disagreement);
  }
  report.semantics_mean = mean_std(sem).first;
  report.disagreement_mean = mean_std(dis).first;
  return report;
}

}  // namespace fairdiff
