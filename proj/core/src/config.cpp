#include "fairdiff/config.hpp"

#include <fstream>
#include <sstream>

#include "fairdiff/errors.hpp"

namespace fairdiff {

Json default_config() {
  return Json::parse(R"({
    "seed": 0,
    "world": {
      "preset": "gender",
      "train_per_family": 20,
      "validation_per_family": 3,
      "held_out_per_family": 5,
      "data_dim": 8,
      "noise_scale": 0.3,
      "attribute_scale": 1.0,
      "samples": 20000,
      "classifier_samples": 8000,
      "realism_references": 512
    },
    "model": {
      "token_dim": 8,
      "prefix_len": 5,
      "embed_dim": 16,
      "time_dim": 8,
      "hidden": 64
    },
    "schedule": {
      "T": 100,
      "beta_start": 0.0085,
      "beta_end": 0.12,
      "kind": "scaled_linear"
    },
    "pretrain": {
      "iterations": 6000,
      "batch_size": 128,
      "learning_rate": 0.002,
      "final_lr_fraction": 0.1,
      "context_drop_prob": 0.1,
      "log_every": 200
    },
    "sampler": {
      "num_steps": 21,
      "stochastic": false,
      "guidance_weight": null
    },
    "finetune": {
      "target": "context_table",
      "adapter_rank": 4,
      "gradient_mode": "adjusted",
      "learning_rate": 0.005,
      "weight_decay": 0.0,
      "iterations": 600,
      "batch_size": 24,
      "checkpoint_every": 50,
      "step_jitter": [19, 20, 21, 22, 23],
      "families": [],
      "views": [{"attributes": ["gender"], "target": [0.5, 0.5], "conditional_on": null}],
      "ot_method": "auto",
      "ot_draws": 10000,
      "validation_samples": 100,
      "semantics_floor": 0.7
    },
    "loss": {
      "confidence_threshold": 0.8,
      "lambda_face": 1.0,
      "lambda_img_1": 8.0,
      "lambda_img_2": 1.6,
      "lambda_img_3": 0.32
    },
    "evaluate": {
      "samples_per_context": 200,
      "splits": ["held_out"]
    },
    "diagnose": {
      "runs": 20,
      "r_variance": 1e-4,
      "stochastic": true,
      "context": 0,
      "probe_timesteps": []
    },
    "invert": {
      "iterations": 300,
      "batch_size": 4,
      "learning_rate": 0.05,
      "seeds": [0, 1, 2],
      "modes": ["naive", "adjusted", "adjusted_unscaled"],
      "num_steps": 0,
      "stochastic": false,
      "context": 0,
      "target_context": -1
    }
  })");
}

void merge_config(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_config(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

Json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  Json patch;
  try {
    patch = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  Json config = default_config();
  merge_config(config, patch);
  return config;
}

void apply_override(Json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) throw ArgumentError("override must look like section.key=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &config;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[parts[i]];
  }
  *node = value;
}

SamplerConfig SamplerSettings::build(int T) const {
  SamplerConfig c = stochastic ? SamplerConfig::full(T, true) : SamplerConfig::strided(T, num_steps);
  c.guidance_weight = guidance_weight;
  return c;
}

namespace {

template <typename T>
T get(const Json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

ContextSplit parse_split(const std::string& s) {
  if (s == "train") return ContextSplit::kTrain;
  if (s == "validation") return ContextSplit::kValidation;
  if (s == "held_out") return ContextSplit::kHeldOut;
  throw ConfigError("unknown context split '" + s + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const Json& resolved) {
  ExperimentConfig c;
  c.raw = resolved;
  try {
    c.seed = resolved.at("seed").get<std::uint64_t>();

    const auto& w = resolved.at("world");
    c.preset = get<std::string>(w, "preset", "world");
    c.world.train_per_family = get<int>(w, "train_per_family", "world");
    c.world.validation_per_family = get<int>(w, "validation_per_family", "world");
    c.world.held_out_per_family = get<int>(w, "held_out_per_family", "world");
    c.world.data_dim = get<int>(w, "data_dim", "world");
    c.world.noise_scale = get<double>(w, "noise_scale", "world");
    c.world.attribute_scale = get<double>(w, "attribute_scale", "world");
    c.world.seed = c.seed;
    c.world_samples = get<std::size_t>(w, "samples", "world");
    c.classifier_samples = get<std::size_t>(w, "classifier_samples", "world");
    c.realism_references = get<std::size_t>(w, "realism_references", "world");

    const auto& m = resolved.at("model");
    c.shape.data_dim = c.world.data_dim;
    c.shape.token_dim = get<int>(m, "token_dim", "model");
    c.shape.prefix_len = get<int>(m, "prefix_len", "model");
    c.shape.embed_dim = get<int>(m, "embed_dim", "model");
    c.shape.time_dim = get<int>(m, "time_dim", "model");
    c.shape.hidden = get<int>(m, "hidden", "model");

    const auto& s = resolved.at("schedule");
    c.schedule.T = get<int>(s, "T", "schedule");
    c.schedule.beta_start = get<double>(s, "beta_start", "schedule");
    c.schedule.beta_end = get<double>(s, "beta_end", "schedule");
    const auto kind = get<std::string>(s, "kind", "schedule");
    if (kind == "linear") {
      c.schedule.kind = ScheduleKind::kLinear;
    } else if (kind == "scaled_linear") {
      c.schedule.kind = ScheduleKind::kScaledLinear;
    } else {
      throw ConfigError("unknown schedule kind '" + kind + "'");
    }
    c.shape.max_timestep = c.schedule.T;

    const auto& p = resolved.at("pretrain");
    c.pretrain.iterations = get<long>(p, "iterations", "pretrain");
    c.pretrain.batch_size = get<int>(p, "batch_size", "pretrain");
    c.pretrain.optimizer.learning_rate = get<double>(p, "learning_rate", "pretrain");
    c.pretrain.final_lr_fraction = get<double>(p, "final_lr_fraction", "pretrain");
    c.pretrain.context_drop_prob = get<double>(p, "context_drop_prob", "pretrain");
    c.pretrain.log_every = get<long>(p, "log_every", "pretrain");
    c.pretrain.seed = c.seed;

    const auto& sm = resolved.at("sampler");
    c.sampler.num_steps = get<int>(sm, "num_steps", "sampler");
    c.sampler.stochastic = get<bool>(sm, "stochastic", "sampler");
    if (!sm.at("guidance_weight").is_null()) c.sampler.guidance_weight = get<double>(sm, "guidance_weight", "sampler");

    const auto& f = resolved.at("finetune");
    c.finetune.target = parse_finetune_target(get<std::string>(f, "target", "finetune"));
    c.finetune.adapter_rank = get<int>(f, "adapter_rank", "finetune");
    c.finetune.gradient_mode = parse_gradient_mode(get<std::string>(f, "gradient_mode", "finetune"));
    c.finetune.optimizer.learning_rate = get<double>(f, "learning_rate", "finetune");
    c.finetune.optimizer.weight_decay = get<double>(f, "weight_decay", "finetune");
    c.finetune.iterations = get<long>(f, "iterations", "finetune");
    c.finetune.batch_size = get<int>(f, "batch_size", "finetune");
    c.finetune.checkpoint_every = get<long>(f, "checkpoint_every", "finetune");
    if (c.finetune.checkpoint_every < 1) throw ConfigError("finetune.checkpoint_every must be >= 1");
    if (c.finetune.batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
    c.finetune.step_jitter = get<std::vector<int>>(f, "step_jitter", "finetune");
    for (const auto& fam : f.at("families")) {
      c.finetune.families.push_back({fam.at("family").get<int>(), fam.value("weight", 1.0)});
    }
    for (const auto& v : f.at("views")) {
      AlignedView view;
      view.attributes = v.at("attributes").get<std::vector<std::string>>();
      view.target = v.at("target").get<std::vector<double>>();
      if (v.contains("conditional_on") && !v.at("conditional_on").is_null()) {
        view.conditional_on = v.at("conditional_on").get<std::string>();
      }
      c.finetune.views.push_back(std::move(view));
    }
    c.finetune.ot_method = get<std::string>(f, "ot_method", "finetune");
    if (c.finetune.ot_method != "auto" && c.finetune.ot_method != "exact" && c.finetune.ot_method != "monte_carlo") {
      throw ConfigError("finetune.ot_method must be auto, exact or monte_carlo");
    }
    c.finetune.ot_draws = get<long>(f, "ot_draws", "finetune");
    c.finetune.validation_samples = get<int>(f, "validation_samples", "finetune");
    c.finetune.semantics_floor = get<double>(f, "semantics_floor", "finetune");

    const auto& l = resolved.at("loss");
    c.loss.confidence_threshold = get<double>(l, "confidence_threshold", "loss");
    c.loss.lambda_face = get<double>(l, "lambda_face", "loss");
    c.loss.lambda_img_1 = get<double>(l, "lambda_img_1", "loss");
    c.loss.lambda_img_2 = get<double>(l, "lambda_img_2", "loss");
    c.loss.lambda_img_3 = get<double>(l, "lambda_img_3", "loss");

    const auto& e = resolved.at("evaluate");
    c.evaluate.samples_per_context = get<int>(e, "samples_per_context", "evaluate");
    c.evaluate.splits.clear();
    for (const auto& sp : e.at("splits")) c.evaluate.splits.push_back(parse_split(sp.get<std::string>()));

    const auto& d = resolved.at("diagnose");
    c.diagnose.runs = get<int>(d, "runs", "diagnose");
    c.diagnose.r_variance = get<double>(d, "r_variance", "diagnose");
    c.diagnose.stochastic = get<bool>(d, "stochastic", "diagnose");
    c.diagnose.context = get<int>(d, "context", "diagnose");
    c.diagnose.probe_timesteps = get<std::vector<int>>(d, "probe_timesteps", "diagnose");

    const auto& iv = resolved.at("invert");
    c.invert.iterations = get<long>(iv, "iterations", "invert");
    c.invert.batch_size = get<int>(iv, "batch_size", "invert");
    c.invert.optimizer.learning_rate = get<double>(iv, "learning_rate", "invert");
    c.invert.seeds = get<std::vector<std::uint64_t>>(iv, "seeds", "invert");
    c.invert.modes.clear();
    for (const auto& mode : iv.at("modes")) c.invert.modes.push_back(parse_gradient_mode(mode.get<std::string>()));
    c.invert.num_steps = get<int>(iv, "num_steps", "invert");
    c.invert.stochastic = get<bool>(iv, "stochastic", "invert");
    c.invert.context = get<int>(iv, "context", "invert");
    c.invert.target_context = get<int>(iv, "target_context", "invert");
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }

  make_world_spec(c.preset, c.world);  // throws on an unknown preset or bad world options
  (void)c.loss.validate();
  if (c.world_samples < 1 || c.classifier_samples < 1 || c.realism_references < 1) {
    throw ConfigError("world sample counts must be >= 1");
  }
  if (c.pretrain.iterations < 0 || c.pretrain.batch_size < 1) throw ConfigError("pretrain needs iterations >= 0, batch >= 1");
  if (c.finetune.iterations < 0 || c.finetune.batch_size < 1 || c.finetune.checkpoint_every < 1) {
    throw ConfigError("finetune needs iterations >= 0, batch_size >= 1, checkpoint_every >= 1");
  }
  if (c.finetune.views.empty()) throw ConfigError("finetune needs at least one aligned view");
  if (c.evaluate.samples_per_context < 1 || c.finetune.validation_samples < 1) {
    throw ConfigError("evaluation sample counts must be >= 1");
  }
  if (c.invert.iterations < 0 || c.invert.batch_size < 1) throw ConfigError("invert needs iterations >= 0, batch >= 1");
  return c;
}

}  // namespace fairdiff
