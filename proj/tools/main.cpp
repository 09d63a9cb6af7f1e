#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fairdiff/config.hpp"
#include "fairdiff/errors.hpp"
#include "fairdiff/pipeline.hpp"
#include "fairdiff/report.hpp"

namespace fs = std::filesystem;
using namespace fairdiff;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs/out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON config file (merged over defaults)");
  cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set finetune.iterations=200");
  cmd->add_option("--seed", args.seed, "Run seed (overrides the config seed)");
  cmd->add_option("-o,--out", args.out_dir, "Output directory")->capture_default_str();
}

ExperimentConfig resolve(const CommonArgs& args) {
  Json raw = args.config_path.empty() ? default_config() : load_config(args.config_path);
  for (const auto& o : args.overrides) apply_override(raw, o);
  if (args.seed) raw["seed"] = *args.seed;
  return ExperimentConfig::from_json(raw);
}

void print_report_summary(const EvaluationReport& r) {
  for (const auto& s : r.summary) {
    std::printf("  %-14s bias %.3f +- %.3f  freqs", s.name.c_str(), s.bias_mean, s.bias_std);
    for (std::size_t k = 0; k < s.freq_mean.size(); ++k) std::printf(" %.3f", s.freq_mean[k]);
    std::printf("\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional-alignment finetuning of a toy conditional diffusion model"};
  app.require_subcommand(1);

  CommonArgs pre_args, ft_args, inv_args, eval_args, diag_args;
  std::string ft_base, inv_ckpt, eval_ckpt, diag_ckpt;
  bool print_defaults = false;
  app.add_flag("--print-default-config", print_defaults, "Print the default config and exit");

  auto* pre = app.add_subcommand("pretrain", "Train the biased base model");
  add_common(pre, pre_args);

  auto* ft = app.add_subcommand("finetune", "Alignment finetuning against a frozen base");
  add_common(ft, ft_args);
  ft->add_option("--base", ft_base, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);

  auto* inv = app.add_subcommand("invert", "Soft-prefix inversion benchmark across gradient modes");
  add_common(inv, inv_args);
  inv->add_option("--checkpoint", inv_ckpt, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint with the evaluation classifiers");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);

  auto* dg = app.add_subcommand("diagnose", "Per-timestep gradient magnitude diagnostics");
  add_common(dg, diag_args);
  dg->add_option("--checkpoint", diag_ckpt, "Checkpoint to diagnose")->required()->check(CLI::ExistingFile);

  app.require_subcommand(0, 1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kArgument);
  }
  if (print_defaults) {
    std::cout << default_config().dump(2) << "\n";
    return 0;
  }

  try {
    if (*pre) {
      const auto cfg = resolve(pre_args);
      const auto out = run_pretrain(cfg, pre_args.out_dir);
      std::printf("pretrained %ld iterations, final loss %.4f\n", cfg.pretrain.iterations,
                  out.loss_trace.empty() ? 0.0 : out.loss_trace.back());
      std::printf("held-out contexts:\n");
      print_report_summary(out.held_out);
      std::printf("checkpoint: %s\n", out.checkpoint.string().c_str());
    } else if (*ft) {
      const auto cfg = resolve(ft_args);
      const auto out = run_finetune(cfg, ft_base, ft_args.out_dir);
      std::printf("best iteration %ld: %s\n", out.best_iteration, out.best_metrics.dump().c_str());
      std::printf("frozen hash %s\n", out.frozen_hash_before == out.frozen_hash_after ? "unchanged" : "CHANGED");
      std::printf("checkpoint: %s\n", out.best_checkpoint.string().c_str());
    } else if (*inv) {
      const auto cfg = resolve(inv_args);
      const auto out = run_inversion_benchmark(cfg, inv_ckpt, inv_args.out_dir);
      for (const auto& t : out.traces) {
        std::printf("%-18s seed %llu  initial %.4f  final %.4f  ratio %.3f  trace var %.3g\n", to_string(t.mode),
                    static_cast<unsigned long long>(t.seed), t.initial, t.final, t.ratio(), t.trace_variance());
      }
    } else if (*ev) {
      const auto cfg = resolve(eval_args);
      const auto out = run_evaluate(cfg, eval_ckpt, eval_args.out_dir);
      print_report_summary(out.report);
      std::printf("  semantics cosine %.3f, classifier disagreement %.3f\n", out.report.semantics_mean,
                  out.report.disagreement_mean);
      if (out.summary.at("family_bias").size() > 1) {
        for (const auto& [family, views] : out.summary.at("family_bias").items()) {
          std::printf("  family %s: %s\n", family.c_str(), views.dump().c_str());
        }
      }
    } else if (*dg) {
      const auto cfg = resolve(diag_args);
      const auto diag = run_diagnose(cfg, diag_ckpt, diag_args.out_dir);
      std::printf("%5s %12s %12s %12s\n", "t", "naive", "scaled", "plain");
      for (std::size_t k = 0; k < diag.timesteps.size(); ++k) {
        std::printf("%5d %12.4g %12.4g %12.4g\n", diag.timesteps[k], diag.naive_summary[k].median,
                    diag.scaled_summary[k].median, diag.plain_summary[k].median);
      }
    } else {
      std::cout << app.help();
      return static_cast<int>(ErrorCategory::kArgument);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", category_name(e.category()), e.what());
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
