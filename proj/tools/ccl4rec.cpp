// Command-line entry point: reproducible training, evaluation, augmentation
// inspection, and embedding export over config-described corpora.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccl/config.hpp"
#include "ccl/eval.hpp"
#include "ccl/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value
  std::optional<std::string> strategy;
  std::optional<std::string> losses;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> out_dir;
};

void add_common_options(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* cfg = cmd->add_option("--config", args.config_path,
                              "run config file ([synthetic]/[data]/[train]/[margin]/[output])");
  if (config_required) cfg->required();
  cmd->add_option("--set", args.overrides,
                  "override any config entry, e.g. --set train.n_p=4 (repeatable)");
  cmd->add_option("--strategy", args.strategy,
                  "sampling strategy: random, harder, easier, easy2hard, hard2easy "
                  "(default easy2hard)");
  cmd->add_option("--losses", args.losses,
                  "objective set: full, no_ccl_pair, no_ccl, ce_only (default full)");
  cmd->add_option("--seed", args.seed, "training seed (default 42)");
  cmd->add_option("--epochs", args.epochs, "training epochs (default 10)");
}

ccl::RunConfig resolve_config(const CommonArgs& args) {
  ccl::RunConfig config = ccl::load_run_config(args.config_path);
  for (const auto& assignment : args.overrides) ccl::apply_override(config, assignment);
  if (args.strategy) config.train.strategy = ccl::parse_strategy(*args.strategy);
  if (args.losses) config.train.losses = ccl::parse_loss_set(*args.losses);
  if (args.seed) config.train.seed = *args.seed;
  if (args.epochs) config.train.epochs = *args.epochs;
  if (args.out_dir) config.out_dir = *args.out_dir;
  config.train.validate();
  return config;
}

bool is_usage_error(const std::exception& e) {
  return dynamic_cast<const ccl::ConfigError*>(&e) != nullptr ||
         dynamic_cast<const ccl::ParseError*>(&e) != nullptr ||
         dynamic_cast<const ccl::IndexError*>(&e) != nullptr;
}

int run_train(const CommonArgs& args) {
  ccl::RunConfig config;
  ccl::RunInputs inputs;
  try {
    config = resolve_config(args);
    inputs = ccl::materialize_inputs(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_usage_error(e) ? kExitUsage : kExitUsage;
  }
  try {
    std::cerr << "training: " << inputs.log.size() << " interactions, "
              << inputs.features.n_items << " items, dim " << inputs.features.dim << "\n";
    const auto outcome = ccl::run_training(config.train, inputs.features, inputs.log);
    std::filesystem::create_directories(config.out_dir);
    ccl::save_checkpoint(config.out_dir + "/checkpoint.cclm", outcome.params, &outcome.adam);
    ccl::write_metrics_log(config.out_dir + "/metrics.log", outcome.log_lines);
    for (std::size_t e = 0; e < outcome.eval_by_epoch.size(); ++e)
      std::cerr << ccl::format_epoch_line(e, outcome.eval_by_epoch[e]) << "\n";
    std::cerr << "wrote " << config.out_dir << "/checkpoint.cclm and metrics.log\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_evaluate(const CommonArgs& args, const std::string& checkpoint_path, std::size_t k) {
  ccl::RunConfig config;
  ccl::RunInputs inputs;
  ccl::Checkpoint checkpoint;
  try {
    config = resolve_config(args);
    inputs = ccl::materialize_inputs(config);
    checkpoint = ccl::load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    auto instances = ccl::build_instances(inputs.log, config.train.n_max);
    const auto split = ccl::split_leave_latest_out(std::move(instances));
    const auto summary = ccl::evaluate_model(checkpoint.params, inputs.features, split.eval, k);
    std::printf("auc %.6f precision@%zu %.6f recall@%zu %.6f f1@%zu %.6f\n", summary.auc, k,
                summary.precision, k, summary.recall, k, summary.f1);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_inspect(const CommonArgs& args, const std::string& checkpoint_path, std::uint64_t user,
                std::size_t n, double progress) {
  ccl::RunConfig config;
  ccl::RunInputs inputs;
  std::optional<ccl::ModelParams> params;
  ccl::TrainingInstance instance;
  try {
    config = resolve_config(args);
    inputs = ccl::materialize_inputs(config);
    if (!checkpoint_path.empty()) {
      params = ccl::load_checkpoint(checkpoint_path).params;
    } else {
      params = ccl::ModelParams::init(inputs.features.dim,
                                      ccl::Rng(config.train.seed).split("init"));
    }
    const auto instances = ccl::build_instances(inputs.log, config.train.n_max);
    bool found = false;
    for (const auto& candidate : instances)
      if (candidate.user == user && candidate.history.size() >= 2) {
        instance = candidate;
        found = true;
      }
    if (!found)
      throw ccl::ConfigError("user " + std::to_string(user) +
                             " has no sequence of length >= 2 to augment");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    const ccl::Rng rng(config.train.seed);
    ccl::Rng pool_rng = rng.split("inspect-pool");
    const auto pool = ccl::sample_substitute_pool(
        inputs.features.n_items, std::min(config.train.n_z, inputs.features.n_items), {},
        pool_rng);
    ccl::Tape tape;
    const auto scored = ccl::score_sequence(tape, *params, inputs.features, instance.history);
    const auto beta = ccl::score_substitutes(*params, scored, inputs.features, pool);
    const auto alpha = scored.detached_alpha.values();
    const ccl::StrategyState strategy{config.train.strategy, progress, 0};

    std::printf("# user polarity hardness replacements(position:item)\n");
    auto dump = [&](ccl::Polarity polarity, const char* tag) {
      ccl::Rng aug_rng = rng.split("inspect-augment").split(tag);
      const auto samples = ccl::construct(instance.history, alpha, beta, pool, polarity, n,
                                          strategy, aug_rng);
      double mean = 0.0, lo = 0.0, hi = 0.0;
      for (std::size_t s = 0; s < samples.size(); ++s) {
        const auto& aug = samples[s];
        std::printf("%llu %s %.10g ", static_cast<unsigned long long>(instance.user), tag,
                    aug.hardness);
        for (std::size_t r = 0; r < aug.replacements.size(); ++r) {
          const auto& rep = aug.replacements[r];
          std::printf("%s%zu:%u", r ? "," : "", rep.position,
                      static_cast<unsigned>(pool[rep.substitute]));
        }
        std::printf("\n");
        mean += aug.hardness;
        lo = s == 0 ? aug.hardness : std::min(lo, aug.hardness);
        hi = s == 0 ? aug.hardness : std::max(hi, aug.hardness);
      }
      if (!samples.empty())
        std::printf("# %s n=%zu hardness mean=%.10g min=%.10g max=%.10g\n", tag, samples.size(),
                    mean / static_cast<double>(samples.size()), lo, hi);
    };
    if (n > 0) {
      dump(ccl::Polarity::positive, "pos");
      dump(ccl::Polarity::negative, "neg");
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int run_export(const CommonArgs& args, const std::string& checkpoint_path, std::size_t users,
               const std::string& out_path) {
  ccl::RunConfig config;
  ccl::RunInputs inputs;
  ccl::Checkpoint checkpoint;
  try {
    config = resolve_config(args);
    inputs = ccl::materialize_inputs(config);
    checkpoint = ccl::load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    const auto instances = ccl::build_instances(inputs.log, config.train.n_max);
    const ccl::StrategyState strategy{config.train.strategy, 1.0, 0};
    ccl::export_case_study(checkpoint.params, inputs.features, instances, users, config.train.n_p,
                           config.train.n_n, config.train.n_z, strategy,
                           ccl::Rng(config.train.seed).split("export"), out_path);
    std::cerr << "wrote " << out_path << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ccl4rec: contrast-over-contrastive sequential recommendation trainer"};
  app.require_subcommand(1);

  CommonArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + metrics");
  add_common_options(train_cmd, train_args, true);
  train_cmd->add_option("--out", train_args.out_dir, "output directory (default from config)");

  CommonArgs eval_args;
  std::string eval_checkpoint;
  std::size_t eval_k = 50;
  auto* eval_cmd = app.add_subcommand("evaluate", "score the held-out split of a corpus");
  add_common_options(eval_cmd, eval_args, true);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint path")->required();
  eval_cmd->add_option("--k", eval_k, "ranking cutoff (default 50) [reference setup]");

  CommonArgs inspect_args;
  std::string inspect_checkpoint;
  std::uint64_t inspect_user = 0;
  std::size_t inspect_n = 10;
  double inspect_progress = 1.0;
  auto* inspect_cmd =
      app.add_subcommand("inspect-augmentations", "dump augmented sequences and hardness stats");
  add_common_options(inspect_cmd, inspect_args, true);
  inspect_cmd->add_option("--checkpoint", inspect_checkpoint,
                          "optional checkpoint (default: fresh seeded init)");
  inspect_cmd->add_option("--user", inspect_user, "user id to inspect")->required();
  inspect_cmd->add_option("--n", inspect_n, "samples per polarity (default 10)");
  inspect_cmd->add_option("--progress", inspect_progress,
                          "curriculum progress in [0,1] to inspect at (default 1.0)");

  CommonArgs export_args;
  std::string export_checkpoint;
  std::size_t export_users = 2;
  std::string export_out = "case.csv";
  auto* export_cmd = app.add_subcommand(
      "export-embeddings", "write query/positive/negative representations with hardness to CSV");
  add_common_options(export_cmd, export_args, true);
  export_cmd->add_option("--checkpoint", export_checkpoint, "model checkpoint path")->required();
  export_cmd->add_option("--users", export_users, "number of users to sample (default 2)");
  export_cmd->add_option("--out", export_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (train_cmd->parsed()) return run_train(train_args);
  if (eval_cmd->parsed()) return run_evaluate(eval_args, eval_checkpoint, eval_k);
  if (inspect_cmd->parsed())
    return run_inspect(inspect_args, inspect_checkpoint, inspect_user, inspect_n,
                       inspect_progress);
  if (export_cmd->parsed()) return run_export(export_args, export_checkpoint, export_users,
                                              export_out);
  return kExitUsage;
}
