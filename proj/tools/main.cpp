#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cobrar/commands.hpp"

namespace {

using cobrar::cli::Config;

int run(int argc, char** argv) {
  CLI::App app{"Collaborative-filtering workbench: single-branch (CoBraR) and "
               "two-branch (DeepMF) recommenders"};
  app.require_subcommand(1);

  std::string config_path;
  std::string phase_str = "test";
  std::string checkpoint;
  std::vector<std::string> checkpoints;
  int k = 5;
  int jobs = 1;
  double alpha = 0.05;
  std::int64_t seed_override = 0;
  bool verbose = false;

  auto* prepare = app.add_subcommand(
      "prepare", "Parse, binarize, k-core filter, split and cache a dataset");
  prepare->add_option("--config", config_path, "experiment config file")->required();

  auto* train = app.add_subcommand(
      "train", "Train one configuration, or grid-search when [grid] is present");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--jobs", jobs, "parallel workers (grid points / eval users)");
  auto* seed_opt = train->add_option("--seed", seed_override, "override the training seed");
  train->add_flag("--verbose", verbose, "per-epoch progress on stderr");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  evaluate->add_option("--config", config_path, "experiment config file")->required();
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--phase", phase_str, "val or test")
      ->check(CLI::IsMember({"val", "test"}));
  evaluate->add_option("--k", k, "recommendation list length");
  evaluate->add_option("--jobs", jobs, "parallel evaluation workers");

  auto* compare = app.add_subcommand(
      "compare", "Evaluate checkpoints side by side with significance tests");
  compare->add_option("--config", config_path, "experiment config file")->required();
  compare->add_option("--checkpoints", checkpoints, "checkpoint files")
      ->required()
      ->expected(-2);
  compare->add_option("--phase", phase_str, "val or test")
      ->check(CLI::IsMember({"val", "test"}));
  compare->add_option("--k", k, "recommendation list length");
  compare->add_option("--alpha", alpha, "significance level before correction");
  compare->add_option("--jobs", jobs, "parallel evaluation workers");

  auto* boxplot = app.add_subcommand(
      "boxplot-data", "Per-user NDCG@5 rows for paired cobrar/deepmf checkpoints");
  boxplot->add_option("--config", config_path, "experiment config file")->required();
  boxplot->add_option("--checkpoints", checkpoints, "checkpoint files")
      ->required()
      ->expected(-2);
  boxplot->add_option("--phase", phase_str, "val or test")
      ->check(CLI::IsMember({"val", "test"}));
  boxplot->add_option("--jobs", jobs, "parallel evaluation workers");

  CLI11_PARSE(app, argc, argv);

  const Config cfg = Config::parse_file(config_path);

  if (prepare->parsed()) {
    const auto result = cobrar::cli::cmd_prepare(cfg);
    std::cout << result.fingerprint.n_users << ' ' << result.fingerprint.n_items
              << ' ' << result.fingerprint.n_interactions << '\n';
    std::cerr << "cache: " << result.cache_file.string() << '\n';
  } else if (train->parsed()) {
    const auto result = cobrar::cli::cmd_train(
        cfg, jobs,
        seed_opt->count() > 0 ? std::optional<std::int64_t>(seed_override)
                              : std::nullopt,
        verbose);
    std::cout << "checkpoint " << result.checkpoint.string() << '\n'
              << "best_epoch " << result.log.best_epoch << '\n';
  } else if (evaluate->parsed()) {
    const auto result = cobrar::cli::cmd_evaluate(
        cfg, checkpoint, cobrar::eval::phase_from_name(phase_str), k, jobs);
    std::cout << "ndcg " << result.report.mean_ndcg << '\n'
              << "arp " << result.report.mean_arp << '\n'
              << "poprsp " << result.report.poprsp << '\n'
              << "coverage " << result.report.coverage << '\n'
              << "report " << result.aggregate_tsv.string() << '\n';
  } else if (compare->parsed()) {
    std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
    const auto result = cobrar::cli::cmd_compare(
        cfg, paths, cobrar::eval::phase_from_name(phase_str), k, alpha, jobs);
    std::cout << "table " << result.table_tsv.string() << '\n';
  } else if (boxplot->parsed()) {
    std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
    const auto result = cobrar::cli::cmd_boxplot_data(
        cfg, paths, cobrar::eval::phase_from_name(phase_str), jobs);
    std::cout << "csv " << result.csv.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
