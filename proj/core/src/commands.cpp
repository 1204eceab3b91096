#include "cobrar/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "cobrar/strings.hpp"

namespace cobrar::cli {

namespace {

namespace fs = std::filesystem;

std::string metric(double v) { return strf("%.10g", v); }

fs::path output_root(const ExperimentConfig& ec) {
  if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return fs::path(ec.output_dir);
}

std::int64_t now_unix() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Writes the manifest up front and finalizes it when the command finishes;
// an unwind leaves status=failed behind instead of a stale "running".
class RunManifest {
 public:
  RunManifest(const Config& effective, const std::string& command, RunInfo& info)
      : config_(effective), command_(command), info_(&info) {
    started_ = now_unix();
    start_clock_ = std::chrono::steady_clock::now();
    write("running");
  }

  RunManifest(const RunManifest&) = delete;
  RunManifest& operator=(const RunManifest&) = delete;

  ~RunManifest() {
    if (!finalized_) {
      try {
        write("failed");
      } catch (...) {
      }
    }
  }

  void add_artifact(const std::string& key, const fs::path& path) {
    artifacts_.emplace_back(key, path.string());
  }

  void finalize() {
    finalized_ = true;
    write("ok");
  }

 private:
  void write(const std::string& status) {
    Config m;
    m.set("run", "command", command_);
    m.set("run", "config_hash", strf("%016llx",
                                     static_cast<unsigned long long>(config_.hash())));
    m.set("run", "status", status);
    m.set("run", "started_unix", strf("%lld", static_cast<long long>(started_)));
    if (status != "running") {
      const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start_clock_)
                            .count();
      m.set("run", "finished_unix", strf("%lld", static_cast<long long>(now_unix())));
      m.set("run", "wall_ms", strf("%lld", static_cast<long long>(wall)));
    }
    for (const auto& [key, value] : artifacts_) m.set("artifacts", key, value);
    for (const auto& section : config_.section_names()) {
      for (const auto& [key, value] : config_.entries(section)) {
        m.set(section, key, value);
      }
    }
    std::ofstream out(info_->manifest);
    if (!out) {
      throw std::runtime_error("cannot write manifest '" +
                               info_->manifest.string() + "'");
    }
    out << m.serialize();
    out.flush();
  }

  Config config_;
  std::string command_;
  RunInfo* info_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
  std::int64_t started_ = 0;
  std::chrono::steady_clock::time_point start_clock_;
  bool finalized_ = false;
};

RunInfo make_run_dir(const Config& effective, const ExperimentConfig& ec,
                     const std::string& command) {
  RunInfo info;
  info.config_hash = effective.hash();
  info.run_dir = output_root(ec) /
                 strf("%s-%016llx", command.c_str(),
                      static_cast<unsigned long long>(info.config_hash));
  fs::create_directories(info.run_dir);
  info.manifest = info.run_dir / "manifest.txt";
  return info;
}

struct CachePaths {
  fs::path cache_file;
  fs::path split_file;
};

CachePaths cache_paths(const ExperimentConfig& ec) {
  const fs::path dir(ec.dataset.cache_dir);
  return {dir / "dataset.txt", dir / "dataset.split.txt"};
}

data::SplitDataset load_cached_split(const ExperimentConfig& ec) {
  const CachePaths paths = cache_paths(ec);
  if (!fs::exists(paths.cache_file) || !fs::exists(paths.split_file)) {
    throw std::runtime_error(
        "dataset cache not found under '" + ec.dataset.cache_dir +
        "': run the prepare command with this config first");
  }
  return data::load_cache(paths.cache_file, paths.split_file);
}

void check_fingerprint(const data::Fingerprint& checkpoint_fp,
                       const data::Fingerprint& cache_fp,
                       const fs::path& checkpoint) {
  if (!(checkpoint_fp == cache_fp)) {
    throw std::runtime_error(strf(
        "checkpoint '%s' was trained on a different dataset: checkpoint "
        "fingerprint (%s) vs cache fingerprint (%s)",
        checkpoint.c_str(), checkpoint_fp.to_string().c_str(),
        cache_fp.to_string().c_str()));
  }
}

void write_aggregate_tsv(const fs::path& path,
                         std::span<const CompareRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  // Branch-parameter ratio is relative to the smallest model in the table.
  std::int64_t min_branch = 0;
  for (const auto& row : rows) {
    if (min_branch == 0 || (row.params_branch > 0 && row.params_branch < min_branch)) {
      min_branch = row.params_branch;
    }
  }
  out << "model\tndcg\tarp\tpoprsp\tcoverage\tparams_branch\tparams_branch_ratio"
         "\tparams_total\n";
  for (const auto& row : rows) {
    out << row.name << '\t' << metric(row.ndcg)
        << (row.ndcg_significant ? "*" : "") << '\t' << metric(row.arp)
        << (row.arp_significant ? "*" : "") << '\t' << metric(row.poprsp) << '\t'
        << metric(row.coverage) << '\t' << row.params_branch << '\t';
    if (min_branch > 0 && row.params_branch % min_branch == 0) {
      out << (row.params_branch / min_branch);
    } else if (min_branch > 0) {
      out << metric(static_cast<double>(row.params_branch) /
                    static_cast<double>(min_branch));
    } else {
      out << 0;
    }
    out << '\t' << row.params_total << '\n';
  }
  if (!out.flush()) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void write_per_user_csv(const fs::path& path, const eval::EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "user_index,ndcg_at_k,arp\n";
  for (const auto& pu : report.per_user) {
    out << pu.user << ',' << metric(pu.ndcg) << ',' << metric(pu.arp) << '\n';
  }
  if (!out.flush()) throw std::runtime_error("failed writing '" + path.string() + "'");
}

models::ParamCount params_of(const models::Model& model,
                             const data::Fingerprint& fp) {
  const auto arch = models::architecture_of(model);
  return models::param_count(arch, models::kind_of(model), fp.n_users,
                             fp.n_items, arch.front());
}

}  // namespace

std::string architecture_label(std::span<const int> architecture) {
  std::string label;
  for (std::size_t i = 0; i < architecture.size(); ++i) {
    if (i > 0) label += 'x';
    label += strf("%d", architecture[i]);
  }
  return label;
}

std::string model_display_name(models::ModelKind kind,
                               std::span<const int> architecture) {
  return strf("%s[%s]", models::kind_name(kind),
              architecture_label(architecture).c_str());
}

PrepareResult cmd_prepare(const Config& cfg) {
  const ExperimentConfig ec = ExperimentConfig::from(cfg);
  PrepareResult result;
  result.run = make_run_dir(cfg, ec, "prepare");
  RunManifest manifest(cfg, "prepare", result.run);

  data::InteractionDataset raw_ds;
  switch (ec.dataset.format) {
    case DatasetFormat::movielens:
      raw_ds = data::binarize_and_dedup(data::parse_movielens(ec.dataset.path));
      break;
    case DatasetFormat::amazon:
      raw_ds = data::binarize_and_dedup(data::parse_amazon(ec.dataset.path));
      break;
    case DatasetFormat::synthetic:
      raw_ds = data::make_block_dataset(ec.dataset.users, ec.dataset.items,
                                        ec.dataset.blocks, ec.dataset.p_in,
                                        ec.dataset.p_out, ec.dataset.gen_seed);
      break;
  }
  const data::InteractionDataset filtered =
      data::k_core_filter(raw_ds, ec.dataset.k_core);
  const data::SplitDataset split =
      data::split_user_based(filtered, ec.dataset.ratios, ec.dataset.seed);

  const CachePaths paths = cache_paths(ec);
  fs::create_directories(fs::path(ec.dataset.cache_dir));
  data::save_cache(split, paths.cache_file, paths.split_file);
  result.cache_file = paths.cache_file;
  result.split_file = paths.split_file;
  result.fingerprint = fingerprint_of(split);

  result.stats_file = result.run.run_dir / "stats.txt";
  {
    std::ofstream stats(result.stats_file);
    if (!stats) {
      throw std::runtime_error("cannot write '" + result.stats_file.string() + "'");
    }
    stats << filtered.n_users() << ' ' << filtered.n_items() << ' '
          << filtered.n_interactions() << '\n';
    stats.flush();
  }

  manifest.add_artifact("cache", result.cache_file);
  manifest.add_artifact("split", result.split_file);
  manifest.add_artifact("stats", result.stats_file);
  manifest.finalize();
  return result;
}

TrainResult cmd_train(const Config& cfg, int jobs,
                      std::optional<std::int64_t> seed_override, bool verbose) {
  Config effective = cfg;
  if (seed_override.has_value()) {
    const std::string value = strf("%lld", static_cast<long long>(*seed_override));
    if (effective.has_section("grid")) {
      effective.set("grid", "seed", value);
    } else {
      effective.set("train", "seed", value);
    }
  }
  const ExperimentConfig ec = ExperimentConfig::from(effective);

  TrainResult result;
  result.run = make_run_dir(effective, ec, "train");
  RunManifest manifest(effective, "train", result.run);

  const data::SplitDataset split = load_cached_split(ec);
  const data::Fingerprint fp = fingerprint_of(split);

  result.log_tsv = result.run.run_dir / "train_log.tsv";
  result.checkpoint = result.run.run_dir / "model.ckpt";

  const auto run_fit = [&](const train::TrainConfig& tc) -> train::FitResult {
    // Keep a partial log on disk so a non-finite-loss abort stays inspectable.
    train::TrainLog live;
    try {
      return train::fit(ec.kind, split, tc, jobs,
                        [&](int epoch, double loss, double val_ndcg) {
                          live.train_loss.push_back(loss);
                          live.val_ndcg.push_back(val_ndcg);
                          live.best_epoch = 0;
                          if (verbose) {
                            std::cerr << strf("epoch %d loss %.6f val_ndcg@5 %.6f\n",
                                              epoch, loss, val_ndcg);
                          }
                        });
    } catch (...) {
      train::write_train_log_tsv(result.log_tsv, live);
      throw;
    }
  };

  if (ec.grid.has_value()) {
    result.grid_dir = result.run.run_dir / "grid";
    fs::create_directories(result.grid_dir);
    const train::GridResult gr = train::grid_search(
        split, ec.kind, *ec.grid, jobs,
        verbose ? train::GridCallback([](int idx, int total,
                                         const train::TrainConfig& tc,
                                         const train::TrainLog& log) {
          std::cerr << strf("grid %d/%d arch [%s] best val_ndcg@5 %.6f\n", idx + 1,
                            total,
                            architecture_label(tc.architecture()).c_str(),
                            log.val_ndcg[static_cast<std::size_t>(log.best_epoch - 1)]);
        })
                : train::GridCallback());

    std::ofstream summary(result.grid_dir / "grid_summary.tsv");
    summary << "index\thidden_layers\tembedding_dim\tlearning_rate\tl2_weight"
               "\tdropout_rate\tbatch_size\tn_neg\tmu\tmax_epochs\tpatience\tseed"
               "\tbest_epoch\tbest_val_ndcg\tstopped_early\n";
    for (std::size_t i = 0; i < gr.runs.size(); ++i) {
      const auto& run = gr.runs[i];
      train::write_train_log_tsv(
          result.grid_dir / strf("point_%03zu.tsv", i), run.log);
      std::string hidden;
      for (std::size_t h = 0; h < run.config.hidden_layers.size(); ++h) {
        hidden += strf(h ? " %d" : "%d", run.config.hidden_layers[h]);
      }
      summary << i << '\t' << hidden << '\t' << run.config.embedding_dim << '\t'
              << dtos(run.config.learning_rate) << '\t'
              << dtos(run.config.l2_weight) << '\t'
              << dtos(run.config.dropout_rate) << '\t' << run.config.batch_size
              << '\t' << run.config.n_neg << '\t' << dtos(run.config.mu) << '\t'
              << run.config.max_epochs << '\t' << run.config.patience << '\t'
              << run.config.seed << '\t' << run.log.best_epoch << '\t'
              << dtos(run.log.val_ndcg[static_cast<std::size_t>(run.log.best_epoch - 1)])
              << '\t' << (run.log.stopped_early ? 1 : 0) << '\n';
    }
    summary.flush();

    result.config = gr.best;
    manifest.add_artifact("grid_summary", result.grid_dir / "grid_summary.tsv");

    // Refit the winning point; fit is deterministic, so this reproduces the
    // grid run that won.
    const train::FitResult best_fit = run_fit(gr.best);
    result.log = best_fit.log;
    train::write_train_log_tsv(result.log_tsv, best_fit.log);
    models::save_checkpoint(result.checkpoint, best_fit.model, fp, gr.best);
  } else {
    result.config = *ec.single;
    const train::FitResult fit_result = run_fit(*ec.single);
    result.log = fit_result.log;
    train::write_train_log_tsv(result.log_tsv, fit_result.log);
    models::save_checkpoint(result.checkpoint, fit_result.model, fp, result.config);
  }

  manifest.add_artifact("checkpoint", result.checkpoint);
  manifest.add_artifact("train_log", result.log_tsv);
  manifest.finalize();
  return result;
}

EvaluateResult cmd_evaluate(const Config& cfg, const fs::path& checkpoint,
                            eval::Phase phase, int k, int jobs) {
  Config effective = cfg;
  effective.set("evaluate", "checkpoint", checkpoint.string());
  effective.set("evaluate", "phase", eval::phase_name(phase));
  effective.set("evaluate", "k", strf("%d", k));
  const ExperimentConfig ec = ExperimentConfig::from(cfg);

  EvaluateResult result;
  result.run = make_run_dir(effective, ec, "evaluate");
  RunManifest manifest(effective, "evaluate", result.run);

  const data::SplitDataset split = load_cached_split(ec);
  const data::Fingerprint fp = fingerprint_of(split);
  models::Checkpoint ckpt = models::load_checkpoint(checkpoint);
  check_fingerprint(ckpt.fingerprint, fp, checkpoint);

  result.report = eval::evaluate(ckpt.model, split, phase, k, jobs);
  result.params = params_of(ckpt.model, fp);

  CompareRow row;
  row.kind = models::kind_of(ckpt.model);
  row.name = model_display_name(row.kind, models::architecture_of(ckpt.model));
  row.ndcg = result.report.mean_ndcg;
  row.arp = result.report.mean_arp;
  row.poprsp = result.report.poprsp;
  row.coverage = result.report.coverage;
  row.params_branch = result.params.branch_params;
  row.params_total = result.params.total;

  result.aggregate_tsv = result.run.run_dir / "aggregate.tsv";
  result.per_user_csv = result.run.run_dir / "per_user.csv";
  write_aggregate_tsv(result.aggregate_tsv, {&row, 1});
  write_per_user_csv(result.per_user_csv, result.report);

  manifest.add_artifact("aggregate", result.aggregate_tsv);
  manifest.add_artifact("per_user", result.per_user_csv);
  manifest.finalize();
  return result;
}

CompareResult cmd_compare(const Config& cfg,
                          const std::vector<fs::path>& checkpoints,
                          eval::Phase phase, int k, double alpha, int jobs) {
  if (checkpoints.size() < 2) {
    throw std::runtime_error("compare needs at least two checkpoints");
  }
  Config effective = cfg;
  {
    std::string joined;
    for (const auto& c : checkpoints) {
      if (!joined.empty()) joined += ", ";
      joined += c.string();
    }
    effective.set("compare", "checkpoints", joined);
    effective.set("compare", "phase", eval::phase_name(phase));
    effective.set("compare", "k", strf("%d", k));
    effective.set("compare", "alpha", dtos(alpha));
  }
  const ExperimentConfig ec = ExperimentConfig::from(cfg);

  CompareResult result;
  result.run = make_run_dir(effective, ec, "compare");
  RunManifest manifest(effective, "compare", result.run);

  const data::SplitDataset split = load_cached_split(ec);
  const data::Fingerprint fp = fingerprint_of(split);

  std::vector<eval::EvalReport> reports;
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    models::Checkpoint ckpt = models::load_checkpoint(checkpoints[c]);
    check_fingerprint(ckpt.fingerprint, fp, checkpoints[c]);
    reports.push_back(eval::evaluate(ckpt.model, split, phase, k, jobs));

    CompareRow row;
    row.kind = models::kind_of(ckpt.model);
    row.name = strf("m%zu:%s", c,
                    model_display_name(row.kind,
                                       models::architecture_of(ckpt.model)).c_str());
    row.ndcg = reports.back().mean_ndcg;
    row.arp = reports.back().mean_arp;
    row.poprsp = reports.back().poprsp;
    row.coverage = reports.back().coverage;
    const auto params = params_of(ckpt.model, fp);
    row.params_branch = params.branch_params;
    row.params_total = params.total;
    result.rows.push_back(row);
  }

  for (std::size_t c = 0; c < result.rows.size(); ++c) {
    if (result.rows[c].ndcg > result.rows[result.best_ndcg_index].ndcg) {
      result.best_ndcg_index = static_cast<int>(c);
    }
    if (result.rows[c].arp < result.rows[result.best_arp_index].arp) {
      result.best_arp_index = static_cast<int>(c);
    }
  }

  const int n_comparisons = static_cast<int>(checkpoints.size()) - 1;
  const auto values_of = [&](std::size_t model_idx, bool ndcg) {
    std::vector<double> v;
    v.reserve(reports[model_idx].per_user.size());
    for (const auto& pu : reports[model_idx].per_user) {
      v.push_back(ndcg ? pu.ndcg : pu.arp);
    }
    return v;
  };

  bool all_ndcg_sig = true;
  bool all_arp_sig = true;
  const auto best_ndcg_vals = values_of(result.best_ndcg_index, true);
  const auto best_arp_vals = values_of(result.best_arp_index, false);
  for (std::size_t c = 0; c < result.rows.size(); ++c) {
    if (static_cast<int>(c) != result.best_ndcg_index) {
      const auto t = eval::paired_t_test(best_ndcg_vals, values_of(c, true),
                                         n_comparisons, alpha);
      result.ndcg_tests.push_back(t);
      all_ndcg_sig = all_ndcg_sig && t.significant;
    }
    if (static_cast<int>(c) != result.best_arp_index) {
      const auto t = eval::paired_t_test(best_arp_vals, values_of(c, false),
                                         n_comparisons, alpha);
      result.arp_tests.push_back(t);
      all_arp_sig = all_arp_sig && t.significant;
    }
  }
  result.rows[result.best_ndcg_index].ndcg_significant = all_ndcg_sig;
  result.rows[result.best_arp_index].arp_significant = all_arp_sig;

  result.table_tsv = result.run.run_dir / "comparison.tsv";
  write_aggregate_tsv(result.table_tsv, result.rows);

  result.ttest_tsv = result.run.run_dir / "ttests.tsv";
  {
    std::ofstream out(result.ttest_tsv);
    if (!out) throw std::runtime_error("cannot write '" + result.ttest_tsv.string() + "'");
    out << "metric\tbest_model\tother_model\tt_statistic\tp_value"
           "\tcorrected_alpha\tsignificant\n";
    std::size_t ndcg_i = 0;
    std::size_t arp_i = 0;
    for (std::size_t c = 0; c < result.rows.size(); ++c) {
      if (static_cast<int>(c) != result.best_ndcg_index) {
        const auto& t = result.ndcg_tests[ndcg_i++];
        out << "ndcg\t" << result.rows[result.best_ndcg_index].name << '\t'
            << result.rows[c].name << '\t' << metric(t.t_statistic) << '\t'
            << metric(t.p_value) << '\t' << metric(t.corrected_alpha) << '\t'
            << (t.significant ? 1 : 0) << '\n';
      }
      if (static_cast<int>(c) != result.best_arp_index) {
        const auto& t = result.arp_tests[arp_i++];
        out << "arp\t" << result.rows[result.best_arp_index].name << '\t'
            << result.rows[c].name << '\t' << metric(t.t_statistic) << '\t'
            << metric(t.p_value) << '\t' << metric(t.corrected_alpha) << '\t'
            << (t.significant ? 1 : 0) << '\n';
      }
    }
    out.flush();
  }

  manifest.add_artifact("comparison", result.table_tsv);
  manifest.add_artifact("ttests", result.ttest_tsv);
  manifest.finalize();
  return result;
}

BoxplotResult cmd_boxplot_data(const Config& cfg,
                               const std::vector<fs::path>& checkpoints,
                               eval::Phase phase, int jobs) {
  if (checkpoints.empty()) {
    throw std::runtime_error("boxplot-data needs checkpoints");
  }
  Config effective = cfg;
  {
    std::string joined;
    for (const auto& c : checkpoints) {
      if (!joined.empty()) joined += ", ";
      joined += c.string();
    }
    effective.set("boxplot", "checkpoints", joined);
    effective.set("boxplot", "phase", eval::phase_name(phase));
  }
  const ExperimentConfig ec = ExperimentConfig::from(cfg);

  BoxplotResult result;
  result.run = make_run_dir(effective, ec, "boxplot-data");
  RunManifest manifest(effective, "boxplot-data", result.run);

  const data::SplitDataset split = load_cached_split(ec);
  const data::Fingerprint fp = fingerprint_of(split);

  struct Entry {
    std::string arch;
    models::ModelKind kind;
    eval::EvalReport report;
  };
  std::vector<Entry> entries;
  std::vector<std::string> arch_order;
  for (const auto& path : checkpoints) {
    models::Checkpoint ckpt = models::load_checkpoint(path);
    check_fingerprint(ckpt.fingerprint, fp, path);
    Entry e{architecture_label(models::architecture_of(ckpt.model)),
            models::kind_of(ckpt.model),
            eval::evaluate(ckpt.model, split, phase, 5, jobs)};
    if (std::find(arch_order.begin(), arch_order.end(), e.arch) == arch_order.end()) {
      arch_order.push_back(e.arch);
    }
    entries.push_back(std::move(e));
  }

  // Every architecture must come as a (deepmf, cobrar) pair.
  for (const auto& arch : arch_order) {
    int n_cobrar = 0;
    int n_deepmf = 0;
    for (const auto& e : entries) {
      if (e.arch != arch) continue;
      (e.kind == models::ModelKind::cobrar ? n_cobrar : n_deepmf) += 1;
    }
    if (n_cobrar != 1 || n_deepmf != 1) {
      throw std::runtime_error(strf(
          "architecture [%s] is unpaired: %d cobrar and %d deepmf checkpoints",
          arch.c_str(), n_cobrar, n_deepmf));
    }
  }

  result.csv = result.run.run_dir / "boxplot.csv";
  std::ofstream out(result.csv);
  if (!out) throw std::runtime_error("cannot write '" + result.csv.string() + "'");
  out << "architecture,model,user_index,ndcg_at_5\n";
  for (const auto& arch : arch_order) {
    for (const auto kind : {models::ModelKind::deepmf, models::ModelKind::cobrar}) {
      for (const auto& e : entries) {
        if (e.arch != arch || e.kind != kind) continue;
        for (const auto& pu : e.report.per_user) {
          out << arch << ',' << models::kind_name(kind) << ',' << pu.user << ','
              << metric(pu.ndcg) << '\n';
          ++result.n_rows;
        }
      }
    }
  }
  if (!out.flush()) throw std::runtime_error("failed writing '" + result.csv.string() + "'");

  manifest.add_artifact("boxplot", result.csv);
  manifest.finalize();
  return result;
}

}  // namespace cobrar::cli
