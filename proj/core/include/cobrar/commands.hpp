#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cobrar/checkpoint.hpp"
#include "cobrar/config.hpp"
#include "cobrar/evaluation.hpp"
#include "cobrar/training.hpp"

namespace cobrar::cli {

// Overrides the [output] dir of every command when set.
inline constexpr const char* kOutputRootEnv = "COBRAR_OUTPUT_ROOT";

// Each run owns a directory named <command>-<config hash> under the output
// root. The manifest is written (status=running) before the work starts and
// finalized afterwards; timestamps aside, reruns are byte-identical.
struct RunInfo {
  std::filesystem::path run_dir;
  std::filesystem::path manifest;
  std::uint64_t config_hash = 0;
};

struct PrepareResult {
  RunInfo run;
  std::filesystem::path cache_file;
  std::filesystem::path split_file;
  std::filesystem::path stats_file;
  data::Fingerprint fingerprint;
};

// Raw file (or synthetic generator) -> binarize -> k-core -> split -> cache.
PrepareResult cmd_prepare(const Config& cfg);

struct TrainResult {
  RunInfo run;
  std::filesystem::path checkpoint;
  std::filesystem::path log_tsv;
  std::filesystem::path grid_dir;  // empty unless grid mode
  train::TrainConfig config;       // the (best) configuration trained
  train::TrainLog log;
};

// Single fit when [train] is present, grid search + refit of the best point
// when [grid] is present. A non-finite-loss abort still writes the log of
// the completed epochs before rethrowing.
TrainResult cmd_train(const Config& cfg, int jobs = 1,
                      std::optional<std::int64_t> seed_override = std::nullopt,
                      bool verbose = false);

struct EvaluateResult {
  RunInfo run;
  std::filesystem::path aggregate_tsv;
  std::filesystem::path per_user_csv;
  eval::EvalReport report;
  models::ParamCount params;
};

EvaluateResult cmd_evaluate(const Config& cfg,
                            const std::filesystem::path& checkpoint,
                            eval::Phase phase, int k, int jobs = 1);

struct CompareRow {
  std::string name;
  models::ModelKind kind = models::ModelKind::cobrar;
  double ndcg = 0.0;
  double arp = 0.0;
  double poprsp = 0.0;
  double coverage = 0.0;
  std::int64_t params_branch = 0;
  std::int64_t params_total = 0;
  bool ndcg_significant = false;  // set on the best row only
  bool arp_significant = false;
};

struct CompareResult {
  RunInfo run;
  std::filesystem::path table_tsv;
  std::filesystem::path ttest_tsv;
  std::vector<CompareRow> rows;
  int best_ndcg_index = 0;
  int best_arp_index = 0;
  std::vector<eval::TTestResult> ndcg_tests;  // best vs each other model
  std::vector<eval::TTestResult> arp_tests;
};

// Evaluates every checkpoint on one split and tests the best model against
// the rest (paired t-tests, Bonferroni n-1) for the user-level metrics.
// PopRSP and coverage are global and carry no tests.
CompareResult cmd_compare(const Config& cfg,
                          const std::vector<std::filesystem::path>& checkpoints,
                          eval::Phase phase, int k, double alpha, int jobs = 1);

struct BoxplotResult {
  RunInfo run;
  std::filesystem::path csv;
  std::int64_t n_rows = 0;
};

// Long-format per-user test NDCG@5 for (deepmf, cobrar) checkpoint pairs of
// equal architecture; header architecture,model,user_index,ndcg_at_5.
BoxplotResult cmd_boxplot_data(const Config& cfg,
                               const std::vector<std::filesystem::path>& checkpoints,
                               eval::Phase phase = eval::Phase::test, int jobs = 1);

// "<kind>[d1x...xdL]" display name used in tables.
std::string model_display_name(models::ModelKind kind,
                               std::span<const int> architecture);

std::string architecture_label(std::span<const int> architecture);

}  // namespace cobrar::cli
