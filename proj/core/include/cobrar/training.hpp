#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cobrar/dataset.hpp"
#include "cobrar/evaluation.hpp"
#include "cobrar/models.hpp"

namespace cobrar::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2_weight = 1e-3;
  int batch_size = 256;
  int n_neg = 5;
  double mu = 1e-6;
  double dropout_rate = 0.1;
  int max_epochs = 100;
  int patience = 10;
  int embedding_dim = 64;
  std::vector<int> hidden_layers;  // sizes before the embedding layer
  std::int64_t seed = 1;

  // [d_1 ... d_L] = hidden_layers followed by embedding_dim.
  std::vector<int> architecture() const;
  void validate() const;
};

struct TrainLog {
  std::vector<double> train_loss;  // mean Algorithm-1 loss per positive pair
  std::vector<double> val_ndcg;    // validation NDCG@5 per epoch
  int best_epoch = 0;              // 1-based
  bool stopped_early = false;

  int epochs_run() const { return static_cast<int>(train_loss.size()); }
};

// TSV with columns epoch, train_loss, val_ndcg_at_5, is_best.
void write_train_log_tsv(const std::filesystem::path& path, const TrainLog& log);

// Uniform draws (with replacement) from the items user i has no train
// interaction with; val/test items stay eligible.
std::vector<int> sample_negatives(const data::InteractionDataset& train, int user,
                                  int n_neg, Rng& rng);

// Cross-entropy over one positive and its negatives, every score clamped to
// [mu, 1-mu] before the logarithm.
double pair_loss(double y_pos, std::span<const double> y_negs, double mu);

using Batch = std::span<const std::pair<int, int>>;

struct BatchResult {
  double loss = 0.0;  // summed over the batch, as Algorithm 1 accumulates it
  models::ModelGrads grads;
};

// Algorithm-1 batch loss: per positive pair, embed user and item, accumulate
// the positive term, then sample n_neg negatives and accumulate their terms.
// Gradients flow through both embedding paths; with a shared branch both
// paths accumulate into the same tensors.
BatchResult batch_loss(const models::Model& m,
                       const data::InteractionDataset& train, Batch batch,
                       const TrainConfig& cfg, Rng& rng);

// Same with pre-drawn negatives (one list per pair); used by the epoch loop
// after sampling and by gradient checks that need a fixed loss surface.
BatchResult batch_loss_with_negatives(const models::Model& m,
                                      const data::InteractionDataset& train,
                                      Batch batch,
                                      std::span<const std::vector<int>> negatives,
                                      const TrainConfig& cfg, Rng& rng);

// Tracks the best validation value; stops after `patience` consecutive
// non-improving epochs (improvement = strictly greater).
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool observe(int epoch, double value) {
    if (value > best_) {
      best_ = value;
      best_epoch_ = epoch;
      streak_ = 0;
      return true;
    }
    ++streak_;
    return false;
  }
  bool should_stop() const { return streak_ > 0 && streak_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }

 private:
  int patience_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int streak_ = 0;
};

struct FitResult {
  models::Model model;  // parameters of the best validation epoch
  TrainLog log;
};

using EpochCallback = std::function<void(int epoch, double loss, double val_ndcg)>;

// Full training loop: seeded shuffling, Algorithm-1 batches, Adam with
// coupled L2, per-epoch validation NDCG@5 and early stopping. Deterministic
// for a fixed (split, cfg): reruns produce bit-identical logs and models.
FitResult fit(models::ModelKind kind, const data::SplitDataset& split,
              const TrainConfig& cfg, int eval_jobs = 1,
              const EpochCallback& on_epoch = nullptr);

// One list of values per axis; empty axes fall back to the TrainConfig
// defaults. enumerate() walks the lattice in odometer order with
// hidden_layers slowest and seed fastest.
struct GridSpec {
  std::vector<std::vector<int>> hidden_layers;
  std::vector<int> embedding_dim;
  std::vector<double> learning_rate;
  std::vector<double> l2_weight;
  std::vector<double> dropout_rate;
  std::vector<int> batch_size;
  std::vector<int> n_neg;
  std::vector<double> mu;
  std::vector<int> max_epochs;
  std::vector<int> patience;
  std::vector<std::int64_t> seed;
  TrainConfig base;

  std::vector<TrainConfig> enumerate() const;
};

struct GridRun {
  TrainConfig config;
  TrainLog log;
};

struct GridResult {
  int best_index = 0;
  TrainConfig best;
  std::vector<GridRun> runs;
};

using GridCallback = std::function<void(int index, int total, const TrainConfig&,
                                        const TrainLog&)>;

// Trains every lattice point and selects the highest validation NDCG@5; ties
// break toward fewer total parameters, then earlier enumeration order.
GridResult grid_search(const data::SplitDataset& split, models::ModelKind kind,
                       const GridSpec& grid, int jobs = 1,
                       const GridCallback& on_run = nullptr);

}  // namespace cobrar::train
