#include "cobrar/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "cobrar/parallel.hpp"
#include "cobrar/strings.hpp"

namespace cobrar::train {

std::vector<int> TrainConfig::architecture() const {
  std::vector<int> arch = hidden_layers;
  arch.push_back(embedding_dim);
  return arch;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::runtime_error("learning_rate must be > 0");
  if (l2_weight < 0) throw std::runtime_error("l2_weight must be >= 0");
  if (batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
  if (n_neg < 1) throw std::runtime_error("n_neg must be >= 1");
  if (!(mu > 0.0 && mu < 0.5)) throw std::runtime_error("mu must lie in (0, 0.5)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::runtime_error("dropout_rate must lie in [0, 1)");
  }
  if (max_epochs < 1) throw std::runtime_error("max_epochs must be >= 1");
  if (patience < 0 || patience > max_epochs) {
    throw std::runtime_error("patience must lie in [0, max_epochs]");
  }
  if (embedding_dim < 1) throw std::runtime_error("embedding_dim must be >= 1");
  for (const int h : hidden_layers) {
    if (h < 1) throw std::runtime_error("hidden layer sizes must be >= 1");
  }
}

void write_train_log_tsv(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write train log to '" + path.string() + "'");
  out << "epoch\ttrain_loss\tval_ndcg_at_5\tis_best\n";
  for (int e = 0; e < log.epochs_run(); ++e) {
    out << (e + 1) << '\t' << dtos(log.train_loss[e]) << '\t'
        << dtos(log.val_ndcg[e]) << '\t' << (e + 1 == log.best_epoch ? 1 : 0)
        << '\n';
  }
  if (!out.flush()) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<int> sample_negatives(const data::InteractionDataset& train, int user,
                                  int n_neg, Rng& rng) {
  const auto row = train.user_row(user);
  const int m = train.n_items();
  if (static_cast<int>(row.size()) >= m) {
    throw std::runtime_error(strf("user %d interacted with all %d items", user, m));
  }
  std::vector<int> negs(static_cast<std::size_t>(n_neg));
  for (auto& neg : negs) {
    // Rejection keeps the draw exactly uniform over the complement.
    while (true) {
      const int j = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(m)));
      if (!std::binary_search(row.begin(), row.end(), j)) {
        neg = j;
        break;
      }
    }
  }
  return negs;
}

namespace {

double clamp_score(double y, double mu) { return std::clamp(y, mu, 1.0 - mu); }

// d clamp(y)/dy is 1 strictly inside [mu, 1-mu] and 0 outside.
bool clamp_active(double y, double mu) { return y > mu && y < 1.0 - mu; }

}  // namespace

double pair_loss(double y_pos, std::span<const double> y_negs, double mu) {
  if (!(mu > 0.0 && mu < 0.5)) {
    throw std::runtime_error(strf("mu %g outside (0, 0.5)", mu));
  }
  double loss = -std::log(clamp_score(y_pos, mu));
  for (const double y : y_negs) {
    loss -= std::log(1.0 - clamp_score(y, mu));
  }
  return loss;
}

BatchResult batch_loss_with_negatives(const models::Model& m,
                                      const data::InteractionDataset& train,
                                      Batch batch,
                                      std::span<const std::vector<int>> negatives,
                                      const TrainConfig& cfg, Rng& rng) {
  if (batch.empty()) throw std::runtime_error("empty batch");
  if (negatives.size() != batch.size()) {
    throw std::runtime_error("negatives must pair with batch entries");
  }
  BatchResult result{0.0, models::zero_grads(m)};
  const double mu = cfg.mu;
  const int d = models::embedding_dim(m);

  models::EmbedTrace user_trace;
  models::EmbedTrace pos_trace;
  std::vector<models::EmbedTrace> neg_traces;
  nn::Vec grad_user(static_cast<std::size_t>(d));
  nn::Vec grad_u_term(static_cast<std::size_t>(d));
  nn::Vec grad_other(static_cast<std::size_t>(d));

  for (std::size_t p = 0; p < batch.size(); ++p) {
    const auto [u, j] = batch[p];
    if (!train.has(u, j)) {
      throw std::runtime_error(strf("batch pair (%d, %d) is not a train positive", u, j));
    }
    const nn::Vec e_u =
        models::user_embed(m, train, u, nn::Mode::train, &rng, &user_trace);
    const nn::Vec e_j =
        models::item_embed(m, train, j, nn::Mode::train, &rng, &pos_trace);

    const auto& negs = negatives[p];
    neg_traces.resize(negs.size());
    std::vector<nn::Vec> e_negs(negs.size());
    for (std::size_t n = 0; n < negs.size(); ++n) {
      e_negs[n] = models::item_embed(m, train, negs[n], nn::Mode::train, &rng,
                                     &neg_traces[n]);
    }

    const double y_pos = nn::cosine(e_u, e_j);
    std::vector<double> y_negs(negs.size());
    for (std::size_t n = 0; n < negs.size(); ++n) {
      y_negs[n] = nn::cosine(e_u, e_negs[n]);
    }
    result.loss += pair_loss(y_pos, y_negs, mu);

    // Grad wrt e_u accumulates over the positive and every negative term
    // before one backward pass through the user path; terms outside the
    // clamp's active range contribute nothing.
    std::fill(grad_user.begin(), grad_user.end(), 0.0);
    if (clamp_active(y_pos, mu)) {
      const double dl_dy = -1.0 / y_pos;
      nn::cosine_backward(e_u, e_j, dl_dy, grad_u_term.data(), grad_other.data());
      for (int c = 0; c < d; ++c) grad_user[c] += grad_u_term[c];
      models::item_embed_backward(m, pos_trace, grad_other, result.grads);
    }
    for (std::size_t n = 0; n < negs.size(); ++n) {
      if (!clamp_active(y_negs[n], mu)) continue;
      const double dl_dy = 1.0 / (1.0 - y_negs[n]);
      nn::cosine_backward(e_u, e_negs[n], dl_dy, grad_u_term.data(),
                          grad_other.data());
      for (int c = 0; c < d; ++c) grad_user[c] += grad_u_term[c];
      models::item_embed_backward(m, neg_traces[n], grad_other, result.grads);
    }
    models::user_embed_backward(m, user_trace, grad_user, result.grads);
  }
  return result;
}

BatchResult batch_loss(const models::Model& m,
                       const data::InteractionDataset& train, Batch batch,
                       const TrainConfig& cfg, Rng& rng) {
  std::vector<std::vector<int>> negatives;
  negatives.reserve(batch.size());
  for (const auto& [u, j] : batch) {
    (void)j;
    negatives.push_back(cfg.n_neg > 0 ? sample_negatives(train, u, cfg.n_neg, rng)
                                      : std::vector<int>{});
  }
  return batch_loss_with_negatives(m, train, batch, negatives, cfg, rng);
}

FitResult fit(models::ModelKind kind, const data::SplitDataset& split,
              const TrainConfig& cfg, int eval_jobs, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto& train_ds = split.train;

  Rng init_rng = Rng::stream(static_cast<std::uint64_t>(cfg.seed), rng_tag::init);
  models::Model model =
      make_model(kind, train_ds.n_users(), train_ds.n_items(), cfg.architecture(),
                 cfg.dropout_rate, cfg.mu, init_rng);
  models::ModelGrads grads = models::zero_grads(model);
  std::vector<nn::ParamRef> params = models::param_refs(model, grads);
  nn::AdamState adam = nn::AdamState::for_params(params);

  std::vector<std::pair<int, int>> all_pairs = train_ds.all_pairs();
  if (all_pairs.empty()) throw std::runtime_error("no train interactions");

  FitResult result{model, TrainLog{}};
  EarlyStopper stopper(cfg.patience);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(static_cast<std::uint64_t>(cfg.seed),
                                  rng_tag::shuffle, static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(all_pairs);
    Rng batch_rng = Rng::stream(static_cast<std::uint64_t>(cfg.seed), rng_tag::batch,
                                static_cast<std::uint64_t>(epoch));

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < all_pairs.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(all_pairs.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch{all_pairs.data() + start, end - start};
      BatchResult br = batch_loss(model, train_ds, batch, cfg, batch_rng);
      if (!std::isfinite(br.loss)) {
        throw std::runtime_error(strf(
            "non-finite loss %g at epoch %d, batch starting at pair %zu", br.loss,
            epoch, start));
      }
      epoch_loss += br.loss;
      // params hold spans into `grads`; refresh the gradient views per batch.
      std::vector<nn::ParamRef> step_params = models::param_refs(model, br.grads);
      nn::adam_step(step_params, adam, cfg.learning_rate, cfg.l2_weight);
    }
    epoch_loss /= static_cast<double>(all_pairs.size());

    const eval::EvalReport val_report =
        eval::evaluate(model, split, eval::Phase::val, 5, eval_jobs);
    result.log.train_loss.push_back(epoch_loss);
    result.log.val_ndcg.push_back(val_report.mean_ndcg);

    if (stopper.observe(epoch, val_report.mean_ndcg)) {
      result.model = model;  // snapshot of the best epoch
    }
    result.log.best_epoch = stopper.best_epoch();
    if (on_epoch) on_epoch(epoch, epoch_loss, val_report.mean_ndcg);
    if (stopper.should_stop()) {
      result.log.stopped_early = true;
      break;
    }
  }
  return result;
}

std::vector<TrainConfig> GridSpec::enumerate() const {
  const auto hidden_axis =
      hidden_layers.empty() ? std::vector<std::vector<int>>{base.hidden_layers}
                            : hidden_layers;
  const auto dim_axis =
      embedding_dim.empty() ? std::vector<int>{base.embedding_dim} : embedding_dim;
  const auto lr_axis =
      learning_rate.empty() ? std::vector<double>{base.learning_rate} : learning_rate;
  const auto l2_axis =
      l2_weight.empty() ? std::vector<double>{base.l2_weight} : l2_weight;
  const auto drop_axis =
      dropout_rate.empty() ? std::vector<double>{base.dropout_rate} : dropout_rate;
  const auto batch_axis =
      batch_size.empty() ? std::vector<int>{base.batch_size} : batch_size;
  const auto neg_axis = n_neg.empty() ? std::vector<int>{base.n_neg} : n_neg;
  const auto mu_axis = mu.empty() ? std::vector<double>{base.mu} : mu;
  const auto epoch_axis =
      max_epochs.empty() ? std::vector<int>{base.max_epochs} : max_epochs;
  const auto patience_axis =
      patience.empty() ? std::vector<int>{base.patience} : patience;
  const auto seed_axis = seed.empty() ? std::vector<std::int64_t>{base.seed} : seed;

  std::vector<TrainConfig> out;
  for (const auto& hidden : hidden_axis)
    for (const int dim : dim_axis)
      for (const double lr : lr_axis)
        for (const double l2 : l2_axis)
          for (const double drop : drop_axis)
            for (const int bs : batch_axis)
              for (const int nn_ : neg_axis)
                for (const double mu_ : mu_axis)
                  for (const int me : epoch_axis)
                    for (const int pat : patience_axis)
                      for (const std::int64_t sd : seed_axis) {
                        TrainConfig cfg = base;
                        cfg.hidden_layers = hidden;
                        cfg.embedding_dim = dim;
                        cfg.learning_rate = lr;
                        cfg.l2_weight = l2;
                        cfg.dropout_rate = drop;
                        cfg.batch_size = bs;
                        cfg.n_neg = nn_;
                        cfg.mu = mu_;
                        cfg.max_epochs = me;
                        cfg.patience = pat;
                        cfg.seed = sd;
                        out.push_back(std::move(cfg));
                      }
  return out;
}

GridResult grid_search(const data::SplitDataset& split, models::ModelKind kind,
                       const GridSpec& grid, int jobs, const GridCallback& on_run) {
  const std::vector<TrainConfig> lattice = grid.enumerate();
  if (lattice.empty()) throw std::runtime_error("empty hyperparameter grid");
  for (const auto& cfg : lattice) cfg.validate();

  GridResult result;
  result.runs.resize(lattice.size());

  std::atomic<std::size_t> next{0};
  std::mutex cb_mu;
  std::exception_ptr error;
  std::mutex error_mu;

  const auto worker = [&] {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= lattice.size()) return;
      try {
        FitResult fr = fit(kind, split, lattice[idx], 1, nullptr);
        result.runs[idx] = GridRun{lattice[idx], std::move(fr.log)};
        if (on_run) {
          const std::lock_guard<std::mutex> lock(cb_mu);
          on_run(static_cast<int>(idx), static_cast<int>(lattice.size()),
                 result.runs[idx].config, result.runs[idx].log);
        }
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    const int n_threads = std::min<int>(jobs, static_cast<int>(lattice.size()));
    threads.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);

  const auto total_params = [&](const TrainConfig& cfg) {
    const auto arch = cfg.architecture();
    return models::param_count(arch, kind, split.train.n_users(),
                               split.train.n_items(), arch.front())
        .total;
  };
  int best = 0;
  double best_ndcg = -1.0;
  std::int64_t best_params = 0;
  for (std::size_t i = 0; i < result.runs.size(); ++i) {
    const auto& log = result.runs[i].log;
    if (log.best_epoch < 1) {
      throw std::runtime_error(strf("grid point %zu produced no epochs", i));
    }
    const double ndcg = log.val_ndcg[static_cast<std::size_t>(log.best_epoch - 1)];
    const std::int64_t params = total_params(result.runs[i].config);
    const bool better =
        ndcg > best_ndcg || (ndcg == best_ndcg && params < best_params);
    if (i == 0 || better) {
      best = static_cast<int>(i);
      best_ndcg = ndcg;
      best_params = params;
    }
  }
  result.best_index = best;
  result.best = result.runs[static_cast<std::size_t>(best)].config;
  return result;
}

}  // namespace cobrar::train
