#include "doctest.h"

#include <cmath>
#include <fstream>

#include "cobrar/training.hpp"
#include "support/oracles.hpp"

using namespace cobrar;

namespace {

// Frozen oracle values (independent high-precision evaluation).
constexpr double kTwoLnTwo = 1.3862943611198906;
constexpr double kNegLogMu1em6 = 13.815510557964274;
constexpr double kNegLog1mMu1em6 = 1.0000005000003333e-6;

data::SplitDataset toy_split(int n_users, int n_items, double density,
                             std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::RawInteraction> raw;
  for (int u = 0; u < n_users; ++u) {
    for (int j = 0; j < n_items; ++j) {
      if (rng.uniform_real() < density || j == u % n_items ||
          j == (u + 1) % n_items) {
        raw.push_back({"u" + std::to_string(u), "i" + std::to_string(j), 1.0, 0});
      }
    }
  }
  const auto ds = data::binarize_and_dedup(raw);
  return data::split_user_based(ds, {0.7, 0.1, 0.2}, 77);
}

train::TrainConfig toy_config() {
  train::TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.l2_weight = 0.0;
  cfg.batch_size = 8;
  cfg.n_neg = 2;
  cfg.dropout_rate = 0.0;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  cfg.embedding_dim = 3;
  cfg.hidden_layers = {4};
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("sample_negatives with a single candidate always returns it") {
  const auto ds = data::binarize_and_dedup(
      {{"u", "a", 1, 0}, {"u", "b", 1, 0}, {"v", "c", 1, 0}});
  REQUIRE(ds.n_items() == 3);
  Rng rng(1);
  const auto negs = train::sample_negatives(ds, 0, 5, rng);
  CHECK(negs == std::vector<int>(5, 2));
}

TEST_CASE("sample_negatives fails when the user owns the whole catalog") {
  const auto ds = data::binarize_and_dedup({{"u", "a", 1, 0}, {"u", "b", 1, 0}});
  Rng rng(1);
  CHECK_THROWS(train::sample_negatives(ds, 0, 1, rng));
}

TEST_CASE("sample_negatives draws uniformly over the complement") {
  // 25 items, 5 train positives -> 20 candidates.
  std::vector<data::RawInteraction> raw;
  for (int j = 0; j < 25; ++j) {
    raw.push_back({"filler", "i" + std::to_string(j), 1, 0});
  }
  for (int j = 0; j < 5; ++j) {
    raw.push_back({"u", "i" + std::to_string(j), 1, 0});
  }
  const auto ds = data::binarize_and_dedup(raw);
  const int user = ds.user_index("u");

  Rng rng(20240309);
  const int n_draws = 100000;
  std::vector<int> counts(25, 0);
  for (int t = 0; t < n_draws / 10; ++t) {
    for (const int j : train::sample_negatives(ds, user, 10, rng)) {
      CHECK(j >= 5);  // never a train positive
      counts[static_cast<std::size_t>(j)] += 1;
    }
  }
  // Chi-square against uniform over the 20 candidates: mean df, var 2*df;
  // accept within 3 sigma.
  const double expected = n_draws / 20.0;
  double chi2 = 0.0;
  for (int j = 5; j < 25; ++j) {
    const double d = counts[static_cast<std::size_t>(j)] - expected;
    chi2 += d * d / expected;
  }
  const double df = 19.0;
  CHECK(chi2 < df + 3.0 * std::sqrt(2.0 * df));
  CHECK(chi2 > df - 3.0 * std::sqrt(2.0 * df));
}

TEST_CASE("pair_loss evaluates the clamped cross entropy") {
  CHECK(train::pair_loss(0.5, std::vector<double>{0.5}, 1e-6) ==
        doctest::Approx(kTwoLnTwo).epsilon(1e-12));
  CHECK(train::pair_loss(1.0, {}, 1e-6) ==
        doctest::Approx(kNegLog1mMu1em6).epsilon(1e-9));
  CHECK(train::pair_loss(-1.0, {}, 1e-6) ==
        doctest::Approx(kNegLogMu1em6).epsilon(1e-12));
  CHECK_THROWS(train::pair_loss(0.5, {}, 0.7));
}

TEST_CASE("pair_loss is non-negative for any scores in [-1, 1]") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const double y_pos = rng.uniform(-1, 1);
    std::vector<double> negs(static_cast<std::size_t>(rng.uniform_below(6)));
    for (auto& y : negs) y = rng.uniform(-1, 1);
    const double mu = rng.uniform(1e-9, 0.49);
    CHECK(train::pair_loss(y_pos, negs, mu) >= 0.0);
  }
}

TEST_CASE("degenerate one-pair batch reduces to the positive term") {
  const auto split = toy_split(6, 5, 0.3, 2);
  auto cfg = toy_config();
  cfg.n_neg = 0;  // test-only configuration; fit itself requires n_neg >= 1
  Rng init(9);
  const models::Model m = models::make_model(models::ModelKind::cobrar, 6, 5,
                                             cfg.architecture(), 0.0, cfg.mu, init);
  const auto pairs = split.train.all_pairs();
  const std::pair<int, int> pair = pairs.front();

  Rng rng(4);
  const auto br = train::batch_loss(m, split.train, {&pair, 1}, cfg, rng);
  const auto e_u =
      models::user_embed(m, split.train, pair.first, nn::Mode::eval, nullptr, nullptr);
  const auto e_j =
      models::item_embed(m, split.train, pair.second, nn::Mode::eval, nullptr, nullptr);
  const double want = -std::log(std::clamp(nn::cosine(e_u, e_j), cfg.mu, 1 - cfg.mu));
  CHECK(br.loss == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("batch loss composes from independent pair losses") {
  const auto split = toy_split(7, 6, 0.35, 8);
  const auto cfg = toy_config();
  Rng init(11);
  const models::Model m = models::make_model(models::ModelKind::cobrar, 7, 6,
                                             cfg.architecture(), 0.0, cfg.mu, init);
  const auto pairs = split.train.all_pairs();
  const train::Batch batch{pairs.data(), 5};

  Rng sample_rng(21);
  std::vector<std::vector<int>> negs;
  for (const auto& [u, j] : batch) {
    (void)j;
    negs.push_back(train::sample_negatives(split.train, u, cfg.n_neg, sample_rng));
  }
  Rng rng(1);
  const auto br =
      train::batch_loss_with_negatives(m, split.train, batch, negs, cfg, rng);

  double want = 0.0;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const auto e_u = models::user_embed(m, split.train, batch[p].first,
                                        nn::Mode::eval, nullptr, nullptr);
    const auto e_j = models::item_embed(m, split.train, batch[p].second,
                                        nn::Mode::eval, nullptr, nullptr);
    std::vector<double> y_negs;
    for (const int k : negs[p]) {
      const auto e_k =
          models::item_embed(m, split.train, k, nn::Mode::eval, nullptr, nullptr);
      y_negs.push_back(nn::cosine(e_u, e_k));
    }
    want += train::pair_loss(nn::cosine(e_u, e_j), y_negs, cfg.mu);
  }
  CHECK(br.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("batch rejects pairs that are not train positives") {
  const auto split = toy_split(5, 4, 0.3, 6);
  const auto cfg = toy_config();
  Rng init(2);
  const models::Model m = models::make_model(models::ModelKind::cobrar, 5, 4,
                                             cfg.architecture(), 0.0, cfg.mu, init);
  std::pair<int, int> fake{-1, -1};
  for (int u = 0; u < 5 && fake.first < 0; ++u) {
    for (int j = 0; j < 4; ++j) {
      if (!split.train.has(u, j)) {
        fake = {u, j};
        break;
      }
    }
  }
  REQUIRE(fake.first >= 0);
  Rng rng(1);
  CHECK_THROWS(train::batch_loss(m, split.train, {&fake, 1}, cfg, rng));
}

TEST_CASE("analytic batch gradients match finite differences") {
  const auto split = toy_split(6, 5, 0.4, 12);
  auto cfg = toy_config();
  for (const auto kind : {models::ModelKind::cobrar, models::ModelKind::deepmf}) {
    Rng init(31);
    models::Model m = models::make_model(kind, 6, 5, cfg.architecture(), 0.0,
                                         cfg.mu, init);
    const auto pairs = split.train.all_pairs();
    const train::Batch batch{pairs.data(), std::min<std::size_t>(6, pairs.size())};

    Rng sample_rng(7);
    std::vector<std::vector<int>> negs;
    for (const auto& [u, j] : batch) {
      (void)j;
      negs.push_back(train::sample_negatives(split.train, u, cfg.n_neg, sample_rng));
    }
    Rng rng(1);
    const auto br =
        train::batch_loss_with_negatives(m, split.train, batch, negs, cfg, rng);

    Rng fd_rng(1);
    const auto outcome = oracle::fd_check(m, br.grads, [&]() {
      return train::batch_loss_with_negatives(m, split.train, batch, negs, cfg,
                                              fd_rng)
          .loss;
    });
    INFO("worst parameter: ", outcome.worst_param);
    CHECK(outcome.max_err < 1e-4);
  }
}

TEST_CASE("one-dimensional embeddings saturate the clamp and kill the gradient") {
  // With d = 1 every cosine is exactly +-1 (or 0), always outside
  // [mu, 1 - mu], so the clamp zeroes every parameter gradient.
  const auto split = toy_split(5, 4, 0.5, 3);
  auto cfg = toy_config();
  cfg.hidden_layers = {};
  cfg.embedding_dim = 1;
  Rng init(13);
  models::Model m = models::make_model(models::ModelKind::cobrar, 5, 4,
                                       cfg.architecture(), 0.0, cfg.mu, init);
  const auto pairs = split.train.all_pairs();
  Rng rng(2);
  auto br = train::batch_loss(m, split.train,
                              {pairs.data(), std::min<std::size_t>(4, pairs.size())},
                              cfg, rng);
  auto refs = models::param_refs(m, br.grads);
  for (const auto& ref : refs) {
    for (const double g : ref.grad) CHECK(g == 0.0);
  }
  CHECK(br.loss > 0.0);
}

TEST_CASE("shared-branch gradients are the sum of the user and item paths") {
  const auto split = toy_split(6, 5, 0.4, 19);
  const auto cfg = toy_config();
  Rng init(3);
  models::Model m = models::make_model(models::ModelKind::cobrar, 6, 5,
                                       cfg.architecture(), 0.0, cfg.mu, init);
  const auto pairs = split.train.all_pairs();
  const std::pair<int, int> pair = pairs.front();
  const std::vector<std::vector<int>> negs = {{1, 3}};

  Rng rng(1);
  const auto full =
      train::batch_loss_with_negatives(m, split.train, {&pair, 1}, negs, cfg, rng);

  // Recompute each path's contribution separately via the embed API.
  models::EmbedTrace trace_u, trace_j, trace_n0, trace_n1;
  Rng r2(1);
  const auto e_u =
      models::user_embed(m, split.train, pair.first, nn::Mode::train, &r2, &trace_u);
  const auto e_j =
      models::item_embed(m, split.train, pair.second, nn::Mode::train, &r2, &trace_j);
  const auto e_n0 =
      models::item_embed(m, split.train, negs[0][0], nn::Mode::train, &r2, &trace_n0);
  const auto e_n1 =
      models::item_embed(m, split.train, negs[0][1], nn::Mode::train, &r2, &trace_n1);

  const int d = 3;
  nn::Vec gu_total(d, 0.0), gu(d), gv(d);
  auto user_only = models::zero_grads(m);
  auto item_only = models::zero_grads(m);

  const double y_pos = nn::cosine(e_u, e_j);
  if (y_pos > cfg.mu && y_pos < 1 - cfg.mu) {
    nn::cosine_backward(e_u, e_j, -1.0 / y_pos, gu.data(), gv.data());
    for (int c = 0; c < d; ++c) gu_total[c] += gu[c];
    models::item_embed_backward(m, trace_j, gv, item_only);
  }
  const nn::Vec* e_negs[2] = {&e_n0, &e_n1};
  const models::EmbedTrace* traces[2] = {&trace_n0, &trace_n1};
  for (int n = 0; n < 2; ++n) {
    const double y = nn::cosine(e_u, *e_negs[n]);
    if (y > cfg.mu && y < 1 - cfg.mu) {
      nn::cosine_backward(e_u, *e_negs[n], 1.0 / (1.0 - y), gu.data(), gv.data());
      for (int c = 0; c < d; ++c) gu_total[c] += gu[c];
      models::item_embed_backward(m, *traces[n], gv, item_only);
    }
  }
  models::user_embed_backward(m, trace_u, gu_total, user_only);

  const auto& g_full = std::get<models::CoBraRGrads>(full.grads).g;
  const auto& g_user = std::get<models::CoBraRGrads>(user_only).g;
  const auto& g_item = std::get<models::CoBraRGrads>(item_only).g;
  for (std::size_t l = 0; l < g_full.layers.size(); ++l) {
    for (std::size_t i = 0; i < g_full.layers[l].dw.a.size(); ++i) {
      CHECK(g_full.layers[l].dw.a[i] ==
            doctest::Approx(g_user.layers[l].dw.a[i] + g_item.layers[l].dw.a[i])
                .epsilon(1e-12));
    }
  }
  // Both paths genuinely contribute.
  double user_norm = 0.0, item_norm = 0.0;
  for (const auto& l : g_user.layers) {
    for (const double g : l.dw.a) user_norm += g * g;
  }
  for (const auto& l : g_item.layers) {
    for (const double g : l.dw.a) item_norm += g * g;
  }
  CHECK(user_norm > 0.0);
  CHECK(item_norm > 0.0);
}

TEST_CASE("early stopping semantics") {
  SUBCASE("patience zero stops after the first non-improving epoch") {
    train::EarlyStopper s(0);
    CHECK(s.observe(1, 0.5));
    CHECK(!s.should_stop());
    CHECK(!s.observe(2, 0.5));  // equal is not strict improvement
    CHECK(s.should_stop());
    CHECK(s.best_epoch() == 1);
  }
  SUBCASE("monotonically decreasing stops at 1 + patience") {
    train::EarlyStopper s(3);
    int epoch = 0;
    double value = 1.0;
    while (true) {
      ++epoch;
      s.observe(epoch, value);
      value -= 0.1;
      if (s.should_stop()) break;
    }
    CHECK(epoch == 4);  // 1 + patience
    CHECK(s.best_epoch() == 1);
  }
  SUBCASE("improvement resets the streak") {
    train::EarlyStopper s(2);
    s.observe(1, 0.1);
    s.observe(2, 0.05);
    CHECK(!s.should_stop());
    s.observe(3, 0.2);
    CHECK(!s.should_stop());
    CHECK(s.best_epoch() == 3);
    s.observe(4, 0.1);
    s.observe(5, 0.1);
    CHECK(s.should_stop());
  }
}

TEST_CASE("fit is deterministic and tracks its best epoch") {
  const auto split = toy_split(12, 20, 0.55, 30);
  auto cfg = toy_config();
  cfg.max_epochs = 4;
  cfg.patience = 4;

  const auto a = train::fit(models::ModelKind::cobrar, split, cfg, 1);
  const auto b = train::fit(models::ModelKind::cobrar, split, cfg, 2);
  CHECK(a.log.train_loss == b.log.train_loss);
  CHECK(a.log.val_ndcg == b.log.val_ndcg);
  CHECK(a.log.best_epoch == b.log.best_epoch);

  auto grads_a = models::zero_grads(a.model);
  auto grads_b = models::zero_grads(b.model);
  auto model_a = a.model;
  auto model_b = b.model;
  const auto refs_a = models::param_refs(model_a, grads_a);
  const auto refs_b = models::param_refs(model_b, grads_b);
  for (std::size_t i = 0; i < refs_a.size(); ++i) {
    for (std::size_t x = 0; x < refs_a[i].value.size(); ++x) {
      CHECK(refs_a[i].value[x] == refs_b[i].value[x]);
    }
  }

  double best = -1.0;
  for (const double v : a.log.val_ndcg) best = std::max(best, v);
  CHECK(a.log.val_ndcg[static_cast<std::size_t>(a.log.best_epoch - 1)] == best);

  auto different = cfg;
  different.seed = cfg.seed + 1;
  const auto c = train::fit(models::ModelKind::cobrar, split, different, 1);
  CHECK(a.log.train_loss != c.log.train_loss);
}

TEST_CASE("a diverging run aborts with a non-finite-loss diagnostic") {
  const auto split = toy_split(12, 20, 0.55, 30);
  auto cfg = toy_config();
  cfg.learning_rate = 1e150;  // first Adam step throws parameters to +-1e150
  cfg.max_epochs = 3;
  cfg.patience = 3;
  CHECK_THROWS_WITH_AS(train::fit(models::ModelKind::cobrar, split, cfg, 1),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("training on block-structured data beats the popularity baseline") {
  const auto ds = data::make_block_dataset(80, 40, 4, 0.5, 0.02, 123);
  const auto split = data::split_user_based(ds, {0.7, 0.1, 0.2}, 9);

  train::TrainConfig cfg;
  cfg.learning_rate = 0.005;
  cfg.l2_weight = 1e-4;
  cfg.batch_size = 64;
  cfg.n_neg = 5;
  cfg.dropout_rate = 0.0;
  cfg.max_epochs = 25;
  cfg.patience = 25;
  cfg.embedding_dim = 8;
  cfg.hidden_layers = {16};
  cfg.seed = 3;

  const auto result = train::fit(models::ModelKind::cobrar, split, cfg, 2);
  const double best_val =
      result.log.val_ndcg[static_cast<std::size_t>(result.log.best_epoch - 1)];
  const auto baseline = oracle::popularity_baseline(split, /*test_phase=*/false, 5);
  INFO("best val ndcg ", best_val, " popularity baseline ", baseline.mean_ndcg);
  CHECK(best_val > baseline.mean_ndcg);
}

TEST_CASE("grid enumeration covers the documented lattice") {
  train::GridSpec grid;
  grid.embedding_dim = {64, 128};
  grid.learning_rate = {1e-6, 1e-7};
  grid.l2_weight = {1e-2, 1e-3};
  grid.dropout_rate = {0.1, 0.5, 0.9};
  grid.hidden_layers = {{2048}, {1024}, {512}, {256}, {512, 512, 256, 256}};
  const auto lattice = grid.enumerate();
  CHECK(lattice.size() == 120);
  // Odometer order: hidden_layers is the slowest axis, seed the fastest.
  CHECK(lattice.front().hidden_layers == std::vector<int>{2048});
  CHECK(lattice.front().embedding_dim == 64);
  CHECK(lattice.back().hidden_layers == std::vector<int>{512, 512, 256, 256});
  CHECK(lattice.back().embedding_dim == 128);

  train::GridSpec singleton;
  singleton.base = toy_config();
  const auto single = singleton.enumerate();
  REQUIRE(single.size() == 1);
  CHECK(single[0].seed == singleton.base.seed);
}

TEST_CASE("grid_search selects the best validation score with deterministic ties") {
  const auto split = toy_split(10, 20, 0.55, 40);
  train::GridSpec grid;
  grid.base = toy_config();
  grid.base.max_epochs = 2;
  grid.base.patience = 2;
  grid.seed = {5, 6};

  const auto result = train::grid_search(split, models::ModelKind::cobrar, grid, 2);
  REQUIRE(result.runs.size() == 2);
  const auto score_of = [&](const train::GridRun& r) {
    return r.log.val_ndcg[static_cast<std::size_t>(r.log.best_epoch - 1)];
  };
  double best = -1.0;
  for (const auto& r : result.runs) best = std::max(best, score_of(r));
  CHECK(score_of(result.runs[static_cast<std::size_t>(result.best_index)]) == best);
  CHECK(result.best.seed == result.runs[static_cast<std::size_t>(result.best_index)]
                                .config.seed);

  // Identical-outcome points tie toward the earlier enumeration entry.
  train::GridSpec tie;
  tie.base = grid.base;
  tie.patience = {1, 2};  // no effect with max_epochs 2 and improving first epoch
  const auto tie_result = train::grid_search(split, models::ModelKind::cobrar, tie, 1);
  if (score_of(tie_result.runs[0]) == score_of(tie_result.runs[1])) {
    CHECK(tie_result.best_index == 0);
  }

  // Parallel execution returns the same selection.
  const auto seq = train::grid_search(split, models::ModelKind::cobrar, grid, 1);
  CHECK(seq.best_index == result.best_index);
  for (std::size_t i = 0; i < seq.runs.size(); ++i) {
    CHECK(seq.runs[i].log.val_ndcg == result.runs[i].log.val_ndcg);
  }
}

TEST_CASE("train log TSV lists one row per epoch with the best flag") {
  train::TrainLog log;
  log.train_loss = {2.0, 1.5, 1.7};
  log.val_ndcg = {0.1, 0.3, 0.2};
  log.best_epoch = 2;
  log.stopped_early = true;

  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "cobrar-log-test.tsv";
  train::write_train_log_tsv(path, log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch\ttrain_loss\tval_ndcg_at_5\tis_best");
  std::string row;
  std::getline(in, row);
  CHECK(row == "1\t2\t0.10000000000000001\t0");
  std::getline(in, row);
  CHECK(row == "2\t1.5\t0.29999999999999999\t1");
  std::filesystem::remove(path);
}

TEST_CASE("config validation enforces the documented invariants") {
  auto cfg = toy_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.mu = 0.5;
  CHECK_THROWS(cfg.validate());
  cfg = toy_config();
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
  cfg = toy_config();
  cfg.n_neg = 0;
  CHECK_THROWS(cfg.validate());
  cfg = toy_config();
  cfg.patience = cfg.max_epochs + 1;
  CHECK_THROWS(cfg.validate());
  cfg = toy_config();
  CHECK(cfg.architecture() == std::vector<int>{4, 3});
}

}  // TEST_SUITE
