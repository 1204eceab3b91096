#include <benchmark/benchmark.h>

#include "cobrar/dataset.hpp"
#include "cobrar/evaluation.hpp"
#include "cobrar/models.hpp"
#include "cobrar/training.hpp"

using namespace cobrar;

namespace {

data::SplitDataset bench_split(int n_users, int n_items) {
  const auto ds = data::make_block_dataset(n_users, n_items, 4, 0.4, 0.03, 11);
  return data::split_user_based(ds, {0.7, 0.1, 0.2}, 5);
}

models::Model bench_model(models::ModelKind kind, const data::SplitDataset& split,
                          std::vector<int> arch, double dropout) {
  Rng rng(3);
  return models::make_model(kind, split.train.n_users(), split.train.n_items(),
                            arch, dropout, 1e-6, rng);
}

void BM_BranchForward(benchmark::State& state) {
  Rng rng(1);
  const auto branch = nn::make_branch(std::vector<int>{512, 512, 256, 256}, 0.0, rng);
  nn::Vec x(512);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        nn::branch_forward(branch, x, nn::Mode::eval, nullptr, nullptr));
  }
}
BENCHMARK(BM_BranchForward);

void BM_BranchBackward(benchmark::State& state) {
  Rng rng(1);
  const auto branch = nn::make_branch(std::vector<int>{512, 512, 256, 256}, 0.0, rng);
  nn::Vec x(512), g(256);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : g) v = rng.uniform(-1, 1);
  nn::Tape tape;
  (void)nn::branch_forward(branch, x, nn::Mode::train, nullptr, &tape);
  auto grads = nn::BranchGrads::zeros_like(branch);
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::branch_backward(branch, tape, g, grads));
  }
}
BENCHMARK(BM_BranchBackward);

void BM_BatchLoss(benchmark::State& state) {
  const auto split = bench_split(400, 200);
  const auto model = bench_model(models::ModelKind::cobrar, split, {128, 64}, 0.1);
  train::TrainConfig cfg;
  cfg.n_neg = 5;
  cfg.batch_size = 256;
  const auto pairs = split.train.all_pairs();
  const train::Batch batch{pairs.data(),
                           std::min<std::size_t>(256, pairs.size())};
  Rng rng(9);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train::batch_loss(model, split.train, batch, cfg, rng));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_BatchLoss);

void BM_TopK(benchmark::State& state) {
  Rng rng(4);
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& s : scores) s = rng.uniform(-1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::top_k_from_scores(0, scores, {}, 5));
  }
}
BENCHMARK(BM_TopK)->Arg(2338)->Arg(10000);

void BM_Evaluate(benchmark::State& state) {
  const auto split = bench_split(400, 200);
  const auto model = bench_model(models::ModelKind::cobrar, split, {64, 32}, 0.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::evaluate(model, split, eval::Phase::test, 5, 1));
  }
  state.SetItemsProcessed(state.iterations() * split.train.n_users());
}
BENCHMARK(BM_Evaluate);

}  // namespace

BENCHMARK_MAIN();
