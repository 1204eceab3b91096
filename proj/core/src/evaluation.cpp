#include "cobrar/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "cobrar/parallel.hpp"
#include "cobrar/strings.hpp"

namespace cobrar::eval {

PopularityTable PopularityTable::from_train(const data::InteractionDataset& train,
                                            double head_share) {
  PopularityTable pop;
  const int m = train.n_items();
  pop.count.resize(m);
  pop.is_head.assign(m, false);
  for (int j = 0; j < m; ++j) {
    pop.count[j] = static_cast<std::int64_t>(train.item_col(j).size());
    pop.total += pop.count[j];
  }
  if (pop.total <= 0) {
    throw std::runtime_error("popularity table needs at least one interaction");
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (pop.count[a] != pop.count[b]) return pop.count[a] > pop.count[b];
    return a < b;
  });
  std::int64_t cum = 0;
  const double threshold = head_share * static_cast<double>(pop.total);
  for (const int j : order) {
    if (static_cast<double>(cum) >= threshold) break;
    pop.is_head[j] = true;
    pop.n_head += 1;
    cum += pop.count[j];
  }
  return pop;
}

RecommendationList top_k_from_scores(int user, std::span<const double> scores,
                                     const std::vector<char>& excluded, int k) {
  if (k < 1) throw std::runtime_error("k must be >= 1");
  if (!excluded.empty() && excluded.size() != scores.size()) {
    throw std::runtime_error("exclusion mask size mismatch");
  }
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (excluded.empty() || !excluded[j]) candidates.push_back(static_cast<int>(j));
  }
  if (static_cast<int>(candidates.size()) < k) {
    throw std::runtime_error(strf("only %zu candidates for top-%d request",
                                  candidates.size(), k));
  }
  const auto better = [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(),
                    better);
  RecommendationList out;
  out.user = user;
  out.items.assign(candidates.begin(), candidates.begin() + k);
  out.scores.reserve(k);
  for (const int j : out.items) out.scores.push_back(scores[j]);
  return out;
}

namespace {

// Unit-normalize with the cosine epsilon convention: zero vectors stay zero.
void normalize(std::span<double> v) {
  double n = 0.0;
  for (const double x : v) n += x * x;
  n = std::max(std::sqrt(n), nn::kNormEps);
  for (double& x : v) x /= n;
}

}  // namespace

ItemEmbeddings ItemEmbeddings::compute(const models::Model& m,
                                       const data::InteractionDataset& train,
                                       int jobs) {
  ItemEmbeddings out;
  const int n_items = train.n_items();
  const int d = models::embedding_dim(m);
  out.unit = nn::Matrix::zeros(n_items, d);
  parallel_for(static_cast<std::size_t>(n_items), jobs,
               [&](std::size_t begin, std::size_t end) {
                 for (std::size_t j = begin; j < end; ++j) {
                   const nn::Vec e = models::item_embed(
                       m, train, static_cast<int>(j), nn::Mode::eval, nullptr,
                       nullptr);
                   double* row = out.unit.row(static_cast<int>(j));
                   std::copy(e.begin(), e.end(), row);
                   normalize({row, static_cast<std::size_t>(d)});
                 }
               });
  return out;
}

nn::Vec user_scores(const models::Model& m, const data::InteractionDataset& train,
                    int i, const ItemEmbeddings& items) {
  nn::Vec e = models::user_embed(m, train, i, nn::Mode::eval, nullptr, nullptr);
  normalize(e);
  const int n_items = items.unit.rows;
  const int d = items.unit.cols;
  nn::Vec scores(static_cast<std::size_t>(n_items));
  for (int j = 0; j < n_items; ++j) {
    const double* row = items.unit.row(j);
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += e[c] * row[c];
    scores[j] = s;
  }
  return scores;
}

nn::Matrix score_matrix(const models::Model& m,
                        const data::InteractionDataset& train, int jobs) {
  const ItemEmbeddings items = ItemEmbeddings::compute(m, train, jobs);
  nn::Matrix scores = nn::Matrix::zeros(train.n_users(), train.n_items());
  parallel_for(static_cast<std::size_t>(train.n_users()), jobs,
               [&](std::size_t begin, std::size_t end) {
                 for (std::size_t u = begin; u < end; ++u) {
                   const nn::Vec row =
                       user_scores(m, train, static_cast<int>(u), items);
                   std::copy(row.begin(), row.end(),
                             scores.row(static_cast<int>(u)));
                 }
               });
  return scores;
}

RecommendationList recommend(const models::Model& m,
                             const data::InteractionDataset& train, int i, int k,
                             const std::vector<char>& excluded,
                             const ItemEmbeddings& items) {
  const nn::Vec scores = user_scores(m, train, i, items);
  return top_k_from_scores(i, scores, excluded, k);
}

double ndcg_at_k(const RecommendationList& recs, std::span<const int> relevant,
                 int k) {
  if (static_cast<int>(recs.items.size()) != k) {
    throw std::runtime_error(strf("recommendation list has %zu items, expected %d",
                                  recs.items.size(), k));
  }
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  for (int pos = 0; pos < k; ++pos) {
    if (std::binary_search(relevant.begin(), relevant.end(), recs.items[pos])) {
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    }
  }
  const int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
  double idcg = 0.0;
  for (int pos = 0; pos < ideal; ++pos) {
    idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  return dcg / idcg;
}

double arp_of_list(const RecommendationList& recs, const PopularityTable& pop) {
  if (recs.items.empty()) throw std::runtime_error("empty recommendation list");
  double sum = 0.0;
  for (const int j : recs.items) {
    sum += static_cast<double>(pop.count.at(static_cast<std::size_t>(j)));
  }
  return sum / static_cast<double>(recs.items.size());
}

double coverage_percent(std::span<const RecommendationList> lists, int n_items) {
  std::vector<char> seen(static_cast<std::size_t>(n_items), 0);
  std::int64_t distinct = 0;
  for (const auto& l : lists) {
    for (const int j : l.items) {
      if (!seen[static_cast<std::size_t>(j)]) {
        seen[static_cast<std::size_t>(j)] = 1;
        ++distinct;
      }
    }
  }
  return 100.0 * static_cast<double>(distinct) / static_cast<double>(n_items);
}

double pop_rsp(std::span<const RecommendationList> lists,
               const PopularityTable& pop,
               std::span<const GroupCandidates> candidates) {
  if (pop.n_head == 0 || pop.n_head == static_cast<std::int64_t>(pop.count.size())) {
    throw std::runtime_error("popularity split left an empty head or tail group");
  }
  if (lists.size() != candidates.size()) {
    throw std::runtime_error("candidate counts must pair with recommendation lists");
  }
  std::int64_t head_hits = 0;
  std::int64_t tail_hits = 0;
  std::int64_t head_cands = 0;
  std::int64_t tail_cands = 0;
  for (std::size_t u = 0; u < lists.size(); ++u) {
    for (const int j : lists[u].items) {
      if (pop.is_head[static_cast<std::size_t>(j)]) {
        ++head_hits;
      } else {
        ++tail_hits;
      }
    }
    head_cands += candidates[u].head;
    tail_cands += candidates[u].tail;
  }
  if (head_cands == 0 || tail_cands == 0) {
    throw std::runtime_error("a popularity group has no candidate items");
  }
  const double p_head = static_cast<double>(head_hits) / static_cast<double>(head_cands);
  const double p_tail = static_cast<double>(tail_hits) / static_cast<double>(tail_cands);
  const double mean = (p_head + p_tail) / 2.0;
  if (mean == 0.0) return 0.0;
  const double std_pop = std::abs(p_head - p_tail) / 2.0;
  return std_pop / mean;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          int n_comparisons, double alpha) {
  if (a.size() != b.size()) {
    throw std::runtime_error(strf("paired samples differ in length: %zu vs %zu",
                                  a.size(), b.size()));
  }
  if (a.size() < 2) {
    throw std::runtime_error("paired t-test needs at least two pairs");
  }
  if (n_comparisons < 1) {
    throw std::runtime_error("n_comparisons must be >= 1");
  }
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (a[i] - b[i]) - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);

  TTestResult r;
  r.corrected_alpha = alpha / static_cast<double>(n_comparisons);
  if (var == 0.0) {
    if (mean == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = mean > 0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
  } else {
    r.t_statistic = mean / std::sqrt(var / static_cast<double>(n));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    r.p_value = 2.0 * boost::math::cdf(dist, -std::abs(r.t_statistic));
  }
  r.significant = r.p_value < r.corrected_alpha;
  return r;
}

const char* phase_name(Phase phase) {
  return phase == Phase::val ? "val" : "test";
}

Phase phase_from_name(const std::string& name) {
  if (name == "val") return Phase::val;
  if (name == "test") return Phase::test;
  throw std::runtime_error("unknown phase '" + name + "' (expected val or test)");
}

EvalReport evaluate(const models::Model& m, const data::SplitDataset& split,
                    Phase phase, int k, int jobs) {
  const auto& train = split.train;
  const int n_users = train.n_users();
  const PopularityTable pop = PopularityTable::from_train(train);
  const ItemEmbeddings items = ItemEmbeddings::compute(m, train, jobs);

  struct Slot {
    bool used = false;
    RecommendationList recs;
    GroupCandidates cands;
    double ndcg = 0.0;
    double arp = 0.0;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(n_users));

  parallel_for(static_cast<std::size_t>(n_users), jobs, [&](std::size_t begin,
                                                            std::size_t end) {
    std::vector<char> excluded;
    for (std::size_t uu = begin; uu < end; ++uu) {
      const int u = static_cast<int>(uu);
      const std::vector<int>& truth =
          phase == Phase::val ? split.val[uu] : split.test[uu];
      if (truth.empty()) continue;

      excluded.assign(static_cast<std::size_t>(train.n_items()), 0);
      std::int64_t excluded_head = 0;
      std::int64_t excluded_total = 0;
      const auto exclude = [&](int j) {
        auto& flag = excluded[static_cast<std::size_t>(j)];
        if (!flag) {
          flag = 1;
          ++excluded_total;
          if (pop.is_head[static_cast<std::size_t>(j)]) ++excluded_head;
        }
      };
      for (const int j : train.user_row(u)) exclude(j);
      if (phase == Phase::test) {
        for (const int j : split.val[uu]) exclude(j);
      }

      Slot& slot = slots[uu];
      slot.used = true;
      slot.recs = recommend(m, train, u, k, excluded, items);
      slot.cands.head = pop.n_head - excluded_head;
      slot.cands.tail = (train.n_items() - pop.n_head) -
                        (excluded_total - excluded_head);
      slot.ndcg = ndcg_at_k(slot.recs, truth, k);
      slot.arp = arp_of_list(slot.recs, pop);
    }
  });

  EvalReport report;
  report.phase = phase;
  report.k = k;
  std::vector<RecommendationList> lists;
  std::vector<GroupCandidates> cands;
  for (int u = 0; u < n_users; ++u) {
    const Slot& slot = slots[static_cast<std::size_t>(u)];
    if (!slot.used) continue;
    report.per_user.push_back({u, slot.ndcg, slot.arp});
    report.mean_ndcg += slot.ndcg;
    report.mean_arp += slot.arp;
    lists.push_back(slot.recs);
    cands.push_back(slot.cands);
  }
  if (report.per_user.empty()) {
    throw std::runtime_error(strf("no user has %s ground truth", phase_name(phase)));
  }
  const double n_eval = static_cast<double>(report.per_user.size());
  report.mean_ndcg /= n_eval;
  report.mean_arp /= n_eval;
  report.coverage = coverage_percent(lists, train.n_items());
  report.poprsp = pop_rsp(lists, pop, cands);
  return report;
}

}  // namespace cobrar::eval
