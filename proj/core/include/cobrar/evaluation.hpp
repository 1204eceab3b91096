#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cobrar/dataset.hpp"
#include "cobrar/models.hpp"

namespace cobrar::eval {

struct RecommendationList {
  int user = 0;
  std::vector<int> items;     // strictly descending by score, ties by index
  std::vector<double> scores;
};

// Train-set interaction counts per item plus the short-head/long-tail label:
// head is the minimal descending-popularity prefix covering >= head_share of
// all train interactions (ties broken by ascending item index).
struct PopularityTable {
  std::vector<std::int64_t> count;
  std::vector<bool> is_head;
  std::int64_t total = 0;
  std::int64_t n_head = 0;

  static PopularityTable from_train(const data::InteractionDataset& train,
                                    double head_share = 0.8);
};

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  double corrected_alpha = 0.0;
  bool significant = false;
};

// Top-k candidates by (score desc, index asc); excluded items never appear.
RecommendationList top_k_from_scores(int user, std::span<const double> scores,
                                     const std::vector<char>& excluded, int k);

// Eval-mode item embeddings, unit-normalized so a user score reduces to one
// dot product. Row j of `unit` is zero when the raw embedding is zero.
struct ItemEmbeddings {
  nn::Matrix unit;  // M x d

  static ItemEmbeddings compute(const models::Model& m,
                                const data::InteractionDataset& train,
                                int jobs = 1);
};

// Scores of user i against every item; equals cosine(e_i, e_j) per item.
nn::Vec user_scores(const models::Model& m, const data::InteractionDataset& train,
                    int i, const ItemEmbeddings& items);

// Full N x M score matrix (eval mode).
nn::Matrix score_matrix(const models::Model& m,
                        const data::InteractionDataset& train, int jobs = 1);

RecommendationList recommend(const models::Model& m,
                             const data::InteractionDataset& train, int i, int k,
                             const std::vector<char>& excluded,
                             const ItemEmbeddings& items);

// Binary-relevance NDCG; `relevant` must be sorted ascending. Returns 0 when
// `relevant` is empty.
double ndcg_at_k(const RecommendationList& recs, std::span<const int> relevant,
                 int k);

// Mean train popularity of the recommended items.
double arp_of_list(const RecommendationList& recs, const PopularityTable& pop);

// Percentage of catalog items recommended to at least one user.
double coverage_percent(std::span<const RecommendationList> lists, int n_items);

// Per-user head/tail candidate-set sizes (post-exclusion), paired with lists.
struct GroupCandidates {
  std::int64_t head = 0;
  std::int64_t tail = 0;
};

// Two-group ranking-based statistical parity: population std over mean of the
// head/tail top-k rates, each rate normalized by candidate counts.
double pop_rsp(std::span<const RecommendationList> lists,
               const PopularityTable& pop,
               std::span<const GroupCandidates> candidates);

// Two-sided paired t-test with Bonferroni-corrected significance threshold
// alpha / n_comparisons.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b,
                          int n_comparisons, double alpha);

enum class Phase { val, test };

const char* phase_name(Phase phase);
Phase phase_from_name(const std::string& name);

struct PerUserMetrics {
  int user = 0;
  double ndcg = 0.0;
  double arp = 0.0;
};

struct EvalReport {
  Phase phase = Phase::test;
  int k = 5;
  std::vector<PerUserMetrics> per_user;  // users with ground truth only
  double mean_ndcg = 0.0;
  double mean_arp = 0.0;
  double coverage = 0.0;
  double poprsp = 0.0;
};

// Ranks every user with non-empty ground truth in `phase`, excluding train
// positives (plus val positives when phase is test), and aggregates metrics
// as per-user means. Parallel over users; results independent of `jobs`.
EvalReport evaluate(const models::Model& m, const data::SplitDataset& split,
                    Phase phase, int k, int jobs = 1);

}  // namespace cobrar::eval
