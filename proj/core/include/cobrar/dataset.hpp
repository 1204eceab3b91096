#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cobrar/rng.hpp"

namespace cobrar::data {

struct RawInteraction {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
};

// Immutable binary interaction matrix in CSR form, rows (user profiles) and
// columns (item profiles) both materialized. Safe for concurrent reads.
class InteractionDataset {
 public:
  InteractionDataset() = default;

  // `pairs` must contain no duplicates and only indices within range.
  static InteractionDataset from_pairs(int n_users, int n_items,
                                       std::vector<std::pair<int, int>> pairs,
                                       std::vector<std::string> user_tokens,
                                       std::vector<std::string> item_tokens);

  int n_users() const { return n_users_; }
  int n_items() const { return n_items_; }
  std::int64_t n_interactions() const {
    return static_cast<std::int64_t>(row_items_.size());
  }

  // Sorted item indices of user i's interactions (the sparse row R_i*).
  std::span<const int> user_row(int i) const;
  // Sorted user indices of item j's interactions (the sparse column R_*j).
  std::span<const int> item_col(int j) const;

  bool has(int user, int item) const;

  const std::string& user_token(int i) const { return user_tokens_.at(i); }
  const std::string& item_token(int j) const { return item_tokens_.at(j); }
  int user_index(const std::string& token) const;
  int item_index(const std::string& token) const;

  std::vector<std::pair<int, int>> all_pairs() const;

 private:
  int n_users_ = 0;
  int n_items_ = 0;
  std::vector<std::int64_t> row_offsets_;
  std::vector<int> row_items_;
  std::vector<std::int64_t> col_offsets_;
  std::vector<int> col_users_;
  std::vector<std::string> user_tokens_;
  std::vector<std::string> item_tokens_;
  std::unordered_map<std::string, int> user_lookup_;
  std::unordered_map<std::string, int> item_lookup_;
};

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Per-user partition of a filtered dataset. `train` keeps the full (N, M)
// shape and token maps; val/test hold the held-out item lists per user.
struct SplitDataset {
  InteractionDataset train;
  std::vector<std::vector<int>> val;
  std::vector<std::vector<int>> test;
  std::int64_t seed = 0;

  std::int64_t n_interactions() const;
};

struct Fingerprint {
  int n_users = 0;
  int n_items = 0;
  std::int64_t n_interactions = 0;
  std::int64_t split_seed = 0;

  bool operator==(const Fingerprint&) const = default;
  std::string to_string() const;
};

Fingerprint fingerprint_of(const SplitDataset& split);

// MovieLens ratings.dat: UserID::MovieID::Rating::Timestamp per line.
std::vector<RawInteraction> parse_movielens(const std::filesystem::path& path);

// Amazon ratings-only CSV: item,user,rating,timestamp per record.
std::vector<RawInteraction> parse_amazon(const std::filesystem::path& path);

// Collapses duplicate (user, item) pairs to a single implicit-feedback
// interaction; any rating value counts. Dense indices follow first
// appearance of each token.
InteractionDataset binarize_and_dedup(const std::vector<RawInteraction>& raw);

// Iteratively removes users and items with fewer than k interactions until a
// fixpoint, then re-densifies indices preserving relative order.
InteractionDataset k_core_filter(const InteractionDataset& ds, int k);

// Per-user random split. Each user's list is shuffled by a generator seeded
// from (seed, user); floor(val)/floor(test) items are held out and the
// remainder goes to train, so train is never empty.
SplitDataset split_user_based(const InteractionDataset& ds, SplitRatios ratios,
                              std::int64_t seed);

// Train-interaction profiles (sparse indicator vectors as index lists).
std::span<const int> user_profile(const InteractionDataset& ds, int i);
std::span<const int> item_profile(const InteractionDataset& ds, int j);

// Block-structured synthetic interactions: users and items are split into
// `n_blocks` equal groups; a (user, item) pair interacts with probability
// p_in inside the matching block and p_out elsewhere.
InteractionDataset make_block_dataset(int n_users, int n_items, int n_blocks,
                                      double p_in, double p_out,
                                      std::uint64_t seed);

// Cache: header "n_users n_items n_interactions", then one
// "user_index item_index" pair per line, user-major ascending. The sidecar
// starts with "seed <split seed>" and tags each pair train/val/test.
void save_cache(const SplitDataset& split, const std::filesystem::path& cache_file,
                const std::filesystem::path& split_file);
SplitDataset load_cache(const std::filesystem::path& cache_file,
                        const std::filesystem::path& split_file);

}  // namespace cobrar::data
