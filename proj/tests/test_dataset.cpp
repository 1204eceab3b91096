#include "doctest.h"

#include <algorithm>
#include <set>

#include "cobrar/dataset.hpp"
#include "support/temp.hpp"

using namespace cobrar;
using testsupport::TempDir;

namespace {

data::InteractionDataset random_dataset(int n_users, int n_items, double density,
                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<data::RawInteraction> raw;
  for (int u = 0; u < n_users; ++u) {
    for (int j = 0; j < n_items; ++j) {
      if (rng.uniform_real() < density) {
        raw.push_back({"u" + std::to_string(u), "i" + std::to_string(j), 1.0, 0});
      }
    }
  }
  // Keep every user/item non-empty so the ingestion invariant holds.
  for (int u = 0; u < n_users; ++u) {
    raw.push_back({"u" + std::to_string(u), "i0", 1.0, 0});
  }
  for (int j = 0; j < n_items; ++j) {
    raw.push_back({"u0", "i" + std::to_string(j), 1.0, 0});
  }
  return data::binarize_and_dedup(raw);
}

bool datasets_equal(const data::InteractionDataset& a,
                    const data::InteractionDataset& b) {
  if (a.n_users() != b.n_users() || a.n_items() != b.n_items()) return false;
  if (a.all_pairs() != b.all_pairs()) return false;
  for (int u = 0; u < a.n_users(); ++u) {
    if (a.user_token(u) != b.user_token(u)) return false;
  }
  for (int j = 0; j < a.n_items(); ++j) {
    if (a.item_token(j) != b.item_token(j)) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("parse_movielens reads UserID::MovieID::Rating::Timestamp") {
  TempDir tmp;
  const auto file = tmp.write("ratings.dat",
                              "1::1193::5::978300760\n2::661::3.5::978302109\n");
  const auto raw = data::parse_movielens(file);
  REQUIRE(raw.size() == 2);
  CHECK(raw[0].user_id == "1");
  CHECK(raw[0].item_id == "1193");
  CHECK(raw[0].rating == 5.0);
  CHECK(raw[0].timestamp == 978300760);
  CHECK(raw[1].rating == 3.5);
}

TEST_CASE("parse_movielens rejects empty and malformed input") {
  TempDir tmp;
  CHECK_THROWS(data::parse_movielens(tmp.write("empty.dat", "")));
  CHECK_THROWS_WITH_AS(data::parse_movielens(tmp.write("bad.dat", "1::1193::5\n")),
                       doctest::Contains("line 1"), std::runtime_error);
  CHECK_THROWS(data::parse_movielens(tmp.path() / "missing.dat"));
}

TEST_CASE("parse_amazon reads item,user,rating,timestamp records") {
  TempDir tmp;
  const auto file = tmp.write("ratings.csv", "B000A,U123,4.0,1381449600\n");
  const auto raw = data::parse_amazon(file);
  REQUIRE(raw.size() == 1);
  CHECK(raw[0].user_id == "U123");
  CHECK(raw[0].item_id == "B000A");
  CHECK(raw[0].rating == 4.0);
  CHECK(raw[0].timestamp == 1381449600);
}

TEST_CASE("parse_amazon rejects empty files and short records") {
  TempDir tmp;
  CHECK_THROWS(data::parse_amazon(tmp.write("empty.csv", "")));
  CHECK_THROWS_WITH_AS(data::parse_amazon(tmp.write("bad.csv", "B000A,U123\n")),
                       doctest::Contains("record 1"), std::runtime_error);
}

TEST_CASE("binarize_and_dedup collapses duplicates and assigns first-appearance indices") {
  const std::vector<data::RawInteraction> raw = {
      {"u1", "i1", 5.0, 0}, {"u1", "i1", 3.0, 0}, {"u1", "i2", 1.0, 0}};
  const auto ds = data::binarize_and_dedup(raw);
  CHECK(ds.n_users() == 1);
  CHECK(ds.n_items() == 2);
  CHECK(ds.n_interactions() == 2);
  CHECK(ds.has(0, 0));
  CHECK(ds.has(0, 1));
  CHECK(ds.user_token(0) == "u1");
  CHECK(ds.item_token(0) == "i1");
  CHECK(ds.item_token(1) == "i2");

  const auto single = data::binarize_and_dedup({{"a", "b", 2.0, 0}});
  CHECK(single.n_users() == 1);
  CHECK(single.n_items() == 1);
  CHECK(single.n_interactions() == 1);

  CHECK_THROWS(data::binarize_and_dedup({}));
}

TEST_CASE("index maps are bijections") {
  const auto ds = random_dataset(15, 12, 0.2, 11);
  for (int u = 0; u < ds.n_users(); ++u) {
    CHECK(ds.user_index(ds.user_token(u)) == u);
  }
  for (int j = 0; j < ds.n_items(); ++j) {
    CHECK(ds.item_index(ds.item_token(j)) == j);
  }
  CHECK_THROWS(ds.user_index("nonexistent"));
}

TEST_CASE("k_core_filter with k=1 is the identity") {
  const auto ds = random_dataset(10, 8, 0.3, 3);
  const auto filtered = data::k_core_filter(ds, 1);
  CHECK(datasets_equal(ds, filtered));
}

TEST_CASE("k_core_filter cascade can eliminate everything") {
  // A:(1,2), B:(1); with k=2 the peeling empties the dataset.
  const std::vector<data::RawInteraction> raw = {
      {"A", "1", 1.0, 0}, {"A", "2", 1.0, 0}, {"B", "1", 1.0, 0}};
  const auto ds = data::binarize_and_dedup(raw);
  CHECK_THROWS_WITH_AS(data::k_core_filter(ds, 2),
                       doctest::Contains("eliminated all data"),
                       std::runtime_error);
  CHECK_THROWS(data::k_core_filter(ds, 0));
}

TEST_CASE("k_core_filter reaches a fixpoint and is idempotent") {
  const auto ds = random_dataset(40, 30, 0.12, 7);
  const auto filtered = data::k_core_filter(ds, 3);
  for (int u = 0; u < filtered.n_users(); ++u) {
    CHECK(filtered.user_row(u).size() >= 3);
  }
  for (int j = 0; j < filtered.n_items(); ++j) {
    CHECK(filtered.item_col(j).size() >= 3);
  }
  const auto again = data::k_core_filter(filtered, 3);
  CHECK(datasets_equal(filtered, again));
  // Relative token order is preserved through re-densification.
  int prev = -1;
  for (int u = 0; u < filtered.n_users(); ++u) {
    const int orig = ds.user_index(filtered.user_token(u));
    CHECK(orig > prev);
    prev = orig;
  }
}

TEST_CASE("split_user_based follows the floor rule") {
  const auto check_counts = [](int n_items_of_user, int want_train, int want_val,
                               int want_test) {
    std::vector<data::RawInteraction> raw;
    for (int j = 0; j < n_items_of_user; ++j) {
      raw.push_back({"u", "i" + std::to_string(j), 1.0, 0});
    }
    const auto ds = data::binarize_and_dedup(raw);
    const auto split = data::split_user_based(ds, {0.7, 0.1, 0.2}, 99);
    CHECK(static_cast<int>(split.train.user_row(0).size()) == want_train);
    CHECK(static_cast<int>(split.val[0].size()) == want_val);
    CHECK(static_cast<int>(split.test[0].size()) == want_test);
  };
  check_counts(10, 7, 1, 2);
  check_counts(5, 4, 0, 1);
  check_counts(1, 1, 0, 0);
}

TEST_CASE("split_user_based is deterministic and partitions exactly") {
  const auto ds = random_dataset(25, 18, 0.25, 21);
  const auto a = data::split_user_based(ds, {0.7, 0.1, 0.2}, 5);
  const auto b = data::split_user_based(ds, {0.7, 0.1, 0.2}, 5);
  CHECK(a.train.all_pairs() == b.train.all_pairs());
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);

  for (int u = 0; u < ds.n_users(); ++u) {
    const auto row = a.train.user_row(u);
    CHECK(!row.empty());
    std::vector<int> merged(row.begin(), row.end());
    merged.insert(merged.end(), a.val[u].begin(), a.val[u].end());
    merged.insert(merged.end(), a.test[u].begin(), a.test[u].end());
    std::sort(merged.begin(), merged.end());
    const auto orig = ds.user_row(u);
    CHECK(std::equal(merged.begin(), merged.end(), orig.begin(), orig.end()));
    CHECK(std::adjacent_find(merged.begin(), merged.end()) == merged.end());
  }

  const auto c = data::split_user_based(ds, {0.7, 0.1, 0.2}, 6);
  CHECK(a.train.all_pairs() != c.train.all_pairs());
}

TEST_CASE("profiles expose sparse rows and columns with transpose consistency") {
  const auto ds = random_dataset(20, 30, 0.2, 13);
  for (int u = 0; u < ds.n_users(); ++u) {
    for (const int j : data::user_profile(ds, u)) {
      const auto col = data::item_profile(ds, j);
      CHECK(std::binary_search(col.begin(), col.end(), u));
    }
  }
  for (int j = 0; j < ds.n_items(); ++j) {
    for (const int u : data::item_profile(ds, j)) {
      const auto row = data::user_profile(ds, u);
      CHECK(std::binary_search(row.begin(), row.end(), j));
    }
  }
  CHECK_THROWS_AS(data::user_profile(ds, ds.n_users()), std::out_of_range);
  CHECK_THROWS_AS(data::item_profile(ds, -1), std::out_of_range);
}

TEST_CASE("user with every item has a dense-equivalent profile") {
  std::vector<data::RawInteraction> raw;
  for (int j = 0; j < 4; ++j) {
    raw.push_back({"u", "i" + std::to_string(j), 1.0, 0});
  }
  const auto ds = data::binarize_and_dedup(raw);
  const auto profile = data::user_profile(ds, 0);
  CHECK(std::vector<int>(profile.begin(), profile.end()) ==
        std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("cache round-trips the split and is byte-stable") {
  TempDir tmp;
  const auto ds = random_dataset(12, 9, 0.3, 17);
  const auto split = data::split_user_based(ds, {0.7, 0.1, 0.2}, 31);

  const auto cache = tmp.path() / "dataset.txt";
  const auto side = tmp.path() / "dataset.split.txt";
  data::save_cache(split, cache, side);
  const auto loaded = data::load_cache(cache, side);

  CHECK(loaded.seed == split.seed);
  CHECK(loaded.train.n_users() == split.train.n_users());
  CHECK(loaded.train.n_items() == split.train.n_items());
  CHECK(loaded.train.all_pairs() == split.train.all_pairs());
  CHECK(loaded.val == split.val);
  CHECK(loaded.test == split.test);
  CHECK(data::fingerprint_of(loaded) == data::fingerprint_of(split));

  const std::string first = testsupport::read_file(cache);
  data::save_cache(split, cache, side);
  CHECK(testsupport::read_file(cache) == first);

  CHECK_THROWS(data::load_cache(tmp.path() / "missing.txt", side));
}

TEST_CASE("make_block_dataset is deterministic with the requested shape") {
  const auto a = data::make_block_dataset(40, 20, 4, 0.8, 0.05, 9);
  const auto b = data::make_block_dataset(40, 20, 4, 0.8, 0.05, 9);
  CHECK(a.n_users() == 40);
  CHECK(a.n_items() == 20);
  CHECK(datasets_equal(a, b));
  CHECK_THROWS(data::make_block_dataset(41, 20, 4, 0.8, 0.05, 9));
}

}  // TEST_SUITE
