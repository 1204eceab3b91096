#include "cobrar/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

#include "cobrar/strings.hpp"

namespace cobrar::data {

namespace {

double parse_double(std::string_view s, const std::string& context) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error(context + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::int64_t parse_int(std::string_view s, const std::string& context) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error(context + ": bad integer '" + std::string(s) + "'");
  }
  return v;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open '" + path.string() + "'");
  }
  return in;
}

}  // namespace

InteractionDataset InteractionDataset::from_pairs(
    int n_users, int n_items, std::vector<std::pair<int, int>> pairs,
    std::vector<std::string> user_tokens, std::vector<std::string> item_tokens) {
  if (static_cast<int>(user_tokens.size()) != n_users ||
      static_cast<int>(item_tokens.size()) != n_items) {
    throw std::runtime_error("token maps do not match dataset dimensions");
  }
  InteractionDataset ds;
  ds.n_users_ = n_users;
  ds.n_items_ = n_items;
  ds.user_tokens_ = std::move(user_tokens);
  ds.item_tokens_ = std::move(item_tokens);

  std::sort(pairs.begin(), pairs.end());
  for (std::size_t p = 1; p < pairs.size(); ++p) {
    if (pairs[p] == pairs[p - 1]) {
      throw std::runtime_error(strf("duplicate interaction (%d, %d)",
                                    pairs[p].first, pairs[p].second));
    }
  }

  ds.row_offsets_.assign(static_cast<std::size_t>(n_users) + 1, 0);
  ds.col_offsets_.assign(static_cast<std::size_t>(n_items) + 1, 0);
  for (const auto& [u, i] : pairs) {
    if (u < 0 || u >= n_users || i < 0 || i >= n_items) {
      throw std::runtime_error(strf("interaction (%d, %d) out of range", u, i));
    }
    ++ds.row_offsets_[static_cast<std::size_t>(u) + 1];
    ++ds.col_offsets_[static_cast<std::size_t>(i) + 1];
  }
  std::partial_sum(ds.row_offsets_.begin(), ds.row_offsets_.end(),
                   ds.row_offsets_.begin());
  std::partial_sum(ds.col_offsets_.begin(), ds.col_offsets_.end(),
                   ds.col_offsets_.begin());

  ds.row_items_.resize(pairs.size());
  ds.col_users_.resize(pairs.size());
  std::vector<std::int64_t> col_fill(ds.col_offsets_.begin(),
                                     ds.col_offsets_.end() - 1);
  std::size_t row_fill = 0;
  for (const auto& [u, i] : pairs) {
    ds.row_items_[row_fill++] = i;  // pairs sorted, rows come out sorted
    ds.col_users_[col_fill[static_cast<std::size_t>(i)]++] = u;
  }

  ds.user_lookup_.reserve(ds.user_tokens_.size());
  for (int i = 0; i < n_users; ++i) ds.user_lookup_.emplace(ds.user_tokens_[i], i);
  ds.item_lookup_.reserve(ds.item_tokens_.size());
  for (int j = 0; j < n_items; ++j) ds.item_lookup_.emplace(ds.item_tokens_[j], j);
  if (ds.user_lookup_.size() != ds.user_tokens_.size() ||
      ds.item_lookup_.size() != ds.item_tokens_.size()) {
    throw std::runtime_error("token maps are not bijective");
  }
  return ds;
}

std::span<const int> InteractionDataset::user_row(int i) const {
  if (i < 0 || i >= n_users_) {
    throw std::out_of_range(strf("user index %d out of range [0, %d)", i, n_users_));
  }
  const auto lo = static_cast<std::size_t>(row_offsets_[i]);
  const auto hi = static_cast<std::size_t>(row_offsets_[i + 1]);
  return {row_items_.data() + lo, hi - lo};
}

std::span<const int> InteractionDataset::item_col(int j) const {
  if (j < 0 || j >= n_items_) {
    throw std::out_of_range(strf("item index %d out of range [0, %d)", j, n_items_));
  }
  const auto lo = static_cast<std::size_t>(col_offsets_[j]);
  const auto hi = static_cast<std::size_t>(col_offsets_[j + 1]);
  return {col_users_.data() + lo, hi - lo};
}

bool InteractionDataset::has(int user, int item) const {
  const auto row = user_row(user);
  return std::binary_search(row.begin(), row.end(), item);
}

int InteractionDataset::user_index(const std::string& token) const {
  const auto it = user_lookup_.find(token);
  if (it == user_lookup_.end()) {
    throw std::out_of_range("unknown user token '" + token + "'");
  }
  return it->second;
}

int InteractionDataset::item_index(const std::string& token) const {
  const auto it = item_lookup_.find(token);
  if (it == item_lookup_.end()) {
    throw std::out_of_range("unknown item token '" + token + "'");
  }
  return it->second;
}

std::vector<std::pair<int, int>> InteractionDataset::all_pairs() const {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(row_items_.size());
  for (int u = 0; u < n_users_; ++u) {
    for (const int i : user_row(u)) pairs.emplace_back(u, i);
  }
  return pairs;
}

std::int64_t SplitDataset::n_interactions() const {
  std::int64_t n = train.n_interactions();
  for (const auto& v : val) n += static_cast<std::int64_t>(v.size());
  for (const auto& t : test) n += static_cast<std::int64_t>(t.size());
  return n;
}

Fingerprint fingerprint_of(const SplitDataset& split) {
  return Fingerprint{split.train.n_users(), split.train.n_items(),
                     split.n_interactions(), split.seed};
}

std::string Fingerprint::to_string() const {
  return strf("%d %d %lld %lld", n_users, n_items,
              static_cast<long long>(n_interactions),
              static_cast<long long>(split_seed));
}

std::vector<RawInteraction> parse_movielens(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<RawInteraction> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    const std::string ctx = strf("%s: line %lld", path.c_str(),
                                 static_cast<long long>(line_no));
    // UserID::MovieID::Rating::Timestamp
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = sv.find("::", start);
      if (pos == std::string_view::npos) {
        fields.push_back(sv.substr(start));
        break;
      }
      fields.push_back(sv.substr(start, pos - start));
      start = pos + 2;
    }
    if (fields.size() != 4) {
      throw std::runtime_error(
          ctx + ": expected UserID::MovieID::Rating::Timestamp");
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(ctx + ": empty user or item id");
    }
    out.push_back(RawInteraction{std::string(fields[0]), std::string(fields[1]),
                                 parse_double(fields[2], ctx),
                                 parse_int(fields[3], ctx)});
  }
  if (out.empty()) {
    throw std::runtime_error("'" + path.string() + "' contains no interactions");
  }
  return out;
}

std::vector<RawInteraction> parse_amazon(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<RawInteraction> out;
  std::string line;
  std::int64_t record_no = 0;
  while (std::getline(in, line)) {
    ++record_no;
    std::string_view sv = trim(line);
    if (sv.empty()) continue;
    const std::string ctx = strf("%s: record %lld", path.c_str(),
                                 static_cast<long long>(record_no));
    const auto fields = split(sv, ',');
    if (fields.size() != 4) {
      throw std::runtime_error(ctx + ": expected item,user,rating,timestamp");
    }
    if (fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(ctx + ": empty user or item id");
    }
    out.push_back(RawInteraction{std::string(fields[1]), std::string(fields[0]),
                                 parse_double(fields[2], ctx),
                                 parse_int(fields[3], ctx)});
  }
  if (out.empty()) {
    throw std::runtime_error("'" + path.string() + "' contains no interactions");
  }
  return out;
}

InteractionDataset binarize_and_dedup(const std::vector<RawInteraction>& raw) {
  if (raw.empty()) {
    throw std::runtime_error("no interactions to binarize");
  }
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  std::unordered_map<std::string, int> user_lookup;
  std::unordered_map<std::string, int> item_lookup;
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::pair<int, int>> pairs;
  seen.reserve(raw.size() * 2);
  pairs.reserve(raw.size());

  for (const auto& r : raw) {
    if (r.user_id.empty() || r.item_id.empty()) {
      throw std::runtime_error("interaction with empty user or item id");
    }
    auto [uit, u_new] = user_lookup.try_emplace(
        r.user_id, static_cast<int>(user_tokens.size()));
    if (u_new) user_tokens.push_back(r.user_id);
    auto [iit, i_new] = item_lookup.try_emplace(
        r.item_id, static_cast<int>(item_tokens.size()));
    if (i_new) item_tokens.push_back(r.item_id);
    const int u = uit->second;
    const int i = iit->second;
    const std::uint64_t key =
        (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(i);
    if (seen.insert(key).second) pairs.emplace_back(u, i);
  }
  const int n_users = static_cast<int>(user_tokens.size());
  const int n_items = static_cast<int>(item_tokens.size());
  return InteractionDataset::from_pairs(n_users, n_items, std::move(pairs),
                                        std::move(user_tokens),
                                        std::move(item_tokens));
}

InteractionDataset k_core_filter(const InteractionDataset& ds, int k) {
  if (k < 1) {
    throw std::runtime_error("k-core requires k >= 1");
  }
  const int n = ds.n_users();
  const int m = ds.n_items();
  std::vector<std::int64_t> user_deg(n);
  std::vector<std::int64_t> item_deg(m);
  std::vector<char> user_alive(n, 1);
  std::vector<char> item_alive(m, 1);
  for (int u = 0; u < n; ++u) user_deg[u] = static_cast<std::int64_t>(ds.user_row(u).size());
  for (int j = 0; j < m; ++j) item_deg[j] = static_cast<std::int64_t>(ds.item_col(j).size());

  // Worklist peeling: removing an entity decrements its neighbours, which may
  // push them below k in turn; this reaches the fixpoint in one pass.
  std::vector<std::pair<char, int>> work;  // (0 = user, 1 = item, index)
  for (int u = 0; u < n; ++u) {
    if (user_deg[u] < k) work.emplace_back(0, u);
  }
  for (int j = 0; j < m; ++j) {
    if (item_deg[j] < k) work.emplace_back(1, j);
  }
  while (!work.empty()) {
    const auto [is_item, idx] = work.back();
    work.pop_back();
    if (!is_item) {
      if (!user_alive[idx]) continue;
      user_alive[idx] = 0;
      for (const int j : ds.user_row(idx)) {
        if (item_alive[j] && --item_deg[j] < k) work.emplace_back(1, j);
      }
    } else {
      if (!item_alive[idx]) continue;
      item_alive[idx] = 0;
      for (const int u : ds.item_col(idx)) {
        if (user_alive[u] && --user_deg[u] < k) work.emplace_back(0, u);
      }
    }
  }

  std::vector<int> user_map(n, -1);
  std::vector<int> item_map(m, -1);
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  for (int u = 0; u < n; ++u) {
    if (user_alive[u]) {
      user_map[u] = static_cast<int>(user_tokens.size());
      user_tokens.push_back(ds.user_token(u));
    }
  }
  for (int j = 0; j < m; ++j) {
    if (item_alive[j]) {
      item_map[j] = static_cast<int>(item_tokens.size());
      item_tokens.push_back(ds.item_token(j));
    }
  }
  if (user_tokens.empty() || item_tokens.empty()) {
    throw std::runtime_error("k-core eliminated all data");
  }

  std::vector<std::pair<int, int>> pairs;
  for (int u = 0; u < n; ++u) {
    if (!user_alive[u]) continue;
    for (const int j : ds.user_row(u)) {
      if (item_alive[j]) pairs.emplace_back(user_map[u], item_map[j]);
    }
  }
  const int n_kept_users = static_cast<int>(user_tokens.size());
  const int n_kept_items = static_cast<int>(item_tokens.size());
  return InteractionDataset::from_pairs(n_kept_users, n_kept_items,
                                        std::move(pairs), std::move(user_tokens),
                                        std::move(item_tokens));
}

SplitDataset split_user_based(const InteractionDataset& ds, SplitRatios ratios,
                              std::int64_t seed) {
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 ||
      ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw std::runtime_error("split ratios must be non-negative and sum to 1");
  }
  SplitDataset split;
  split.seed = seed;
  split.val.resize(ds.n_users());
  split.test.resize(ds.n_users());

  std::vector<std::pair<int, int>> train_pairs;
  for (int u = 0; u < ds.n_users(); ++u) {
    const auto row = ds.user_row(u);
    if (row.empty()) {
      throw std::runtime_error(strf("user %d has no interactions to split", u));
    }
    std::vector<int> items(row.begin(), row.end());
    Rng rng = Rng::stream(static_cast<std::uint64_t>(seed), rng_tag::split,
                          static_cast<std::uint64_t>(u));
    rng.shuffle(items);

    const auto n = items.size();
    const auto n_test = static_cast<std::size_t>(
        std::floor(ratios.test * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(
        std::floor(ratios.val * static_cast<double>(n)));
    const auto n_train = n - n_val - n_test;

    for (std::size_t p = 0; p < n_train; ++p) train_pairs.emplace_back(u, items[p]);
    split.val[u].assign(items.begin() + n_train, items.begin() + n_train + n_val);
    split.test[u].assign(items.begin() + n_train + n_val, items.end());
    std::sort(split.val[u].begin(), split.val[u].end());
    std::sort(split.test[u].begin(), split.test[u].end());
  }

  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  user_tokens.reserve(ds.n_users());
  item_tokens.reserve(ds.n_items());
  for (int u = 0; u < ds.n_users(); ++u) user_tokens.push_back(ds.user_token(u));
  for (int j = 0; j < ds.n_items(); ++j) item_tokens.push_back(ds.item_token(j));
  split.train = InteractionDataset::from_pairs(ds.n_users(), ds.n_items(),
                                               std::move(train_pairs),
                                               std::move(user_tokens),
                                               std::move(item_tokens));
  return split;
}

std::span<const int> user_profile(const InteractionDataset& ds, int i) {
  return ds.user_row(i);
}

std::span<const int> item_profile(const InteractionDataset& ds, int j) {
  return ds.item_col(j);
}

InteractionDataset make_block_dataset(int n_users, int n_items, int n_blocks,
                                      double p_in, double p_out,
                                      std::uint64_t seed) {
  if (n_blocks < 1 || n_users % n_blocks != 0 || n_items % n_blocks != 0) {
    throw std::runtime_error("block counts must divide users and items");
  }
  const int users_per_block = n_users / n_blocks;
  const int items_per_block = n_items / n_blocks;
  Rng rng = Rng::stream(seed, rng_tag::synth);
  std::vector<std::pair<int, int>> pairs;
  for (int u = 0; u < n_users; ++u) {
    for (int j = 0; j < n_items; ++j) {
      const bool in_block = (u / users_per_block) == (j / items_per_block);
      const double p = in_block ? p_in : p_out;
      if (rng.uniform_real() < p) pairs.emplace_back(u, j);
    }
  }
  std::vector<std::string> user_tokens(n_users);
  std::vector<std::string> item_tokens(n_items);
  for (int u = 0; u < n_users; ++u) user_tokens[u] = strf("u%d", u);
  for (int j = 0; j < n_items; ++j) item_tokens[j] = strf("i%d", j);
  auto ds = InteractionDataset::from_pairs(n_users, n_items, std::move(pairs),
                                           std::move(user_tokens),
                                           std::move(item_tokens));
  for (int u = 0; u < n_users; ++u) {
    if (ds.user_row(u).empty()) {
      throw std::runtime_error(strf("synthetic user %d has no interactions", u));
    }
  }
  for (int j = 0; j < n_items; ++j) {
    if (ds.item_col(j).empty()) {
      throw std::runtime_error(strf("synthetic item %d has no interactions", j));
    }
  }
  return ds;
}

void save_cache(const SplitDataset& split, const std::filesystem::path& cache_file,
                const std::filesystem::path& split_file) {
  std::ofstream cache(cache_file);
  std::ofstream tags(split_file);
  if (!cache || !tags) {
    throw std::runtime_error("cannot write dataset cache to '" +
                             cache_file.string() + "'");
  }
  const auto& train = split.train;
  cache << train.n_users() << ' ' << train.n_items() << ' '
        << split.n_interactions() << '\n';
  tags << "seed " << split.seed << '\n';
  for (int u = 0; u < train.n_users(); ++u) {
    // Merge the per-user partitions back into one ascending item list.
    struct Tagged {
      int item;
      const char* tag;
    };
    std::vector<Tagged> items;
    for (const int j : train.user_row(u)) items.push_back({j, "train"});
    for (const int j : split.val[u]) items.push_back({j, "val"});
    for (const int j : split.test[u]) items.push_back({j, "test"});
    std::sort(items.begin(), items.end(),
              [](const Tagged& a, const Tagged& b) { return a.item < b.item; });
    for (const auto& [item, tag] : items) {
      cache << u << ' ' << item << '\n';
      tags << tag << '\n';
    }
  }
  if (!cache.flush() || !tags.flush()) {
    throw std::runtime_error("failed writing dataset cache");
  }
}

SplitDataset load_cache(const std::filesystem::path& cache_file,
                        const std::filesystem::path& split_file) {
  auto cache = open_or_throw(cache_file);
  auto tags = open_or_throw(split_file);

  int n_users = 0;
  int n_items = 0;
  std::int64_t n_interactions = 0;
  if (!(cache >> n_users >> n_items >> n_interactions) || n_users < 1 ||
      n_items < 1 || n_interactions < 1) {
    throw std::runtime_error("malformed cache header in '" + cache_file.string() + "'");
  }

  std::string seed_word;
  std::int64_t seed = 0;
  if (!(tags >> seed_word >> seed) || seed_word != "seed") {
    throw std::runtime_error("malformed split sidecar '" + split_file.string() +
                             "': expected 'seed <value>' header");
  }

  SplitDataset split;
  split.seed = seed;
  split.val.resize(n_users);
  split.test.resize(n_users);
  std::vector<std::pair<int, int>> train_pairs;

  for (std::int64_t r = 0; r < n_interactions; ++r) {
    int u = 0;
    int j = 0;
    std::string tag;
    if (!(cache >> u >> j)) {
      throw std::runtime_error(strf("cache '%s' truncated at interaction %lld",
                                    cache_file.c_str(), static_cast<long long>(r)));
    }
    if (!(tags >> tag)) {
      throw std::runtime_error(strf("split sidecar '%s' truncated at interaction %lld",
                                    split_file.c_str(), static_cast<long long>(r)));
    }
    if (u < 0 || u >= n_users || j < 0 || j >= n_items) {
      throw std::runtime_error(strf("cache interaction (%d, %d) out of range", u, j));
    }
    if (tag == "train") {
      train_pairs.emplace_back(u, j);
    } else if (tag == "val") {
      split.val[u].push_back(j);
    } else if (tag == "test") {
      split.test[u].push_back(j);
    } else {
      throw std::runtime_error("unknown partition tag '" + tag + "'");
    }
  }

  // Cache files carry dense indices only; tokens are synthesized.
  std::vector<std::string> user_tokens(n_users);
  std::vector<std::string> item_tokens(n_items);
  for (int u = 0; u < n_users; ++u) user_tokens[u] = strf("%d", u);
  for (int j = 0; j < n_items; ++j) item_tokens[j] = strf("%d", j);
  split.train = InteractionDataset::from_pairs(n_users, n_items,
                                               std::move(train_pairs),
                                               std::move(user_tokens),
                                               std::move(item_tokens));
  for (int u = 0; u < n_users; ++u) {
    if (split.train.user_row(u).empty()) {
      throw std::runtime_error(strf("cache user %d has no train interactions", u));
    }
    std::sort(split.val[u].begin(), split.val[u].end());
    std::sort(split.test[u].begin(), split.test[u].end());
  }
  return split;
}

}  // namespace cobrar::data
