#include "cobrar/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cobrar/strings.hpp"

namespace cobrar::cli {

Config Config::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config '" + path.string() + "'");
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path.string());
}

Config Config::parse_string(std::string_view text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::size_t line_no = 0;
  Section* current = nullptr;
  for (const auto raw_line : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw_line;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string ctx = strf("%s: line %zu", origin.c_str(), line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw std::runtime_error(ctx + ": malformed section header");
      }
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (cfg.find(name) != nullptr) {
        throw std::runtime_error(ctx + ": duplicate section [" + name + "]");
      }
      cfg.sections_.push_back(Section{name, {}});
      current = &cfg.sections_.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::runtime_error(ctx + ": expected 'key = value'");
    }
    if (current == nullptr) {
      throw std::runtime_error(ctx + ": entry outside any [section]");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      throw std::runtime_error(ctx + ": empty key");
    }
    for (const auto& [k, v] : current->entries) {
      if (k == key) {
        throw std::runtime_error(ctx + ": duplicate key '" + key + "' in [" +
                                 current->name + "]");
      }
    }
    current->entries.emplace_back(key, value);
  }
  return cfg;
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& section : sections_) {
    out += "[" + section.name + "]\n";
    for (const auto& [key, value] : section.entries) {
      out += key + " = " + value + "\n";
    }
  }
  return out;
}

std::uint64_t Config::hash() const {
  const std::string text = serialize();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const Config::Section* Config::find(const std::string& section) const {
  for (const auto& s : sections_) {
    if (s.name == section) return &s;
  }
  return nullptr;
}

Config::Section& Config::find_or_create(const std::string& section) {
  for (auto& s : sections_) {
    if (s.name == section) return s;
  }
  sections_.push_back(Section{section, {}});
  return sections_.back();
}

bool Config::has_section(const std::string& section) const {
  return find(section) != nullptr;
}

bool Config::has(const std::string& section, const std::string& key) const {
  const Section* s = find(section);
  if (s == nullptr) return false;
  for (const auto& [k, v] : s->entries) {
    if (k == key) return true;
  }
  return false;
}

const std::string& Config::get(const std::string& section,
                               const std::string& key) const {
  const Section* s = find(section);
  if (s != nullptr) {
    for (const auto& [k, v] : s->entries) {
      if (k == key) return v;
    }
  }
  throw std::runtime_error(strf("%s: missing %s.%s", origin_.c_str(),
                                section.c_str(), key.c_str()));
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

namespace {

std::int64_t to_int(std::string_view v, const std::string& ctx) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::runtime_error(ctx + ": bad integer '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view v, const std::string& ctx) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw std::runtime_error(ctx + ": bad number '" + std::string(v) + "'");
  }
  return out;
}

}  // namespace

std::int64_t Config::get_int(const std::string& section, const std::string& key) const {
  return to_int(get(section, key), origin_ + ": " + section + "." + key);
}

std::int64_t Config::get_int_or(const std::string& section, const std::string& key,
                                std::int64_t fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key) const {
  return to_double(get(section, key), origin_ + ": " + section + "." + key);
}

double Config::get_double_or(const std::string& section, const std::string& key,
                             double fallback) const {
  return has(section, key) ? get_double(section, key) : fallback;
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
  std::vector<std::string> out;
  for (const auto part : split(get(section, key), ',')) {
    const auto t = trim(part);
    if (t.empty()) {
      throw std::runtime_error(strf("%s: empty list entry in %s.%s",
                                    origin_.c_str(), section.c_str(), key.c_str()));
    }
    out.emplace_back(t);
  }
  return out;
}

std::vector<double> Config::get_double_list(const std::string& section,
                                            const std::string& key) const {
  std::vector<double> out;
  const std::string ctx = origin_ + ": " + section + "." + key;
  for (const auto& part : get_list(section, key)) out.push_back(to_double(part, ctx));
  return out;
}

std::vector<std::int64_t> Config::get_int_list(const std::string& section,
                                               const std::string& key) const {
  std::vector<std::int64_t> out;
  const std::string ctx = origin_ + ": " + section + "." + key;
  for (const auto& part : get_list(section, key)) out.push_back(to_int(part, ctx));
  return out;
}

void Config::set(const std::string& section, const std::string& key,
                 std::string value) {
  Section& s = find_or_create(section);
  for (auto& [k, v] : s.entries) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  s.entries.emplace_back(key, std::move(value));
}

std::vector<std::string> Config::section_names() const {
  std::vector<std::string> out;
  out.reserve(sections_.size());
  for (const auto& s : sections_) out.push_back(s.name);
  return out;
}

std::vector<std::pair<std::string, std::string>> Config::entries(
    const std::string& section) const {
  const Section* s = find(section);
  if (s == nullptr) {
    throw std::runtime_error(origin_ + ": missing section [" + section + "]");
  }
  return s->entries;
}

bool Config::operator==(const Config& other) const {
  if (sections_.size() != other.sections_.size()) return false;
  for (std::size_t i = 0; i < sections_.size(); ++i) {
    if (sections_[i].name != other.sections_[i].name ||
        sections_[i].entries != other.sections_[i].entries) {
      return false;
    }
  }
  return true;
}

std::vector<int> parse_int_chain(std::string_view value, const std::string& ctx) {
  std::vector<int> out;
  for (const auto tok : split_ws(value)) {
    out.push_back(static_cast<int>(to_int(tok, ctx)));
  }
  return out;
}

namespace {

DatasetFormat format_from_name(const std::string& name) {
  if (name == "movielens") return DatasetFormat::movielens;
  if (name == "amazon") return DatasetFormat::amazon;
  if (name == "synthetic") return DatasetFormat::synthetic;
  throw std::runtime_error("unknown dataset format '" + name +
                           "' (expected movielens, amazon or synthetic)");
}

train::TrainConfig train_config_from(const Config& cfg, const std::string& section) {
  train::TrainConfig tc;
  tc.learning_rate = cfg.get_double_or(section, "learning_rate", tc.learning_rate);
  tc.l2_weight = cfg.get_double_or(section, "l2_weight", tc.l2_weight);
  tc.batch_size = static_cast<int>(cfg.get_int_or(section, "batch_size", tc.batch_size));
  tc.n_neg = static_cast<int>(cfg.get_int_or(section, "n_neg", tc.n_neg));
  tc.mu = cfg.get_double_or(section, "mu", tc.mu);
  tc.dropout_rate = cfg.get_double_or(section, "dropout_rate", tc.dropout_rate);
  tc.max_epochs = static_cast<int>(cfg.get_int_or(section, "max_epochs", tc.max_epochs));
  tc.patience = static_cast<int>(cfg.get_int_or(section, "patience", tc.patience));
  tc.embedding_dim =
      static_cast<int>(cfg.get_int_or(section, "embedding_dim", tc.embedding_dim));
  if (cfg.has(section, "hidden_layers")) {
    tc.hidden_layers = parse_int_chain(cfg.get(section, "hidden_layers"),
                                       section + ".hidden_layers");
  }
  tc.seed = cfg.get_int_or(section, "seed", tc.seed);
  return tc;
}

train::GridSpec grid_spec_from(const Config& cfg) {
  train::GridSpec grid;
  const std::string section = "grid";
  if (cfg.has(section, "hidden_layers")) {
    for (const auto& alt : cfg.get_list(section, "hidden_layers")) {
      grid.hidden_layers.push_back(parse_int_chain(alt, "grid.hidden_layers"));
    }
  }
  if (cfg.has(section, "embedding_dim")) {
    for (const auto v : cfg.get_int_list(section, "embedding_dim")) {
      grid.embedding_dim.push_back(static_cast<int>(v));
    }
  }
  if (cfg.has(section, "learning_rate")) {
    grid.learning_rate = cfg.get_double_list(section, "learning_rate");
  }
  if (cfg.has(section, "l2_weight")) {
    grid.l2_weight = cfg.get_double_list(section, "l2_weight");
  }
  if (cfg.has(section, "dropout_rate")) {
    grid.dropout_rate = cfg.get_double_list(section, "dropout_rate");
  }
  if (cfg.has(section, "batch_size")) {
    for (const auto v : cfg.get_int_list(section, "batch_size")) {
      grid.batch_size.push_back(static_cast<int>(v));
    }
  }
  if (cfg.has(section, "n_neg")) {
    for (const auto v : cfg.get_int_list(section, "n_neg")) {
      grid.n_neg.push_back(static_cast<int>(v));
    }
  }
  if (cfg.has(section, "mu")) {
    grid.mu = cfg.get_double_list(section, "mu");
  }
  if (cfg.has(section, "max_epochs")) {
    for (const auto v : cfg.get_int_list(section, "max_epochs")) {
      grid.max_epochs.push_back(static_cast<int>(v));
    }
  }
  if (cfg.has(section, "patience")) {
    for (const auto v : cfg.get_int_list(section, "patience")) {
      grid.patience.push_back(static_cast<int>(v));
    }
  }
  if (cfg.has(section, "seed")) {
    grid.seed = cfg.get_int_list(section, "seed");
  }
  return grid;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const Config& cfg) {
  ExperimentConfig ec;

  ec.dataset.format = format_from_name(cfg.get("dataset", "format"));
  ec.dataset.path = cfg.get_or("dataset", "path", "");
  if (ec.dataset.format != DatasetFormat::synthetic && ec.dataset.path.empty()) {
    throw std::runtime_error("dataset.path is required for raw-file formats");
  }
  ec.dataset.k_core = static_cast<int>(cfg.get_int_or("dataset", "k_core", 5));
  if (cfg.has("dataset", "split_ratios")) {
    const auto parts = split_ws(cfg.get("dataset", "split_ratios"));
    if (parts.size() != 3) {
      throw std::runtime_error("dataset.split_ratios needs three values");
    }
    ec.dataset.ratios.train = to_double(parts[0], "dataset.split_ratios");
    ec.dataset.ratios.val = to_double(parts[1], "dataset.split_ratios");
    ec.dataset.ratios.test = to_double(parts[2], "dataset.split_ratios");
  }
  ec.dataset.seed = cfg.get_int_or("dataset", "seed", ec.dataset.seed);
  ec.dataset.cache_dir = cfg.get("dataset", "cache");
  ec.dataset.users = static_cast<int>(cfg.get_int_or("dataset", "users", ec.dataset.users));
  ec.dataset.items = static_cast<int>(cfg.get_int_or("dataset", "items", ec.dataset.items));
  ec.dataset.blocks = static_cast<int>(cfg.get_int_or("dataset", "blocks", ec.dataset.blocks));
  ec.dataset.p_in = cfg.get_double_or("dataset", "p_in", ec.dataset.p_in);
  ec.dataset.p_out = cfg.get_double_or("dataset", "p_out", ec.dataset.p_out);
  ec.dataset.gen_seed = static_cast<std::uint64_t>(
      cfg.get_int_or("dataset", "gen_seed", static_cast<std::int64_t>(ec.dataset.gen_seed)));

  ec.kind = models::kind_from_name(cfg.get_or("model", "kind", "cobrar"));

  const bool has_train = cfg.has_section("train");
  const bool has_grid = cfg.has_section("grid");
  if (has_train == has_grid) {
    throw std::runtime_error(
        "exactly one of [train] or [grid] must be present in the config");
  }
  if (has_train) {
    ec.single = train_config_from(cfg, "train");
  } else {
    ec.grid = grid_spec_from(cfg);
  }

  ec.eval_k = static_cast<int>(cfg.get_int_or("evaluation", "k", 5));
  ec.output_dir = cfg.get_or("output", "dir", ec.output_dir);
  return ec;
}

}  // namespace cobrar::cli
