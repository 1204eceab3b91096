#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cobrar/dataset.hpp"
#include "cobrar/models.hpp"
#include "cobrar/training.hpp"

namespace cobrar::cli {

// Flat typed key-value format with [section] headers. List values are
// comma-separated alternatives; an alternative may hold several
// space-separated numbers (e.g. a layer-size chain). One parser serves
// experiment configs, grid files and run manifests.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::filesystem::path& path);
  static Config parse_string(std::string_view text, const std::string& origin);

  std::string serialize() const;
  std::uint64_t hash() const;  // FNV-1a over the canonical serialization

  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;

  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;

  std::int64_t get_int(const std::string& section, const std::string& key) const;
  std::int64_t get_int_or(const std::string& section, const std::string& key,
                          std::int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const;

  // Comma-separated alternatives of the raw value.
  std::vector<std::string> get_list(const std::string& section,
                                    const std::string& key) const;
  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& section,
                                         const std::string& key) const;

  void set(const std::string& section, const std::string& key, std::string value);

  std::vector<std::string> section_names() const;
  std::vector<std::pair<std::string, std::string>> entries(
      const std::string& section) const;

  bool operator==(const Config& other) const;

 private:
  struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;
  };
  const Section* find(const std::string& section) const;
  Section& find_or_create(const std::string& section);

  std::vector<Section> sections_;
  std::string origin_ = "<none>";
};

// Space-separated ints, e.g. a hidden-layer chain.
std::vector<int> parse_int_chain(std::string_view value, const std::string& ctx);

enum class DatasetFormat { movielens, amazon, synthetic };

struct DatasetSpec {
  DatasetFormat format = DatasetFormat::synthetic;
  std::string path;  // raw file for movielens/amazon
  int k_core = 5;
  data::SplitRatios ratios;
  std::int64_t seed = 42;
  std::string cache_dir;
  // synthetic parameters
  int users = 200;
  int items = 100;
  int blocks = 4;
  double p_in = 1.0;
  double p_out = 0.02;
  std::uint64_t gen_seed = 7;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  models::ModelKind kind = models::ModelKind::cobrar;
  std::optional<train::TrainConfig> single;
  std::optional<train::GridSpec> grid;
  int eval_k = 5;
  std::string output_dir = "runs";

  // Validates the invariants (exactly one of [train]/[grid], known formats).
  static ExperimentConfig from(const Config& cfg);
};

}  // namespace cobrar::cli
