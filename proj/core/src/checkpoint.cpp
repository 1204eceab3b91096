#include "cobrar/checkpoint.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cobrar/strings.hpp"

namespace cobrar::models {

namespace {

constexpr const char* kMagic = "cobrar-checkpoint v1 encoding=text-hexfloat";

void write_ints(std::ofstream& out, const char* key, std::span<const int> values) {
  out << key;
  for (const int v : values) out << ' ' << v;
  out << '\n';
}

double parse_hexfloat(const std::string& tok, const std::string& ctx) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) {
    throw std::runtime_error(ctx + ": bad float '" + tok + "'");
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const data::Fingerprint& fingerprint,
                     const train::TrainConfig& config) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write checkpoint to '" + path.string() + "'");
  }
  out << kMagic << '\n';
  out << "kind " << kind_name(kind_of(model)) << '\n';
  out << "fingerprint " << fingerprint.to_string() << '\n';
  write_ints(out, "architecture", architecture_of(model));
  out << strf("dropout_rate %a\n", dropout_rate_of(model));
  out << strf("mu %a\n", mu_of(model));
  out << strf("config lr %a l2 %a batch %d n_neg %d max_epochs %d patience %d seed %lld\n",
              config.learning_rate, config.l2_weight, config.batch_size,
              config.n_neg, config.max_epochs, config.patience,
              static_cast<long long>(config.seed));

  Model copy = model;  // param_refs needs mutable access
  ModelGrads grads = zero_grads(copy);
  for (const auto& ref : param_refs(copy, grads)) {
    out << "tensor " << ref.name << ' ' << ref.value.size() << '\n';
    for (std::size_t i = 0; i < ref.value.size(); ++i) {
      out << strf(i + 1 == ref.value.size() ? "%a" : "%a ", ref.value[i]);
    }
    out << '\n';
  }
  out << "end\n";
  if (!out.flush()) {
    throw std::runtime_error("failed writing checkpoint '" + path.string() + "'");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  }
  const std::string ctx = "checkpoint '" + path.string() + "'";
  std::string line;
  if (!std::getline(in, line) || trim(line) != kMagic) {
    throw std::runtime_error(ctx + ": unrecognized format header");
  }

  std::string word;
  std::string kind_str;
  if (!(in >> word >> kind_str) || word != "kind") {
    throw std::runtime_error(ctx + ": missing kind");
  }
  const ModelKind kind = kind_from_name(kind_str);

  data::Fingerprint fp;
  long long n_inter = 0;
  long long split_seed = 0;
  if (!(in >> word >> fp.n_users >> fp.n_items >> n_inter >> split_seed) ||
      word != "fingerprint") {
    throw std::runtime_error(ctx + ": missing fingerprint");
  }
  fp.n_interactions = n_inter;
  fp.split_seed = split_seed;

  if (!(in >> word) || word != "architecture") {
    throw std::runtime_error(ctx + ": missing architecture");
  }
  std::getline(in, line);
  std::vector<int> architecture;
  for (const auto tok : split_ws(line)) {
    int v = 0;
    try {
      v = std::stoi(std::string(tok));
    } catch (const std::exception&) {
      throw std::runtime_error(ctx + ": bad architecture entry");
    }
    architecture.push_back(v);
  }
  if (architecture.empty()) {
    throw std::runtime_error(ctx + ": empty architecture");
  }

  std::string tok;
  if (!(in >> word >> tok) || word != "dropout_rate") {
    throw std::runtime_error(ctx + ": missing dropout_rate");
  }
  const double dropout_rate = parse_hexfloat(tok, ctx);
  if (!(in >> word >> tok) || word != "mu") {
    throw std::runtime_error(ctx + ": missing mu");
  }
  const double mu = parse_hexfloat(tok, ctx);

  train::TrainConfig config;
  {
    std::string lr_s, l2_s;
    std::string k1, k2, k3, k4, k5, k6, k7;
    long long seed = 0;
    if (!(in >> word >> k1 >> lr_s >> k2 >> l2_s >> k3 >> config.batch_size >>
          k4 >> config.n_neg >> k5 >> config.max_epochs >> k6 >>
          config.patience >> k7 >> seed) ||
        word != "config") {
      throw std::runtime_error(ctx + ": malformed config line");
    }
    config.learning_rate = parse_hexfloat(lr_s, ctx);
    config.l2_weight = parse_hexfloat(l2_s, ctx);
    config.seed = seed;
  }
  config.mu = mu;
  config.dropout_rate = dropout_rate;
  config.embedding_dim = architecture.back();
  config.hidden_layers.assign(architecture.begin(), architecture.end() - 1);

  Rng dummy(0);
  Model model = make_model(kind, fp.n_users, fp.n_items, architecture,
                           dropout_rate, mu, dummy);
  ModelGrads grads = zero_grads(model);
  for (auto& ref : param_refs(model, grads)) {
    std::size_t count = 0;
    if (!(in >> word >> tok >> count) || word != "tensor" || tok != ref.name ||
        count != ref.value.size()) {
      throw std::runtime_error(ctx + ": expected tensor " + ref.name);
    }
    for (std::size_t i = 0; i < count; ++i) {
      if (!(in >> tok)) {
        throw std::runtime_error(ctx + ": tensor " + ref.name + " truncated");
      }
      ref.value[i] = parse_hexfloat(tok, ctx);
    }
  }
  if (!(in >> word) || word != "end") {
    throw std::runtime_error(ctx + ": missing end marker");
  }
  return Checkpoint{std::move(model), fp, std::move(config)};
}

}  // namespace cobrar::models
