#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cobrar/dataset.hpp"
#include "cobrar/nn.hpp"

namespace cobrar::models {

// Single shared collaborative branch: both the user and the item path run
// through the same `g`, so its parameters receive gradients from both.
struct CoBraRModel {
  nn::LinearLayer f_u;  // M -> p down-projection of user profiles
  nn::LinearLayer f_t;  // N -> p down-projection of item profiles
  nn::Branch g;         // shared p -> ... -> d_L stack
  double mu = 1e-6;     // score clamp threshold used by the training loss
};

// Two-branch counterpart with independent user/item stacks of identical shape.
struct DeepMFModel {
  nn::LinearLayer f_u;
  nn::LinearLayer f_t;
  nn::Branch g_user;
  nn::Branch g_item;
  double mu = 1e-6;
};

enum class ModelKind { cobrar, deepmf };

const char* kind_name(ModelKind kind);
ModelKind kind_from_name(const std::string& name);

using Model = std::variant<CoBraRModel, DeepMFModel>;

// architecture = [d_1 ... d_L]; the down-projection width p equals d_1 and
// d_L is the embedding dimension.
Model make_model(ModelKind kind, int n_users, int n_items,
                 std::span<const int> architecture, double dropout_rate,
                 double mu, Rng& rng);

ModelKind kind_of(const Model& m);
double mu_of(const Model& m);
double dropout_rate_of(const Model& m);
std::vector<int> architecture_of(const Model& m);
int embedding_dim(const Model& m);

struct CoBraRGrads {
  nn::LinearGrads f_u;
  nn::LinearGrads f_t;
  nn::BranchGrads g;
};

struct DeepMFGrads {
  nn::LinearGrads f_u;
  nn::LinearGrads f_t;
  nn::BranchGrads g_user;
  nn::BranchGrads g_item;
};

using ModelGrads = std::variant<CoBraRGrads, DeepMFGrads>;

ModelGrads zero_grads(const Model& m);

// Stable, named enumeration of all trainable tensors; drives Adam,
// checkpoints and finite-difference sweeps.
std::vector<nn::ParamRef> param_refs(Model& m, ModelGrads& grads);

// Forward record for one embedding: the profile indices that fed the
// down-projection plus the branch tape.
struct EmbedTrace {
  std::vector<int> profile;
  nn::Tape tape;
};

// e_i = g(f_u(R_i*)). The sparse profile is never densified; only the
// weight-matrix rows named by the profile contribute.
nn::Vec user_embed(const Model& m, const data::InteractionDataset& train, int i,
                   nn::Mode mode, Rng* rng, EmbedTrace* trace);
// e_j = g(f_t(R_*j)).
nn::Vec item_embed(const Model& m, const data::InteractionDataset& train, int j,
                   nn::Mode mode, Rng* rng, EmbedTrace* trace);

void user_embed_backward(const Model& m, const EmbedTrace& trace,
                         std::span<const double> grad_embedding, ModelGrads& grads);
void item_embed_backward(const Model& m, const EmbedTrace& trace,
                         std::span<const double> grad_embedding, ModelGrads& grads);

// Recommendation score of an embedding pair.
double score(std::span<const double> e_i, std::span<const double> e_j);

// Bias-free parameter counts of the embedding stack; the shared branch makes
// the two-branch counterpart cost exactly twice the branch parameters.
struct ParamCount {
  std::int64_t branch_params = 0;
  std::int64_t downproj_params = 0;
  std::int64_t total = 0;
};

ParamCount param_count(std::span<const int> architecture, ModelKind kind,
                       int n_users, int n_items, int p);

}  // namespace cobrar::models
