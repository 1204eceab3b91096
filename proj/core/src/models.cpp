#include "cobrar/models.hpp"

#include <stdexcept>

#include "cobrar/strings.hpp"

namespace cobrar::models {

const char* kind_name(ModelKind kind) {
  return kind == ModelKind::cobrar ? "cobrar" : "deepmf";
}

ModelKind kind_from_name(const std::string& name) {
  if (name == "cobrar") return ModelKind::cobrar;
  if (name == "deepmf") return ModelKind::deepmf;
  throw std::runtime_error("unknown model kind '" + name + "' (expected cobrar or deepmf)");
}

Model make_model(ModelKind kind, int n_users, int n_items,
                 std::span<const int> architecture, double dropout_rate,
                 double mu, Rng& rng) {
  if (architecture.empty()) {
    throw std::runtime_error("architecture needs at least one layer size");
  }
  for (const int d : architecture) {
    if (d < 1) throw std::runtime_error(strf("invalid layer size %d", d));
  }
  if (!(mu > 0.0 && mu < 0.5)) {
    throw std::runtime_error(strf("mu %g outside (0, 0.5)", mu));
  }
  const int p = architecture.front();
  if (kind == ModelKind::cobrar) {
    CoBraRModel m;
    m.f_u = nn::glorot_linear(n_items, p, rng);
    m.f_t = nn::glorot_linear(n_users, p, rng);
    m.g = nn::make_branch(architecture, dropout_rate, rng);
    m.mu = mu;
    return m;
  }
  DeepMFModel m;
  m.f_u = nn::glorot_linear(n_items, p, rng);
  m.f_t = nn::glorot_linear(n_users, p, rng);
  m.g_user = nn::make_branch(architecture, dropout_rate, rng);
  m.g_item = nn::make_branch(architecture, dropout_rate, rng);
  m.mu = mu;
  return m;
}

ModelKind kind_of(const Model& m) {
  return std::holds_alternative<CoBraRModel>(m) ? ModelKind::cobrar
                                                : ModelKind::deepmf;
}

double mu_of(const Model& m) {
  return std::visit([](const auto& mm) { return mm.mu; }, m);
}

double dropout_rate_of(const Model& m) {
  if (const auto* c = std::get_if<CoBraRModel>(&m)) return c->g.dropout_rate;
  return std::get<DeepMFModel>(m).g_user.dropout_rate;
}

std::vector<int> architecture_of(const Model& m) {
  const nn::Branch& g = std::holds_alternative<CoBraRModel>(m)
                            ? std::get<CoBraRModel>(m).g
                            : std::get<DeepMFModel>(m).g_user;
  std::vector<int> arch;
  if (g.layers.empty()) {
    // L = 1: the branch is the identity on the down-projection output.
    const auto& f_u = std::visit([](const auto& mm) -> const nn::LinearLayer& {
      return mm.f_u;
    }, m);
    arch.push_back(f_u.d_out());
    return arch;
  }
  arch.push_back(g.layers.front().d_in());
  for (const auto& l : g.layers) arch.push_back(l.d_out());
  return arch;
}

int embedding_dim(const Model& m) { return architecture_of(m).back(); }

ModelGrads zero_grads(const Model& m) {
  if (const auto* c = std::get_if<CoBraRModel>(&m)) {
    return CoBraRGrads{nn::LinearGrads::zeros_like(c->f_u),
                       nn::LinearGrads::zeros_like(c->f_t),
                       nn::BranchGrads::zeros_like(c->g)};
  }
  const auto& d = std::get<DeepMFModel>(m);
  return DeepMFGrads{nn::LinearGrads::zeros_like(d.f_u),
                     nn::LinearGrads::zeros_like(d.f_t),
                     nn::BranchGrads::zeros_like(d.g_user),
                     nn::BranchGrads::zeros_like(d.g_item)};
}

namespace {

void push_linear(std::vector<nn::ParamRef>& out, const std::string& prefix,
                 nn::LinearLayer& l, nn::LinearGrads& g) {
  out.push_back({prefix + ".weight", l.w.a, g.dw.a});
  out.push_back({prefix + ".bias", l.b, g.db});
}

void push_branch(std::vector<nn::ParamRef>& out, const std::string& prefix,
                 nn::Branch& b, nn::BranchGrads& g) {
  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    push_linear(out, strf("%s.layer%zu", prefix.c_str(), l), b.layers[l],
                g.layers[l]);
  }
}

}  // namespace

std::vector<nn::ParamRef> param_refs(Model& m, ModelGrads& grads) {
  std::vector<nn::ParamRef> out;
  if (auto* c = std::get_if<CoBraRModel>(&m)) {
    auto& cg = std::get<CoBraRGrads>(grads);
    push_linear(out, "f_u", c->f_u, cg.f_u);
    push_linear(out, "f_t", c->f_t, cg.f_t);
    push_branch(out, "g", c->g, cg.g);
    return out;
  }
  auto& d = std::get<DeepMFModel>(m);
  auto& dg = std::get<DeepMFGrads>(grads);
  push_linear(out, "f_u", d.f_u, dg.f_u);
  push_linear(out, "f_t", d.f_t, dg.f_t);
  push_branch(out, "g_user", d.g_user, dg.g_user);
  push_branch(out, "g_item", d.g_item, dg.g_item);
  return out;
}

namespace {

nn::Vec embed_path(const nn::LinearLayer& proj, const nn::Branch& branch,
                   std::span<const int> profile, nn::Mode mode, Rng* rng,
                   EmbedTrace* trace) {
  nn::Vec projected(static_cast<std::size_t>(proj.d_out()));
  nn::linear_forward_sparse(proj, profile, projected.data());
  if (trace != nullptr) trace->profile.assign(profile.begin(), profile.end());
  if (branch.layers.empty()) {
    if (trace != nullptr) {
      trace->tape.recs.clear();
      trace->tape.train = mode == nn::Mode::train;
    }
    return projected;
  }
  return nn::branch_forward(branch, projected, mode, rng,
                            trace != nullptr ? &trace->tape : nullptr);
}

void embed_path_backward(const nn::LinearLayer& proj, const nn::Branch& branch,
                         const EmbedTrace& trace,
                         std::span<const double> grad_embedding,
                         nn::LinearGrads& proj_grads, nn::BranchGrads& branch_grads) {
  nn::Vec grad_proj;
  if (branch.layers.empty()) {
    grad_proj.assign(grad_embedding.begin(), grad_embedding.end());
  } else {
    grad_proj = nn::branch_backward(branch, trace.tape, grad_embedding, branch_grads);
  }
  nn::linear_backward_sparse(proj, trace.profile, grad_proj, proj_grads);
}

}  // namespace

nn::Vec user_embed(const Model& m, const data::InteractionDataset& train, int i,
                   nn::Mode mode, Rng* rng, EmbedTrace* trace) {
  const auto profile = data::user_profile(train, i);
  if (const auto* c = std::get_if<CoBraRModel>(&m)) {
    return embed_path(c->f_u, c->g, profile, mode, rng, trace);
  }
  const auto& d = std::get<DeepMFModel>(m);
  return embed_path(d.f_u, d.g_user, profile, mode, rng, trace);
}

nn::Vec item_embed(const Model& m, const data::InteractionDataset& train, int j,
                   nn::Mode mode, Rng* rng, EmbedTrace* trace) {
  const auto profile = data::item_profile(train, j);
  if (const auto* c = std::get_if<CoBraRModel>(&m)) {
    return embed_path(c->f_t, c->g, profile, mode, rng, trace);
  }
  const auto& d = std::get<DeepMFModel>(m);
  return embed_path(d.f_t, d.g_item, profile, mode, rng, trace);
}

void user_embed_backward(const Model& m, const EmbedTrace& trace,
                         std::span<const double> grad_embedding, ModelGrads& grads) {
  if (const auto* c = std::get_if<CoBraRModel>(&m)) {
    auto& cg = std::get<CoBraRGrads>(grads);
    embed_path_backward(c->f_u, c->g, trace, grad_embedding, cg.f_u, cg.g);
    return;
  }
  const auto& d = std::get<DeepMFModel>(m);
  auto& dg = std::get<DeepMFGrads>(grads);
  embed_path_backward(d.f_u, d.g_user, trace, grad_embedding, dg.f_u, dg.g_user);
}

void item_embed_backward(const Model& m, const EmbedTrace& trace,
                         std::span<const double> grad_embedding, ModelGrads& grads) {
  if (const auto* c = std::get_if<CoBraRModel>(&m)) {
    auto& cg = std::get<CoBraRGrads>(grads);
    embed_path_backward(c->f_t, c->g, trace, grad_embedding, cg.f_t, cg.g);
    return;
  }
  const auto& d = std::get<DeepMFModel>(m);
  auto& dg = std::get<DeepMFGrads>(grads);
  embed_path_backward(d.f_t, d.g_item, trace, grad_embedding, dg.f_t, dg.g_item);
}

double score(std::span<const double> e_i, std::span<const double> e_j) {
  return nn::cosine(e_i, e_j);
}

ParamCount param_count(std::span<const int> architecture, ModelKind kind,
                       int n_users, int n_items, int p) {
  if (architecture.empty()) {
    throw std::runtime_error("architecture needs at least one layer size");
  }
  ParamCount pc;
  for (std::size_t i = 0; i + 1 < architecture.size(); ++i) {
    pc.branch_params += static_cast<std::int64_t>(architecture[i]) *
                        architecture[i + 1];
  }
  if (kind == ModelKind::deepmf) pc.branch_params *= 2;
  pc.downproj_params = static_cast<std::int64_t>(n_items) * p +
                       static_cast<std::int64_t>(n_users) * p;
  pc.total = pc.branch_params + pc.downproj_params;
  return pc;
}

}  // namespace cobrar::models
