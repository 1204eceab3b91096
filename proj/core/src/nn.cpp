#include "cobrar/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "cobrar/strings.hpp"

namespace cobrar::nn {

LinearLayer glorot_linear(int d_in, int d_out, Rng& rng) {
  if (d_in < 1 || d_out < 1) {
    throw std::runtime_error(strf("invalid layer shape %d x %d", d_in, d_out));
  }
  LinearLayer l;
  l.w = Matrix::zeros(d_in, d_out);
  l.b.assign(static_cast<std::size_t>(d_out), 0.0);
  const double bound = std::sqrt(6.0 / (d_in + d_out));
  for (auto& w : l.w.a) w = rng.uniform(-bound, bound);
  return l;
}

void linear_forward(const LinearLayer& l, std::span<const double> x, double* y) {
  if (static_cast<int>(x.size()) != l.d_in()) {
    throw std::runtime_error(strf("linear_forward: input size %zu != d_in %d",
                                  x.size(), l.d_in()));
  }
  const int d_out = l.d_out();
  for (int j = 0; j < d_out; ++j) y[j] = l.b[j];
  for (int i = 0; i < l.d_in(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* wr = l.w.row(i);
    for (int j = 0; j < d_out; ++j) y[j] += xi * wr[j];
  }
}

void linear_forward_sparse(const LinearLayer& l, std::span<const int> nonzeros,
                           double* y) {
  const int d_out = l.d_out();
  for (int j = 0; j < d_out; ++j) y[j] = l.b[j];
  for (const int i : nonzeros) {
    if (i < 0 || i >= l.d_in()) {
      throw std::runtime_error(strf("sparse index %d out of range [0, %d)", i,
                                    l.d_in()));
    }
    const double* wr = l.w.row(i);
    for (int j = 0; j < d_out; ++j) y[j] += wr[j];
  }
}

void linear_backward(const LinearLayer& l, std::span<const double> x,
                     std::span<const double> gy, LinearGrads& acc,
                     double* grad_in) {
  const int d_out = l.d_out();
  for (int i = 0; i < l.d_in(); ++i) {
    const double xi = x[i];
    double* dwr = acc.dw.row(i);
    const double* wr = l.w.row(i);
    double gi = 0.0;
    for (int j = 0; j < d_out; ++j) {
      dwr[j] += xi * gy[j];
      gi += wr[j] * gy[j];
    }
    if (grad_in != nullptr) grad_in[i] = gi;
  }
  for (int j = 0; j < d_out; ++j) acc.db[j] += gy[j];
}

void linear_backward_sparse(const LinearLayer& l, std::span<const int> nonzeros,
                            std::span<const double> gy, LinearGrads& acc) {
  const int d_out = l.d_out();
  for (const int i : nonzeros) {
    double* dwr = acc.dw.row(i);
    for (int j = 0; j < d_out; ++j) dwr[j] += gy[j];
  }
  for (int j = 0; j < d_out; ++j) acc.db[j] += gy[j];
}

Branch make_branch(std::span<const int> dims, double dropout_rate, Rng& rng) {
  if (dims.empty()) {
    throw std::runtime_error("branch needs at least one dimension");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::runtime_error(strf("dropout rate %g outside [0, 1)", dropout_rate));
  }
  Branch b;
  b.dropout_rate = dropout_rate;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    b.layers.push_back(glorot_linear(dims[i], dims[i + 1], rng));
  }
  return b;
}

BranchGrads BranchGrads::zeros_like(const Branch& b) {
  BranchGrads g;
  g.layers.reserve(b.layers.size());
  for (const auto& l : b.layers) g.layers.push_back(LinearGrads::zeros_like(l));
  return g;
}

void BranchGrads::add(const BranchGrads& other) {
  if (other.layers.size() != layers.size()) {
    throw std::runtime_error("branch gradient shapes differ");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& dst = layers[l];
    const auto& src = other.layers[l];
    for (std::size_t i = 0; i < dst.dw.a.size(); ++i) dst.dw.a[i] += src.dw.a[i];
    for (std::size_t i = 0; i < dst.db.size(); ++i) dst.db[i] += src.db[i];
  }
}

Vec branch_forward(const Branch& b, std::span<const double> x, Mode mode,
                   Rng* rng, Tape* tape) {
  const bool train = mode == Mode::train;
  if (train && tape == nullptr) {
    throw std::runtime_error("train-mode forward requires a tape");
  }
  if (tape != nullptr) {
    tape->recs.clear();
    tape->train = train;
  }
  Vec cur(x.begin(), x.end());
  const bool use_dropout = train && b.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) {
    throw std::runtime_error("dropout requires a generator in train mode");
  }
  const double keep = 1.0 - b.dropout_rate;

  for (std::size_t l = 0; l < b.layers.size(); ++l) {
    const auto& layer = b.layers[l];
    if (static_cast<int>(cur.size()) != layer.d_in()) {
      throw std::runtime_error(strf("branch layer %zu: input size %zu != %d", l,
                                    cur.size(), layer.d_in()));
    }
    Tape::LayerRec rec;
    if (use_dropout) {
      rec.mask.resize(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        rec.mask[i] = rng->uniform_real() < keep ? 1.0 / keep : 0.0;
        cur[i] *= rec.mask[i];
      }
    }
    Vec z(static_cast<std::size_t>(layer.d_out()));
    linear_forward(layer, cur, z.data());
    if (tape != nullptr) {
      rec.input = std::move(cur);
      rec.preact = z;
      tape->recs.push_back(std::move(rec));
    }
    cur = std::move(z);
    if (l + 1 < b.layers.size()) {
      for (auto& v : cur) v = v > 0.0 ? v : 0.0;
    }
  }
  return cur;
}

Vec branch_backward(const Branch& b, const Tape& tape,
                    std::span<const double> grad_out, BranchGrads& acc) {
  if (!tape.train || tape.recs.size() != b.layers.size()) {
    throw std::runtime_error("branch_backward requires a train-mode tape from a matching forward");
  }
  if (acc.layers.size() != b.layers.size()) {
    throw std::runtime_error("gradient accumulator shape mismatch");
  }
  Vec g(grad_out.begin(), grad_out.end());
  for (std::size_t l = b.layers.size(); l-- > 0;) {
    const auto& layer = b.layers[l];
    const auto& rec = tape.recs[l];
    if (static_cast<int>(g.size()) != layer.d_out()) {
      throw std::runtime_error(strf("branch layer %zu: grad size %zu != %d", l,
                                    g.size(), layer.d_out()));
    }
    if (l + 1 < b.layers.size()) {
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (rec.preact[j] <= 0.0) g[j] = 0.0;
      }
    }
    Vec gin(static_cast<std::size_t>(layer.d_in()));
    linear_backward(layer, rec.input, g, acc.layers[l], gin.data());
    if (!rec.mask.empty()) {
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= rec.mask[i];
    }
    g = std::move(gin);
  }
  return g;
}

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

}  // namespace

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw std::runtime_error(strf("cosine: dimension mismatch %zu vs %zu",
                                  u.size(), v.size()));
  }
  const double nu = std::max(std::sqrt(dot(u, u)), kNormEps);
  const double nv = std::max(std::sqrt(dot(v, v)), kNormEps);
  return dot(u, v) / (nu * nv);
}

void cosine_backward(std::span<const double> u, std::span<const double> v,
                     double grad_out, double* grad_u, double* grad_v) {
  if (u.size() != v.size()) {
    throw std::runtime_error(strf("cosine_backward: dimension mismatch %zu vs %zu",
                                  u.size(), v.size()));
  }
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu <= kNormEps || nv <= kNormEps) {
    // Degenerate input; the clamped score is constant 0 around it.
    for (std::size_t i = 0; i < u.size(); ++i) {
      grad_u[i] = 0.0;
      grad_v[i] = 0.0;
    }
    return;
  }
  const double uv = dot(u, v);
  const double inv = 1.0 / (nu * nv);
  const double cu = uv / (nu * nu);
  const double cv = uv / (nv * nv);
  for (std::size_t i = 0; i < u.size(); ++i) {
    grad_u[i] = grad_out * inv * (v[i] - cu * u[i]);
    grad_v[i] = grad_out * inv * (u[i] - cv * v[i]);
  }
}

AdamState AdamState::for_params(const std::vector<ParamRef>& params) {
  AdamState s;
  s.first_moment.reserve(params.size());
  s.second_moment.reserve(params.size());
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.value.size(), 0.0);
    s.second_moment.emplace_back(p.value.size(), 0.0);
  }
  return s;
}

void adam_step(std::vector<ParamRef>& params, AdamState& state, double lr,
               double l2_weight) {
  if (state.first_moment.size() != params.size()) {
    throw std::runtime_error("Adam state does not match parameter list");
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value;
    const auto& grad = params[p].grad;
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != value.size() || grad.size() != value.size()) {
      throw std::runtime_error("Adam moment shape mismatch for " + params[p].name);
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] + l2_weight * value[i];
      if (!std::isfinite(g)) {
        throw std::runtime_error(strf("non-finite gradient in %s[%zu]",
                                      params[p].name.c_str(), i));
      }
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace cobrar::nn
