#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cobrar/rng.hpp"

namespace cobrar::nn {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec a;

  static Matrix zeros(int r, int c) {
    Matrix m;
    m.rows = r;
    m.cols = c;
    m.a.assign(static_cast<std::size_t>(r) * c, 0.0);
    return m;
  }
  double* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return a.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return a[static_cast<std::size_t>(r) * cols + c];
  }
};

struct LinearLayer {
  Matrix w;  // d_in x d_out
  Vec b;     // d_out

  int d_in() const { return w.rows; }
  int d_out() const { return w.cols; }
};

struct LinearGrads {
  Matrix dw;
  Vec db;

  static LinearGrads zeros_like(const LinearLayer& l) {
    return LinearGrads{Matrix::zeros(l.d_in(), l.d_out()),
                       Vec(static_cast<std::size_t>(l.d_out()), 0.0)};
  }
};

// Glorot-uniform weights (bounds +-sqrt(6/(d_in+d_out))), zero biases.
LinearLayer glorot_linear(int d_in, int d_out, Rng& rng);

// y = W^T x + b
void linear_forward(const LinearLayer& l, std::span<const double> x, double* y);
// Same with a sparse binary input given by its nonzero indices.
void linear_forward_sparse(const LinearLayer& l, std::span<const int> nonzeros,
                           double* y);
// Accumulates dW += outer(x, gy), db += gy; writes grad_in if non-null.
void linear_backward(const LinearLayer& l, std::span<const double> x,
                     std::span<const double> gy, LinearGrads& acc,
                     double* grad_in);
void linear_backward_sparse(const LinearLayer& l, std::span<const int> nonzeros,
                            std::span<const double> gy, LinearGrads& acc);

enum class Mode { train, eval };

// Feed-forward stack mapping d_1 -> ... -> d_L with one weight layer per
// consecutive dimension pair. In train mode, dropout masks each layer's
// input; ReLU follows every layer except the last, so embeddings keep
// negative coordinates. An empty stack (L = 1 architecture) is the identity.
struct Branch {
  std::vector<LinearLayer> layers;
  double dropout_rate = 0.0;

  int d_in() const { return layers.empty() ? 0 : layers.front().d_in(); }
  int d_out() const { return layers.empty() ? 0 : layers.back().d_out(); }
};

// dims = [d_1 ... d_L]; creates L-1 Glorot layers.
Branch make_branch(std::span<const int> dims, double dropout_rate, Rng& rng);

struct BranchGrads {
  std::vector<LinearGrads> layers;

  static BranchGrads zeros_like(const Branch& b);
  void add(const BranchGrads& other);
};

// Forward activations and dropout masks for one branch_forward call, replayed
// exactly by branch_backward. One tape per call; not reusable across batches.
struct Tape {
  struct LayerRec {
    Vec input;   // layer input after dropout
    Vec mask;    // empty when no dropout was applied
    Vec preact;  // layer output before activation
  };
  std::vector<LayerRec> recs;
  bool train = false;
};

// rng/tape are required in train mode (when dropout_rate > 0, masks are
// Bernoulli(1 - rate) scaled by 1/(1 - rate)); in eval mode dropout is the
// identity and both may be null.
Vec branch_forward(const Branch& b, std::span<const double> x, Mode mode,
                   Rng* rng, Tape* tape);

// Analytic gradients of branch_forward; accumulates into `acc`, returns
// grad wrt the branch input.
Vec branch_backward(const Branch& b, const Tape& tape,
                    std::span<const double> grad_out, BranchGrads& acc);

inline constexpr double kNormEps = 1e-12;

// u.v / (max(|u|, eps) * max(|v|, eps)); zero vectors score 0.
double cosine(std::span<const double> u, std::span<const double> v);
void cosine_backward(std::span<const double> u, std::span<const double> v,
                     double grad_out, double* grad_u, double* grad_v);

// A named view over one parameter tensor and its gradient accumulator.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<Vec> first_moment;   // parallel to the ParamRef order
  std::vector<Vec> second_moment;

  static AdamState for_params(const std::vector<ParamRef>& params);
};

// Coupled-L2 Adam: effective gradient = grad + l2_weight * param, then the
// standard bias-corrected update. Throws on non-finite gradients, naming the
// offending parameter.
void adam_step(std::vector<ParamRef>& params, AdamState& state, double lr,
               double l2_weight);

}  // namespace cobrar::nn
