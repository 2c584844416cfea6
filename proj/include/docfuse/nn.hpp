#pragma once

// Minimal dense-network engine: row-major matrices, dense layers with
// analytic backprop, Adam, and a central-difference gradient checker.
// Everything is 64-bit; the corpora this library targets are small and
// doubles keep the gradient checks tight.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "docfuse/rng.hpp"

namespace docfuse::nn {

using Vec = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  Vec data_;
};

// y = M x         (M: rows x cols, x: cols, y: rows)
Vec matvec(const Matrix& m, const Vec& x);
// y = M^T x       (x: rows, y: cols)
Vec matvec_t(const Matrix& m, const Vec& x);
// acc += scale * a b^T   (acc: |a| x |b|)
void add_outer(Matrix& acc, const Vec& a, const Vec& b, double scale = 1.0);

enum class Activation { identity, tanh };

struct DenseLayer {
  Matrix weight;  // out x in
  Vec bias;       // out
  Activation activation = Activation::identity;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act)
      : weight(out, in), bias(out, 0.0), activation(act) {}

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

struct LayerCache {
  Vec input;
  Vec output;
};

// output = act(W x + b); fills `cache` for backward when given.
Vec forward(const DenseLayer& layer, const Vec& input, LayerCache* cache = nullptr);

struct LayerGrads {
  Matrix weight;
  Vec bias;
};

// Accumulates parameter gradients into `grads` and returns the gradient
// w.r.t. the layer input. tanh backward uses (1 - y^2) on the cached output.
Vec backward(const DenseLayer& layer, const LayerCache& cache, const Vec& upstream,
             LayerGrads& grads);

// A named view over one parameter (or gradient) tensor.
struct ParamBlock {
  std::string name;
  double* values = nullptr;
  std::size_t size = 0;
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction (Kingma & Ba, 2014). One state covers a list of
// parameter blocks; step() must see the same block layout every call.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const std::vector<ParamBlock>& params, const AdamConfig& cfg);

  void step(const std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads);

  long long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Vec>& first_moments() const { return m_; }
  const std::vector<Vec>& second_moments() const { return v_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Vec> m_, v_;
};

// Max-subtracted softmax; output sums to 1 for any finite input.
Vec softmax(const Vec& logits);
double sigmoid(double x);

// Inverted-scaling dropout: entries are 0 with probability `rate`, otherwise
// 1/(1-rate). Rate 0 is the identity and draws nothing from the rng.
Vec dropout_mask(std::size_t n, double rate, Rng& rng);

// Uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)).
void init_glorot(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// Glorot weight, zero bias.
void init_dense(DenseLayer& layer, Rng& rng);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_block;
  std::size_t worst_index = 0;
  bool passed = false;
};

// Central finite differences of `loss` against `analytic`, coordinate by
// coordinate. Relative error uses max(1, |fd|, |analytic|) as denominator so
// near-zero gradients are compared absolutely.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<ParamBlock>& params,
                           const std::vector<ParamBlock>& analytic, double h = 1e-5,
                           double tolerance = 1e-6);

}  // namespace docfuse::nn
