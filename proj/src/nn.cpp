#include "docfuse/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "docfuse/error.hpp"

namespace docfuse::nn {

Vec matvec(const Matrix& m, const Vec& x) {
  if (x.size() != m.cols()) throw Error("matvec: shape mismatch");
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

Vec matvec_t(const Matrix& m, const Vec& x) {
  if (x.size() != m.rows()) throw Error("matvec_t: shape mismatch");
  Vec y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

void add_outer(Matrix& acc, const Vec& a, const Vec& b, double scale) {
  if (acc.rows() != a.size() || acc.cols() != b.size())
    throw Error("add_outer: shape mismatch");
  for (std::size_t r = 0; r < a.size(); ++r) {
    double* row = acc.row(r);
    const double ar = scale * a[r];
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += ar * b[c];
  }
}

Vec forward(const DenseLayer& layer, const Vec& input, LayerCache* cache) {
  if (input.size() != layer.in_dim()) throw Error("dense forward: shape mismatch");
  Vec out = matvec(layer.weight, input);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += layer.bias[i];
  if (layer.activation == Activation::tanh) {
    for (double& v : out) v = std::tanh(v);
  }
  if (cache) {
    cache->input = input;
    cache->output = out;
  }
  return out;
}

Vec backward(const DenseLayer& layer, const LayerCache& cache, const Vec& upstream,
             LayerGrads& grads) {
  if (upstream.size() != layer.out_dim()) throw Error("dense backward: shape mismatch");
  Vec g_pre = upstream;
  if (layer.activation == Activation::tanh) {
    for (std::size_t i = 0; i < g_pre.size(); ++i) {
      const double y = cache.output[i];
      g_pre[i] *= 1.0 - y * y;
    }
  }
  if (grads.weight.rows() != layer.out_dim() || grads.weight.cols() != layer.in_dim())
    throw Error("dense backward: gradient shape mismatch");
  add_outer(grads.weight, g_pre, cache.input);
  for (std::size_t i = 0; i < g_pre.size(); ++i) grads.bias[i] += g_pre[i];
  return matvec_t(layer.weight, g_pre);
}

AdamState::AdamState(const std::vector<ParamBlock>& params, const AdamConfig& cfg)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.size, 0.0);
    v_.emplace_back(p.size, 0.0);
  }
}

void AdamState::step(const std::vector<ParamBlock>& params,
                     const std::vector<ParamBlock>& grads) {
  if (params.size() != m_.size() || grads.size() != params.size())
    throw Error("adam: block count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size != m_[b].size() || grads[b].size != params[b].size)
      throw Error("adam: block size mismatch for " + params[b].name);
    double* p = params[b].values;
    const double* g = grads[b].values;
    Vec& m = m_[b];
    Vec& v = v_[b];
    for (std::size_t i = 0; i < params[b].size; ++i) {
      if (!std::isfinite(g[i]))
        throw Error("adam: non-finite gradient in block " + params[b].name);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

Vec softmax(const Vec& logits) {
  Vec out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vec dropout_mask(std::size_t n, double rate, Rng& rng) {
  Vec mask(n, 1.0);
  if (rate <= 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = uniform01(rng) < rate ? 0.0 : keep;
  }
  return mask;
}

void init_glorot(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = uniform_range(rng, -a, a);
}

void init_dense(DenseLayer& layer, Rng& rng) {
  init_glorot(layer.weight, layer.in_dim(), layer.out_dim(), rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::vector<ParamBlock>& params,
                           const std::vector<ParamBlock>& analytic, double h,
                           double tolerance) {
  if (params.size() != analytic.size()) throw Error("grad_check: block count mismatch");
  GradCheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size != analytic[b].size)
      throw Error("grad_check: block size mismatch for " + params[b].name);
    double* p = params[b].values;
    for (std::size_t i = 0; i < params[b].size; ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = loss();
      p[i] = saved - h;
      const double down = loss();
      p[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic[b].values[i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      const double rel = std::abs(fd - an) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_block = params[b].name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

}  // namespace docfuse::nn
