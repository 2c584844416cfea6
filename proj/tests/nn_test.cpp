#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "docfuse/error.hpp"
#include "docfuse/nn.hpp"
#include "doctest.h"

using namespace docfuse;
using nn::Matrix;
using nn::Vec;

namespace {

// Independent triple-loop oracle for act(Wx + b).
Vec naive_dense(const Matrix& w, const Vec& b, const Vec& x, nn::Activation act) {
  Vec y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    long double acc = b[r];
    for (std::size_t c = 0; c < w.cols(); ++c)
      acc += static_cast<long double>(w(r, c)) * x[c];
    y[r] = act == nn::Activation::tanh ? std::tanh(static_cast<double>(acc))
                                       : static_cast<double>(acc);
  }
  return y;
}

nn::DenseLayer random_layer(std::size_t in, std::size_t out, nn::Activation act,
                            std::uint64_t seed) {
  nn::DenseLayer layer(in, out, act);
  Rng rng(seed);
  nn::init_dense(layer, rng);
  for (double& b : layer.bias) b = uniform_range(rng, -0.5, 0.5);
  return layer;
}

}  // namespace

TEST_CASE("forward: identity activation with identity weights is the identity") {
  nn::DenseLayer layer(3, 3, nn::Activation::identity);
  for (std::size_t i = 0; i < 3; ++i) layer.weight(i, i) = 1.0;
  const Vec x{0.3, -1.2, 2.5};
  const Vec y = nn::forward(layer, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("forward: tanh of a zero pre-activation is the zero vector") {
  nn::DenseLayer layer(4, 2, nn::Activation::tanh);
  const Vec y = nn::forward(layer, Vec{1.0, -2.0, 0.5, 3.0});
  for (const double v : y) CHECK(v == 0.0);
}

TEST_CASE("forward matches the naive matrix-multiply oracle") {
  for (const auto act : {nn::Activation::identity, nn::Activation::tanh}) {
    const nn::DenseLayer layer = random_layer(4, 3, act, 99);
    Rng rng(5);
    Vec x(4);
    for (double& v : x) v = uniform_range(rng, -2.0, 2.0);
    const Vec got = nn::forward(layer, x);
    const Vec want = naive_dense(layer.weight, layer.bias, x, act);
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("forward rejects shape mismatches") {
  nn::DenseLayer layer(3, 2, nn::Activation::identity);
  CHECK_THROWS_AS(nn::forward(layer, Vec{1.0, 2.0}), Error);
}

TEST_CASE("backward: zero upstream gradient produces zero gradients") {
  const nn::DenseLayer layer = random_layer(3, 2, nn::Activation::tanh, 7);
  nn::LayerCache cache;
  nn::forward(layer, Vec{0.1, 0.2, 0.3}, &cache);
  nn::LayerGrads grads{Matrix(2, 3), Vec(2, 0.0)};
  const Vec gx = nn::backward(layer, cache, Vec{0.0, 0.0}, grads);
  for (const double v : gx) CHECK(v == 0.0);
  for (std::size_t i = 0; i < grads.weight.size(); ++i) CHECK(grads.weight.data()[i] == 0.0);
  for (const double v : grads.bias) CHECK(v == 0.0);
}

TEST_CASE("backward: identity layer passes W^T g to the input") {
  const nn::DenseLayer layer = random_layer(3, 2, nn::Activation::identity, 13);
  nn::LayerCache cache;
  nn::forward(layer, Vec{0.4, -0.1, 0.9}, &cache);
  const Vec g{0.7, -0.3};
  nn::LayerGrads grads{Matrix(2, 3), Vec(2, 0.0)};
  const Vec gx = nn::backward(layer, cache, g, grads);
  const Vec want = nn::matvec_t(layer.weight, g);
  for (std::size_t i = 0; i < gx.size(); ++i) CHECK(gx[i] == doctest::Approx(want[i]));
}

TEST_CASE("backward matches central finite differences") {
  for (const auto act : {nn::Activation::identity, nn::Activation::tanh}) {
    nn::DenseLayer layer = random_layer(5, 4, act, 21);
    Rng rng(3);
    Vec x(5), upstream(4);
    for (double& v : x) v = uniform_range(rng, -1.0, 1.0);
    for (double& v : upstream) v = uniform_range(rng, -1.0, 1.0);

    nn::LayerCache cache;
    nn::forward(layer, x, &cache);
    nn::LayerGrads grads{Matrix(4, 5), Vec(4, 0.0)};
    Vec gx = nn::backward(layer, cache, upstream, grads);

    // Scalar surrogate loss: sum(upstream .* forward(x)).
    Vec x_mut = x;
    const auto loss = [&]() {
      const Vec y = nn::forward(layer, x_mut);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += upstream[i] * y[i];
      return acc;
    };
    std::vector<nn::ParamBlock> params{
        {"weight", layer.weight.data(), layer.weight.size()},
        {"bias", layer.bias.data(), layer.bias.size()},
        {"input", x_mut.data(), x_mut.size()},
    };
    std::vector<nn::ParamBlock> analytic{
        {"weight", grads.weight.data(), grads.weight.size()},
        {"bias", grads.bias.data(), grads.bias.size()},
        {"input", gx.data(), gx.size()},
    };
    const auto report = nn::grad_check(loss, params, analytic, 1e-5, 1e-6);
    CHECK(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("adam: zero gradients leave parameters unchanged and advance t") {
  Vec params{1.0, -2.0, 0.5};
  Vec grads{0.0, 0.0, 0.0};
  std::vector<nn::ParamBlock> pb{{"p", params.data(), params.size()}};
  std::vector<nn::ParamBlock> gb{{"p", grads.data(), grads.size()}};
  nn::AdamState adam(pb, {});
  adam.step(pb, gb);
  CHECK(adam.step_count() == 1);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == -2.0);
  CHECK(params[2] == 0.5);
}

TEST_CASE("adam: bias-corrected first step moves by about -lr") {
  Vec params{0.0};
  Vec grads{1.0};
  std::vector<nn::ParamBlock> pb{{"p", params.data(), 1}};
  std::vector<nn::ParamBlock> gb{{"p", grads.data(), 1}};
  nn::AdamConfig cfg;
  cfg.lr = 0.001;
  cfg.epsilon = 1e-8;
  nn::AdamState adam(pb, cfg);
  adam.step(pb, gb);
  CHECK(std::abs(params[0] - (-0.001)) < 1e-6);
}

TEST_CASE("adam: identical states give identical results") {
  auto run = [] {
    Vec params{0.3, -0.7};
    Vec grads{0.11, -0.42};
    std::vector<nn::ParamBlock> pb{{"p", params.data(), 2}};
    std::vector<nn::ParamBlock> gb{{"p", grads.data(), 2}};
    nn::AdamState adam(pb, {});
    for (int i = 0; i < 5; ++i) adam.step(pb, gb);
    return params;
  };
  const Vec a = run();
  const Vec b = run();
  CHECK(a == b);
}

TEST_CASE("adam: non-finite gradient names the parameter block") {
  Vec params{0.0};
  Vec grads{std::numeric_limits<double>::infinity()};
  std::vector<nn::ParamBlock> pb{{"topic.weight", params.data(), 1}};
  std::vector<nn::ParamBlock> gb{{"topic.weight", grads.data(), 1}};
  nn::AdamState adam(pb, {});
  CHECK_THROWS_WITH_AS(adam.step(pb, gb), doctest::Contains("topic.weight"), Error);
}

TEST_CASE("softmax of equal logits is uniform") {
  const Vec p = nn::softmax(Vec{0.0, 0.0});
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(p[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax is invariant to constant shifts") {
  Rng rng(17);
  Vec v(6);
  for (double& x : v) x = uniform_range(rng, -3.0, 3.0);
  const Vec a = nn::softmax(v);
  for (double& x : v) x += 123.456;
  const Vec b = nn::softmax(v);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("softmax stays a distribution for extreme magnitudes") {
  for (const double scale : {1e4, -1e4}) {
    Vec v{scale, 0.0, -scale, scale / 2};
    const Vec p = nn::softmax(v);
    double sum = 0.0;
    for (const double x : p) {
      CHECK(x >= 0.0);
      CHECK(std::isfinite(x));
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("sigmoid(0) is one half") {
  CHECK(nn::sigmoid(0.0) == 0.5);
  CHECK(nn::sigmoid(40.0) == doctest::Approx(1.0));
  CHECK(nn::sigmoid(-40.0) == doctest::Approx(0.0));
}

TEST_CASE("grad_check accepts the analytic gradient of a quadratic") {
  Rng rng(29);
  Vec x(8);
  for (double& v : x) v = uniform_range(rng, -2.0, 2.0);
  Vec analytic = x;  // d/dx of 0.5*|x|^2
  const auto loss = [&]() {
    double acc = 0.0;
    for (const double v : x) acc += 0.5 * v * v;
    return acc;
  };
  std::vector<nn::ParamBlock> pb{{"x", x.data(), x.size()}};
  std::vector<nn::ParamBlock> gb{{"x", analytic.data(), analytic.size()}};
  const auto report = nn::grad_check(loss, pb, gb, 1e-5, 1e-8);
  CHECK(report.max_rel_err < 1e-8);
  CHECK(report.passed);
}

TEST_CASE("grad_check with a coarse step flags curvature") {
  // Quartic at x=1: the analytic derivative is 4, but h=0.1 central
  // differences see 4 + 4h^2.
  Vec x{1.0};
  Vec analytic{4.0};
  const auto loss = [&]() { return x[0] * x[0] * x[0] * x[0]; };
  std::vector<nn::ParamBlock> pb{{"x", x.data(), 1}};
  std::vector<nn::ParamBlock> gb{{"x", analytic.data(), 1}};
  const auto report = nn::grad_check(loss, pb, gb, 0.1, 1e-4);
  CHECK(report.max_rel_err > 1e-4);
  CHECK(!report.passed);
}

TEST_CASE("dropout: rate zero is the identity mask") {
  Rng rng(1);
  const Vec mask = nn::dropout_mask(16, 0.0, rng);
  for (const double v : mask) CHECK(v == 1.0);
}

TEST_CASE("dropout: inverted scaling preserves the mean within 2 percent") {
  Rng rng(123);
  const double rate = 0.1;
  const std::size_t samples = 100000;
  double sum = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Vec mask = nn::dropout_mask(1, rate, rng);
    CHECK((mask[0] == 0.0 || mask[0] == doctest::Approx(1.0 / 0.9)));
    sum += mask[0];
  }
  CHECK(std::abs(sum / static_cast<double>(samples) - 1.0) < 0.02);
}
