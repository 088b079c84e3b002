#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mspn/gradcheck.hpp"
#include "mspn/layers.hpp"
#include "mspn/rng.hpp"

using namespace mspn;

namespace {

FeatureMapStack<double> random_stack(Rng& rng, int n, int h, int w) {
  FeatureMapStack<double> s(n, h, w);
  for (double& v : s.data) v = rng.uniform(-1.0, 1.0);
  return s;
}

}  // namespace

TEST_CASE("conv output height follows h + 2*pad - k + 1") {
  ConvLayer<double> layer(1, 2, 3, 3, 0, 0);
  Rng rng(1);
  layer.init(rng);
  auto out = conv_forward(layer, random_stack(rng, 1, 32, 40));
  CHECK(out.h == 30);
  CHECK(out.w == 38);
  CHECK(out.n_map == 2);
  CHECK(out.all_finite());
}

TEST_CASE("1x1 identity kernel reproduces the input") {
  ConvLayer<double> layer(1, 1, 1, 1, 0, 0);
  layer.weights = {1.0};
  layer.bias = {0.0};
  Rng rng(2);
  auto in = random_stack(rng, 1, 4, 7);
  auto out = conv_forward(layer, in);
  CHECK(out.data == in.data);
}

TEST_CASE("zero weights give a constant bias map") {
  ConvLayer<double> layer(2, 3, 3, 3, 1, 1);
  layer.bias = {0.5, -1.0, 2.0};
  Rng rng(3);
  auto out = conv_forward(layer, random_stack(rng, 2, 5, 6));
  for (int m = 0; m < 3; ++m)
    for (int r = 0; r < out.h; ++r)
      for (int c = 0; c < out.w; ++c) CHECK(out.at(m, r, c) == layer.bias[m]);
}

TEST_CASE("too-narrow input raises MinWidthError naming the minimum") {
  ConvLayer<double> layer(1, 1, 3, 3, 0, 0);
  Rng rng(4);
  layer.init(rng);
  FeatureMapStack<double> in(1, 5, 2, 0.0);
  try {
    conv_forward(layer, in);
    FAIL("expected MinWidthError");
  } catch (const MinWidthError& e) {
    CHECK(e.min_width == 3);
    CHECK(e.width == 2);
  }
}

TEST_CASE("conv gradcheck on a 2-map 5x6 input") {
  Rng rng(5);
  ConvLayer<double> layer(2, 3, 3, 3, 1, 1);
  layer.init(rng);
  for (double& b : layer.bias) b = rng.uniform(-0.2, 0.2);
  auto in = random_stack(rng, 2, 5, 6);
  FeatureMapStack<double> probe(3, 5, 6);
  for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);

  auto analytic = conv_backward(layer, in, probe);
  auto loss = [&] {
    auto out = conv_forward(layer, in);
    double s = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += out.data[i] * probe.data[i];
    return s;
  };
  const double eps = 1e-6;
  auto fd = [&](double& coord) {
    const double saved = coord;
    coord = saved + eps;
    const double up = loss();
    coord = saved - eps;
    const double dn = loss();
    coord = saved;
    return (up - dn) / (2 * eps);
  };
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    const double n = fd(in.data[i]);
    const double a = analytic.input.data[i];
    CHECK(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}) < 1e-6);
  }
  for (std::size_t i = 0; i < layer.weights.size(); ++i) {
    const double n = fd(layer.weights[i]);
    const double a = analytic.weights[i];
    CHECK(std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}) < 1e-6);
  }
}

TEST_CASE("conv backward of zero grad is zero and bias grad sums grad_out") {
  Rng rng(6);
  ConvLayer<double> layer(1, 2, 3, 3, 1, 1);
  layer.init(rng);
  auto in = random_stack(rng, 1, 4, 5);

  FeatureMapStack<double> zero(2, 4, 5, 0.0);
  auto g0 = conv_backward(layer, in, zero);
  for (double v : g0.weights) CHECK(v == 0.0);
  for (double v : g0.bias) CHECK(v == 0.0);
  for (double v : g0.input.data) CHECK(v == 0.0);

  auto grad_out = random_stack(rng, 2, 4, 5);
  auto g = conv_backward(layer, in, grad_out);
  for (int m = 0; m < 2; ++m) {
    double s = 0;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) s += grad_out.at(m, r, c);
    CHECK(g.bias[m] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("conv on widened input matches on the overlapping columns") {
  Rng rng(7);
  for (int pad = 0; pad <= 1; ++pad) {
    ConvLayer<double> layer(2, 3, 3, 3, pad, pad);
    layer.init(rng);
    auto in = random_stack(rng, 2, 6, 10);
    FeatureMapStack<double> wide(2, 6, 20);
    for (int m = 0; m < 2; ++m)
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 20; ++c)
          wide.at(m, r, c) = c < 10 ? in.at(m, r, c) : rng.uniform(-1.0, 1.0);

    auto a = conv_forward(layer, in);
    auto b = conv_forward(layer, wide);
    CHECK(b.w == a.w + 10);
    for (int m = 0; m < 3; ++m)
      for (int r = 0; r < a.h; ++r)
        for (int c = 0; c + pad < a.w; ++c) CHECK(a.at(m, r, c) == b.at(m, r, c));
  }
}

TEST_CASE("relu clamps negatives and keeps positives") {
  FlatVector<double> x{-1, 0, 2};
  CHECK(relu_forward(x) == FlatVector<double>{0, 0, 2});
  FlatVector<double> g{5, 7, 9};
  // subgradient at exactly 0 is 0
  CHECK(relu_backward(x, g) == FlatVector<double>{0, 0, 9});
}

TEST_CASE("maxpool basics") {
  FeatureMapStack<double> in(1, 2, 2);
  in.data = {1, 2, 3, 4};
  auto r = maxpool_forward(in);
  CHECK(r.out.data == std::vector<double>{4});
  CHECK(r.argmax == std::vector<int>{3});

  // floor semantics: trailing odd row/column is dropped
  FeatureMapStack<double> odd(1, 5, 7, 1.0);
  auto ro = maxpool_forward(odd);
  CHECK(ro.out.h == 2);
  CHECK(ro.out.w == 3);

  // ties keep the lowest flat index
  FeatureMapStack<double> tie(1, 2, 2, 3.0);
  CHECK(maxpool_forward(tie).argmax == std::vector<int>{0});
}

TEST_CASE("maxpool of conv of a constant image is constant") {
  ConvLayer<double> layer(1, 2, 3, 3, 1, 1);
  Rng rng(8);
  layer.init(rng);
  FeatureMapStack<double> in(1, 8, 12, 0.7);
  auto pooled = maxpool_forward(conv_forward(layer, in)).out;
  for (int m = 0; m < 2; ++m) {
    // interior cells share one value; border cells see zero padding
    const double v = pooled.at(m, 1, 1);
    for (int r = 1; r + 1 < pooled.h; ++r)
      for (int c = 1; c + 1 < pooled.w; ++c)
        CHECK(pooled.at(m, r, c) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("fc dimension mismatch is a contract violation") {
  FullyConnectedLayer<double> layer(4, 3);
  CHECK_THROWS_AS(fc_forward(layer, FlatVector<double>{1, 2, 3}), ContractViolation);
}

TEST_CASE("softmax of equal logits is uniform with loss ln 10") {
  FlatVector<double> logits(10, 1.5);
  auto r = softmax_xent_forward(logits, 3);
  for (double p : r.probs) CHECK(p == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("softmax stays finite for huge logits") {
  FlatVector<double> logits(10, 0.0);
  logits[0] = 1000.0;
  auto r = softmax_xent_forward(logits, 0);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r.probs[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("softmax probabilities sum to one across magnitudes") {
  Rng rng(9);
  for (double mag : {1.0, 10.0, 100.0, 1e4}) {
    for (int t = 0; t < 20; ++t) {
      FlatVector<double> logits(10);
      for (double& v : logits) v = rng.uniform(-mag, mag);
      auto r = softmax_xent_forward(logits, rng.uniform_int(0, 9));
      double s = 0;
      for (double p : r.probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax rejects out-of-range labels") {
  FlatVector<double> logits(10, 0.0);
  CHECK_THROWS_AS(softmax_xent_forward(logits, 10), ContractViolation);
  CHECK_THROWS_AS(softmax_xent_forward(logits, -1), ContractViolation);
}

TEST_CASE("softmax-xent gradient matches finite differences tightly") {
  Rng rng(10);
  const double eps = 1e-5;
  for (int t = 0; t < 20; ++t) {
    FlatVector<double> logits(10);
    for (double& v : logits) v = rng.uniform(-2.0, 2.0);
    const int label = rng.uniform_int(0, 9);
    auto fwd = softmax_xent_forward(logits, label);
    auto analytic = softmax_xent_backward(fwd.probs, label);
    for (int i = 0; i < 10; ++i) {
      const double saved = logits[i];
      logits[i] = saved + eps;
      const double up = softmax_xent_forward(logits, label).loss;
      logits[i] = saved - eps;
      const double dn = softmax_xent_forward(logits, label).loss;
      logits[i] = saved;
      const double numeric = (up - dn) / (2 * eps);
      CHECK(std::abs(analytic[i] - numeric) < 1e-8);
    }
  }
}

TEST_CASE("randomized gradcheck passes for every layer kind") {
  for (const auto& r : run_gradcheck(20, 424242)) {
    INFO(r.kind, " max rel err ", r.max_rel_err);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-4);
  }
}
