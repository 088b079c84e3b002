#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mspn/graph.hpp"
#include "mspn/layers.hpp"
#include "mspn/rng.hpp"
#include "mspn/tensor.hpp"

// Central-difference validation of every backward pass, at 64-bit precision.
// Inputs for max-based layers are nudged so no competing cells sit within the
// finite-difference step of each other; ties are measure-zero anyway, this
// just keeps randomized trials stable.

namespace mspn {

struct GradCheckResult {
  std::string kind;
  int trials = 0;
  double max_rel_err = 0;
  bool pass = false;
};

namespace gc_detail {

inline constexpr double kEps = 1e-5;

inline double rel_err(double analytic, double numeric) {
  const double d = std::abs(analytic - numeric);
  return d / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline FeatureMapStack<double> random_stack(Rng& rng, int n, int h, int w) {
  FeatureMapStack<double> s(n, h, w);
  for (double& v : s.data) v = rng.uniform(-1.0, 1.0);
  return s;
}

inline FlatVector<double> random_vec(Rng& rng, int n, double lo = -1.0, double hi = 1.0) {
  FlatVector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Keeps each row's top two values at least min_gap apart.
inline void separate_rows(FeatureMapStack<double>& s, double min_gap = 1e-3) {
  for (int m = 0; m < s.n_map; ++m)
    for (int r = 0; r < s.h; ++r) {
      double* row = s.row(m, r);
      int arg = 0;
      for (int c = 1; c < s.w; ++c)
        if (row[c] > row[arg]) arg = c;
      double second = -1e300;
      for (int c = 0; c < s.w; ++c)
        if (c != arg) second = std::max(second, row[c]);
      if (s.w > 1 && row[arg] - second < min_gap) row[arg] += 2 * min_gap;
    }
}

// Keeps each 2x2 pooling window's top two values separated. Windows are
// disjoint, so per-window bumps cannot interact.
inline void separate_windows(FeatureMapStack<double>& s, double min_gap = 1e-3) {
  for (int m = 0; m < s.n_map; ++m)
    for (int y = 0; y + 1 < s.h; y += 2)
      for (int x = 0; x + 1 < s.w; x += 2) {
        double* cells[4] = {&s.at(m, y, x), &s.at(m, y, x + 1), &s.at(m, y + 1, x),
                            &s.at(m, y + 1, x + 1)};
        int arg = 0;
        for (int i = 1; i < 4; ++i)
          if (*cells[i] > *cells[arg]) arg = i;
        double second = -1e300;
        for (int i = 0; i < 4; ++i)
          if (i != arg) second = std::max(second, *cells[i]);
        if (*cells[arg] - second < min_gap) *cells[arg] += 2 * min_gap;
      }
}

inline double dot(const FlatVector<double>& a, const FlatVector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class LossFn>
double central_diff(double& coord, LossFn&& loss, double eps = kEps) {
  const double saved = coord;
  coord = saved + eps;
  const double up = loss();
  coord = saved - eps;
  const double down = loss();
  coord = saved;
  return (up - down) / (2 * eps);
}

}  // namespace gc_detail

inline double gradcheck_conv(int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const int n_in = rng.uniform_int(1, 3), n_out = rng.uniform_int(1, 3);
    const int k = rng.uniform_int(1, 3), pad = rng.uniform_int(0, 1);
    const int h = rng.uniform_int(std::max(1, k - 2 * pad), k + 4);
    const int w = rng.uniform_int(std::max(1, k - 2 * pad), k + 6);
    ConvLayer<double> layer(n_in, n_out, k, k, pad, pad);
    for (double& v : layer.weights) v = rng.uniform(-0.7, 0.7);
    for (double& v : layer.bias) v = rng.uniform(-0.3, 0.3);
    FeatureMapStack<double> in = random_stack(rng, n_in, h, w);

    FeatureMapStack<double> probe(n_out, layer.out_h(h), layer.out_w(w));
    for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);
    auto loss = [&] {
      const auto out = conv_forward(layer, in);
      return dot(out.data, probe.data);
    };
    const auto analytic = conv_backward(layer, in, probe);

    for (std::size_t i = 0; i < in.data.size(); ++i)
      worst = std::max(worst, rel_err(analytic.input.data[i],
                                      central_diff(in.data[i], loss)));
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
      worst = std::max(worst, rel_err(analytic.weights[i],
                                      central_diff(layer.weights[i], loss)));
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      worst = std::max(worst,
                       rel_err(analytic.bias[i], central_diff(layer.bias[i], loss)));
  }
  return worst;
}

inline double gradcheck_relu(int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    FlatVector<double> x = random_vec(rng, rng.uniform_int(2, 12));
    for (double& v : x)
      if (std::abs(v) < 1e-3) v += v >= 0 ? 0.01 : -0.01;
    FlatVector<double> probe = random_vec(rng, int(x.size()));
    auto loss = [&] { return dot(relu_forward(x), probe); };
    const FlatVector<double> analytic = relu_backward(x, probe);
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, rel_err(analytic[i], central_diff(x[i], loss)));
  }
  return worst;
}

inline double gradcheck_maxpool(int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const int n = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(2, 7), w = rng.uniform_int(2, 9);
    FeatureMapStack<double> in = random_stack(rng, n, h, w);
    separate_windows(in);
    auto fwd = maxpool_forward(in);
    FeatureMapStack<double> probe(fwd.out.n_map, fwd.out.h, fwd.out.w);
    for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);
    auto loss = [&] { return dot(maxpool_forward(in).out.data, probe.data); };
    const auto analytic = maxpool_backward(probe, fwd.argmax, h, w);
    for (std::size_t i = 0; i < in.data.size(); ++i)
      worst = std::max(worst,
                       rel_err(analytic.data[i], central_diff(in.data[i], loss)));
  }
  return worst;
}

inline double gradcheck_fc(int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    FullyConnectedLayer<double> layer(rng.uniform_int(2, 9), rng.uniform_int(2, 7));
    for (double& v : layer.weights) v = rng.uniform(-0.7, 0.7);
    for (double& v : layer.bias) v = rng.uniform(-0.3, 0.3);
    FlatVector<double> x = random_vec(rng, layer.in_dim);
    FlatVector<double> probe = random_vec(rng, layer.out_dim);
    auto loss = [&] { return dot(fc_forward(layer, x), probe); };
    const auto analytic = fc_backward(layer, x, probe);
    for (std::size_t i = 0; i < x.size(); ++i)
      worst = std::max(worst, rel_err(analytic.input[i], central_diff(x[i], loss)));
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
      worst = std::max(worst, rel_err(analytic.weights[i],
                                      central_diff(layer.weights[i], loss)));
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      worst = std::max(worst,
                       rel_err(analytic.bias[i], central_diff(layer.bias[i], loss)));
  }
  return worst;
}

inline double gradcheck_ssp(PoolMode mode, int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    const int n = rng.uniform_int(1, 4);
    const int h = rng.uniform_int(1, 5), w = rng.uniform_int(1, 9);
    FeatureMapStack<double> in = random_stack(rng, n, h, w);
    if (mode == PoolMode::kMax) separate_rows(in);
    const SSPLayer layer{mode};
    FlatVector<double> probe = random_vec(rng, n * h);
    auto loss = [&] { return dot(ssp_forward(layer, in).values, probe); };
    const auto fwd = ssp_forward(layer, in);
    const auto analytic = ssp_backward(layer, probe, n, h, w, fwd.argmax);
    for (std::size_t i = 0; i < in.data.size(); ++i)
      worst = std::max(worst,
                       rel_err(analytic.data[i], central_diff(in.data[i], loss)));
  }
  return worst;
}

inline double gradcheck_softmax_xent(int trials, Rng rng) {
  using namespace gc_detail;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    FlatVector<double> logits = random_vec(rng, 10, -3.0, 3.0);
    const int label = rng.uniform_int(0, 9);
    auto loss = [&] { return double(softmax_xent_forward(logits, label).loss); };
    const auto fwd = softmax_xent_forward(logits, label);
    const FlatVector<double> analytic = softmax_xent_backward(fwd.probs, label);
    for (std::size_t i = 0; i < logits.size(); ++i)
      worst = std::max(worst, rel_err(analytic[i], central_diff(logits[i], loss)));
  }
  return worst;
}

// Whole-graph check on a narrow configuration. Subsamples parameter
// coordinates across every node, so the fan-out paths through conv2 and
// conv3 are covered, plus a handful of input pixels. Uses a smaller step
// than the per-layer checks: a deep chain amplifies the perturbation, and
// the odds of sweeping some hidden unit across its rectifier or argmax
// boundary grow with the step.
inline double gradcheck_graph(int trials, Rng rng, int coords_first = 220,
                              int coords_rest = 60) {
  using namespace gc_detail;
  constexpr double kGraphEps = 1e-6;
  MSPNConfig cfg;
  cfg.conv_channels = {3, 4, 5, 6};
  cfg.fc_widths = {8, 8};
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    cfg.ssp_mode = t % 2 == 0 ? PoolMode::kMax : PoolMode::kAverage;
    NetworkGraph<double> g = build_mspn<double>(cfg);
    init_params(g, rng.next_u64());
    const int width = t == 0 ? 30 : rng.uniform_int(26, 44);
    FeatureMapStack<double> image(1, cfg.input_height, width);
    for (double& v : image.data) v = rng.uniform(0.0, 1.0);
    const int label = rng.uniform_int(0, 9);

    auto loss = [&] {
      ForwardTrace<double> trace;
      const auto& logits = forward(g, image, trace);
      return double(softmax_xent_forward(logits, label).loss);
    };

    Gradients<double> grads = Gradients<double>::like(g);
    ForwardTrace<double> trace;
    auto lf = loss_forward(g, image, label, trace);
    const FeatureMapStack<double> dinput =
        backward(g, trace, softmax_xent_backward(lf.probs, label), grads);

    const int coords = t == 0 ? coords_first : coords_rest;
    const std::vector<int> pnodes = g.parametric_nodes();
    for (int c = 0; c < coords; ++c) {
      const int node = pnodes[rng.uniform_int(0, int(pnodes.size()) - 1)];
      auto [wv, bv] = param_vectors(g.nodes[node]);
      const bool pick_bias = rng.uniform() < 0.15;
      auto& vec = pick_bias ? *bv : *wv;
      auto& gvec = pick_bias ? grads.node[node].bias : grads.node[node].weights;
      const int i = rng.uniform_int(0, int(vec.size()) - 1);
      worst = std::max(worst, rel_err(gvec[i], central_diff(vec[i], loss, kGraphEps)));
    }
    for (int c = 0; c < 8; ++c) {
      const int i = rng.uniform_int(0, int(image.data.size()) - 1);
      worst = std::max(worst,
                       rel_err(dinput.data[i], central_diff(image.data[i], loss, kGraphEps)));
    }
  }
  return worst;
}

// Runs every layer kind plus the whole graph. Trials is the number of random
// shapes per kind.
inline std::vector<GradCheckResult> run_gradcheck(int trials, uint64_t seed,
                                                  double threshold = 1e-4) {
  Rng base(seed);
  std::vector<GradCheckResult> results;
  auto add = [&](const std::string& kind, double err, int n) {
    results.push_back({kind, n, err, err < threshold});
  };
  add("conv", gradcheck_conv(trials, base.child("conv")), trials);
  add("maxpool", gradcheck_maxpool(trials, base.child("maxpool")), trials);
  add("relu", gradcheck_relu(trials, base.child("relu")), trials);
  add("fc", gradcheck_fc(trials, base.child("fc")), trials);
  add("ssp-max", gradcheck_ssp(PoolMode::kMax, trials, base.child("ssp-max")), trials);
  add("ssp-average", gradcheck_ssp(PoolMode::kAverage, trials, base.child("ssp-avg")),
      trials);
  add("softmax-xent", gradcheck_softmax_xent(trials, base.child("softmax")), trials);
  add("mspn-graph", gradcheck_graph(trials, base.child("graph")), trials);
  return results;
}

}  // namespace mspn
