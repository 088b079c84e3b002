#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mspn/errors.hpp"
#include "mspn/kernels.hpp"
#include "mspn/rng.hpp"
#include "mspn/tensor.hpp"

namespace mspn {

// Stride-1 convolution bank. Stored as out_maps x in_maps x k_h x k_w,
// cross-correlation convention (no kernel flip).
template <typename T>
struct ConvLayer {
  int in_maps = 0;
  int out_maps = 0;
  int k_h = 0;
  int k_w = 0;
  int pad_h = 0;
  int pad_w = 0;
  std::vector<T> weights;  // out_maps * in_maps * k_h * k_w
  std::vector<T> bias;     // out_maps

  ConvLayer() = default;
  ConvLayer(int in_maps_, int out_maps_, int k_h_, int k_w_, int pad_h_, int pad_w_)
      : in_maps(in_maps_), out_maps(out_maps_), k_h(k_h_), k_w(k_w_),
        pad_h(pad_h_), pad_w(pad_w_) {
    require(in_maps >= 1 && out_maps >= 1 && k_h >= 1 && k_w >= 1 && pad_h >= 0 &&
                pad_w >= 0,
            "ConvLayer: bad dimensions");
    weights.assign(std::size_t(out_maps) * in_maps * k_h * k_w, T(0));
    bias.assign(out_maps, T(0));
  }

  // Zero-mean uniform with scale sqrt(6 / (fan_in + fan_out)); bias stays 0.
  void init(Rng& rng) {
    const double fan_in = double(in_maps) * k_h * k_w;
    const double fan_out = double(out_maps) * k_h * k_w;
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (T& v : weights) v = T(rng.uniform(-s, s));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  // Narrowest input this layer accepts.
  int min_input_width() const { return k_w - 2 * pad_w; }

  int out_h(int in_h) const { return in_h + 2 * pad_h - k_h + 1; }
  int out_w(int in_w) const { return in_w + 2 * pad_w - k_w + 1; }
};

template <typename T>
struct ConvGrads {
  FeatureMapStack<T> input;
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
FeatureMapStack<T> conv_forward(const ConvLayer<T>& layer, const FeatureMapStack<T>& in) {
  in.check_valid("conv_forward");
  require(in.n_map == layer.in_maps, "conv_forward: input has " +
                                         std::to_string(in.n_map) + " maps, layer expects " +
                                         std::to_string(layer.in_maps));
  if (in.w < layer.min_input_width()) throw MinWidthError(in.w, layer.min_input_width());
  require(layer.out_h(in.h) >= 1, "conv_forward: input height too small for kernel");
  FeatureMapStack<T> out(layer.out_maps, layer.out_h(in.h), layer.out_w(in.w));
  par::conv_forward(in, layer.weights.data(), layer.bias.data(), layer.out_maps,
                    layer.k_h, layer.k_w, layer.pad_h, layer.pad_w, out);
  return out;
}

template <typename T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const FeatureMapStack<T>& in,
                           const FeatureMapStack<T>& grad_out) {
  require(grad_out.n_map == layer.out_maps && grad_out.h == layer.out_h(in.h) &&
              grad_out.w == layer.out_w(in.w),
          "conv_backward: grad_out shape does not mirror the forward output");
  ConvGrads<T> g;
  g.input = FeatureMapStack<T>(in.n_map, in.h, in.w);
  g.weights.assign(layer.weights.size(), T(0));
  g.bias.assign(layer.bias.size(), T(0));
  par::conv_backward(in, layer.weights.data(), layer.out_maps, layer.k_h, layer.k_w,
                     layer.pad_h, layer.pad_w, grad_out, g.input, g.weights.data(),
                     g.bias.data());
  return g;
}

// ---- rectifier ----

template <typename T>
FeatureMapStack<T> relu_forward(const FeatureMapStack<T>& in) {
  FeatureMapStack<T> out = in;
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
FlatVector<T> relu_forward(const FlatVector<T>& in) {
  FlatVector<T> out = in;
  for (T& v : out) v = v > T(0) ? v : T(0);
  return out;
}

// Subgradient at 0 is 0: gradient passes only where the input was > 0.
template <typename T>
FeatureMapStack<T> relu_backward(const FeatureMapStack<T>& in,
                                 const FeatureMapStack<T>& grad_out) {
  require(in.same_shape(grad_out), "relu_backward: shape mismatch");
  FeatureMapStack<T> g(in.n_map, in.h, in.w);
  for (std::size_t i = 0; i < in.data.size(); ++i)
    g.data[i] = in.data[i] > T(0) ? grad_out.data[i] : T(0);
  return g;
}

template <typename T>
FlatVector<T> relu_backward(const FlatVector<T>& in, const FlatVector<T>& grad_out) {
  require(in.size() == grad_out.size(), "relu_backward: length mismatch");
  FlatVector<T> g(in.size());
  for (std::size_t i = 0; i < in.size(); ++i)
    g[i] = in[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

// ---- 2x2 stride-2 max pooling, floor semantics on odd extents ----

inline int pooled_extent(int x) { return x / 2; }

template <typename T>
struct MaxPoolResult {
  FeatureMapStack<T> out;
  std::vector<int> argmax;  // flat in-map index of each window winner
};

template <typename T>
MaxPoolResult<T> maxpool_forward(const FeatureMapStack<T>& in) {
  in.check_valid("maxpool_forward");
  require(in.h >= 2 && in.w >= 2, "maxpool_forward: input must be at least 2x2");
  MaxPoolResult<T> r;
  r.out = FeatureMapStack<T>(in.n_map, pooled_extent(in.h), pooled_extent(in.w));
  par::maxpool_forward(in, r.out, r.argmax);
  return r;
}

template <typename T>
FeatureMapStack<T> maxpool_backward(const FeatureMapStack<T>& grad_out,
                                    const std::vector<int>& argmax, int in_h, int in_w) {
  require(argmax.size() == grad_out.size(), "maxpool_backward: argmax length mismatch");
  FeatureMapStack<T> g(grad_out.n_map, in_h, in_w);
  const std::size_t per_out = std::size_t(grad_out.h) * grad_out.w;
  const std::size_t per_in = std::size_t(in_h) * in_w;
  for (int m = 0; m < grad_out.n_map; ++m) {
    T* gm = g.data.data() + m * per_in;
    const T* go = grad_out.data.data() + m * per_out;
    const int* am = argmax.data() + m * per_out;
    for (std::size_t i = 0; i < per_out; ++i) gm[am[i]] += go[i];
  }
  return g;
}

// ---- fully connected ----

template <typename T>
struct FullyConnectedLayer {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<T> weights;  // out_dim x in_dim, row-major
  std::vector<T> bias;     // out_dim

  FullyConnectedLayer() = default;
  FullyConnectedLayer(int in_dim_, int out_dim_) : in_dim(in_dim_), out_dim(out_dim_) {
    require(in_dim >= 1 && out_dim >= 1, "FullyConnectedLayer: bad dimensions");
    weights.assign(std::size_t(out_dim) * in_dim, T(0));
    bias.assign(out_dim, T(0));
  }

  void init(Rng& rng) {
    const double s = std::sqrt(6.0 / (double(in_dim) + double(out_dim)));
    for (T& v : weights) v = T(rng.uniform(-s, s));
    std::fill(bias.begin(), bias.end(), T(0));
  }
};

template <typename T>
struct FcGrads {
  FlatVector<T> input;
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
FlatVector<T> fc_forward(const FullyConnectedLayer<T>& layer, const FlatVector<T>& x) {
  require(int(x.size()) == layer.in_dim,
          "fc_forward: input length " + std::to_string(x.size()) + " != in_dim " +
              std::to_string(layer.in_dim));
  FlatVector<T> y(layer.out_dim);
  par::fc_forward(layer.weights.data(), layer.bias.data(), layer.out_dim, layer.in_dim,
                  x.data(), y.data());
  return y;
}

template <typename T>
FcGrads<T> fc_backward(const FullyConnectedLayer<T>& layer, const FlatVector<T>& x,
                       const FlatVector<T>& grad_y) {
  require(int(x.size()) == layer.in_dim && int(grad_y.size()) == layer.out_dim,
          "fc_backward: shape mismatch");
  FcGrads<T> g;
  g.input.resize(layer.in_dim);
  g.weights.resize(layer.weights.size());
  g.bias.resize(layer.bias.size());
  par::fc_backward(layer.weights.data(), layer.out_dim, layer.in_dim, x.data(),
                   grad_y.data(), g.input.data(), g.weights.data(), g.bias.data());
  return g;
}

// ---- spatially-sensitive pooling ----

// Reduces each row of each map to one value, so the descriptor length is
// n_map*h no matter how wide the input is. Vertical structure survives,
// horizontal position does not.
struct SSPLayer {
  PoolMode mode = PoolMode::kMax;
};

template <typename T>
RowReduceResult<T> ssp_forward(const SSPLayer& layer, const FeatureMapStack<T>& in) {
  return row_reduce(in, layer.mode);
}

template <typename T>
FeatureMapStack<T> ssp_backward(const SSPLayer& layer, const FlatVector<T>& grad_out,
                                int n_map, int h, int w, const std::vector<int>& argmax) {
  return row_reduce_backward(grad_out, layer.mode, n_map, h, w, argmax);
}

// ---- softmax + cross entropy ----

template <typename T>
struct SoftmaxXentResult {
  FlatVector<T> probs;
  T loss = T(0);
};

// Max-shifted softmax with negative log likelihood of the true class.
template <typename T>
SoftmaxXentResult<T> softmax_xent_forward(const FlatVector<T>& logits, int label) {
  require(!logits.empty(), "softmax_xent_forward: empty logits");
  require(label >= 0 && label < int(logits.size()),
          "softmax_xent_forward: label " + std::to_string(label) + " out of [0, " +
              std::to_string(logits.size()) + ")");
  SoftmaxXentResult<T> r;
  r.probs.resize(logits.size());
  const T m = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double e = std::exp(double(logits[i] - m));
    r.probs[i] = T(e);
    denom += e;
  }
  for (T& p : r.probs) p = T(double(p) / denom);
  // loss computed in the shifted domain to stay finite for huge logits
  r.loss = T(std::log(denom) - double(logits[label] - m));
  return r;
}

template <typename T>
FlatVector<T> softmax_xent_backward(const FlatVector<T>& probs, int label, T dloss = T(1)) {
  require(label >= 0 && label < int(probs.size()), "softmax_xent_backward: bad label");
  FlatVector<T> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * dloss;
  g[label] -= dloss;
  return g;
}

}  // namespace mspn
