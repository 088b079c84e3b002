#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "mspn/tensor.hpp"

// Low-level compute kernels. mspn::serial holds plain reference loops kept
// for tests and the benchmark; mspn::par holds the OpenMP versions the layers
// use. Both run the same per-index routine with disjoint writes and no
// floating-point reassociation, so for any thread count the parallel results
// are bit-identical to the serial ones.

namespace mspn {
namespace kdetail {

// Reductions run over eight independent accumulators so the compiler can keep
// several fused multiply-add chains in flight. The grouping is fixed, so the
// result is reproducible everywhere the kernel runs.
template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  T head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) head += a[i] * b[i];
  return head;
}

template <typename T>
T sum(const T* a, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k];
  T head = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) head += a[i];
  return head;
}

template <class F>
void for_each_index(bool parallel, int n, F f) {
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) f(i);
  } else {
    for (int i = 0; i < n; ++i) f(i);
  }
}

// Zero-padded copy of a stack, (h+2*pad_h) x (w+2*pad_w) per map.
template <typename T>
std::vector<T> pad_stack(const FeatureMapStack<T>& in, int pad_h, int pad_w) {
  const int ph = in.h + 2 * pad_h;
  const int pw = in.w + 2 * pad_w;
  std::vector<T> out(std::size_t(in.n_map) * ph * pw, T(0));
  for (int m = 0; m < in.n_map; ++m) {
    T* dst = out.data() + std::size_t(m) * ph * pw + std::size_t(pad_h) * pw + pad_w;
    const T* src = in.map(m);
    for (int r = 0; r < in.h; ++r, dst += pw, src += in.w)
      std::copy(src, src + in.w, dst);
  }
  return out;
}

// Cross-correlation with bias, one output map over a padded input.
template <typename T>
void conv_map_forward(const T* in_pad, int n_in, int ph, int pw, const T* weights,
                      T bias, int oc, int k_h, int k_w, T* out, int out_h, int out_w) {
  std::fill(out, out + std::size_t(out_h) * out_w, bias);
  const T* wbase = weights + std::size_t(oc) * n_in * k_h * k_w;
  for (int ic = 0; ic < n_in; ++ic) {
    const T* inm = in_pad + std::size_t(ic) * ph * pw;
    for (int ky = 0; ky < k_h; ++ky) {
      for (int kx = 0; kx < k_w; ++kx) {
        const T wv = wbase[(std::size_t(ic) * k_h + ky) * k_w + kx];
        for (int y = 0; y < out_h; ++y) {
          const T* irow = inm + std::size_t(y + ky) * pw + kx;
          T* orow = out + std::size_t(y) * out_w;
          for (int x = 0; x < out_w; ++x) orow[x] += wv * irow[x];
        }
      }
    }
  }
}

// Weight and bias gradient slices owned by output map oc.
template <typename T>
void conv_map_backward_wb(const T* in_pad, int n_in, int ph, int pw, const T* grad_out,
                          int oc, int k_h, int k_w, int out_h, int out_w, T* grad_w,
                          T* grad_b) {
  const T* gom = grad_out + std::size_t(oc) * out_h * out_w;
  grad_b[oc] = sum(gom, std::size_t(out_h) * out_w);
  T* gwbase = grad_w + std::size_t(oc) * n_in * k_h * k_w;
  for (int ic = 0; ic < n_in; ++ic) {
    const T* inm = in_pad + std::size_t(ic) * ph * pw;
    for (int ky = 0; ky < k_h; ++ky) {
      for (int kx = 0; kx < k_w; ++kx) {
        T acc = T(0);
        for (int y = 0; y < out_h; ++y) {
          const T* irow = inm + std::size_t(y + ky) * pw + kx;
          const T* grow = gom + std::size_t(y) * out_w;
          acc += dot(grow, irow, out_w);
        }
        gwbase[(std::size_t(ic) * k_h + ky) * k_w + kx] = acc;
      }
    }
  }
}

// Input gradient for one input map, accumulated over all output maps into the
// padded scratch slice owned by this call.
template <typename T>
void conv_map_backward_in(const T* weights, const T* grad_out, int ic, int n_in,
                          int n_out, int ph, int pw, int k_h, int k_w, int out_h,
                          int out_w, T* gin_pad_map) {
  std::fill(gin_pad_map, gin_pad_map + std::size_t(ph) * pw, T(0));
  for (int oc = 0; oc < n_out; ++oc) {
    const T* gom = grad_out + std::size_t(oc) * out_h * out_w;
    const T* wbase = weights + (std::size_t(oc) * n_in + ic) * k_h * k_w;
    for (int ky = 0; ky < k_h; ++ky) {
      for (int kx = 0; kx < k_w; ++kx) {
        const T wv = wbase[std::size_t(ky) * k_w + kx];
        for (int y = 0; y < out_h; ++y) {
          T* grow = gin_pad_map + std::size_t(y + ky) * pw + kx;
          const T* gorow = gom + std::size_t(y) * out_w;
          for (int x = 0; x < out_w; ++x) grow[x] += wv * gorow[x];
        }
      }
    }
  }
}

// 2x2/2 max pooling of one map; floor semantics drop odd trailing cells.
// Window cells are scanned in ascending flat index so ties keep the lowest.
template <typename T>
void maxpool_map(const T* inm, int w, T* outm, int* argm, int out_h, int out_w) {
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      int base = 2 * y * w + 2 * x;
      T best = inm[base];
      int arg = base;
      if (inm[base + 1] > best) { best = inm[base + 1]; arg = base + 1; }
      if (inm[base + w] > best) { best = inm[base + w]; arg = base + w; }
      if (inm[base + w + 1] > best) { best = inm[base + w + 1]; arg = base + w + 1; }
      outm[std::size_t(y) * out_w + x] = best;
      argm[std::size_t(y) * out_w + x] = arg;
    }
  }
}

template <typename T>
void conv_forward_impl(bool parallel, const FeatureMapStack<T>& in, const T* weights,
                       const T* bias, int n_out, int k_h, int k_w, int pad_h, int pad_w,
                       FeatureMapStack<T>& out) {
  const int ph = in.h + 2 * pad_h, pw = in.w + 2 * pad_w;
  const std::vector<T> in_pad = pad_stack(in, pad_h, pad_w);
  const int out_h = out.h, out_w = out.w;
  for_each_index(parallel, n_out, [&](int oc) {
    conv_map_forward(in_pad.data(), in.n_map, ph, pw, weights, bias[oc], oc, k_h, k_w,
                     out.map(oc), out_h, out_w);
  });
}

template <typename T>
void conv_backward_impl(bool parallel, const FeatureMapStack<T>& in, const T* weights,
                        int n_out, int k_h, int k_w, int pad_h, int pad_w,
                        const FeatureMapStack<T>& grad_out, FeatureMapStack<T>& grad_in,
                        T* grad_w, T* grad_b) {
  const int ph = in.h + 2 * pad_h, pw = in.w + 2 * pad_w;
  const std::vector<T> in_pad = pad_stack(in, pad_h, pad_w);
  for_each_index(parallel, n_out, [&](int oc) {
    conv_map_backward_wb(in_pad.data(), in.n_map, ph, pw, grad_out.data.data(), oc, k_h,
                         k_w, grad_out.h, grad_out.w, grad_w, grad_b);
  });
  std::vector<T> gin_pad(std::size_t(in.n_map) * ph * pw);
  for_each_index(parallel, in.n_map, [&](int ic) {
    conv_map_backward_in(weights, grad_out.data.data(), ic, in.n_map, n_out, ph, pw, k_h,
                         k_w, grad_out.h, grad_out.w,
                         gin_pad.data() + std::size_t(ic) * ph * pw);
  });
  for (int ic = 0; ic < in.n_map; ++ic)
    for (int r = 0; r < in.h; ++r) {
      const T* src = gin_pad.data() + (std::size_t(ic) * ph + r + pad_h) * pw + pad_w;
      std::copy(src, src + in.w, grad_in.row(ic, r));
    }
}

template <typename T>
void maxpool_forward_impl(bool parallel, const FeatureMapStack<T>& in,
                          FeatureMapStack<T>& out, std::vector<int>& argmax) {
  argmax.resize(out.size());
  const int out_h = out.h, out_w = out.w;
  for_each_index(parallel, in.n_map, [&](int m) {
    maxpool_map(in.map(m), in.w, out.map(m),
                argmax.data() + std::size_t(m) * out_h * out_w, out_h, out_w);
  });
}

template <typename T>
void fc_forward_impl(bool parallel, const T* weights, const T* bias, int out_dim,
                     int in_dim, const T* x, T* y) {
  for_each_index(parallel, out_dim, [&](int o) {
    y[o] = bias[o] + dot(weights + std::size_t(o) * in_dim, x, in_dim);
  });
}

template <typename T>
void fc_backward_impl(bool parallel, const T* weights, int out_dim, int in_dim,
                      const T* x, const T* grad_y, T* grad_x, T* grad_w, T* grad_b) {
  for_each_index(parallel, out_dim, [&](int o) {
    const T g = grad_y[o];
    grad_b[o] = g;
    T* gw = grad_w + std::size_t(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) gw[i] = g * x[i];
  });
  // grad_x sums over rows; kept serial so the accumulation order is fixed
  std::fill(grad_x, grad_x + in_dim, T(0));
  for (int o = 0; o < out_dim; ++o) {
    const T g = grad_y[o];
    const T* wrow = weights + std::size_t(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) grad_x[i] += g * wrow[i];
  }
}

}  // namespace kdetail

// Reference kernels, single-threaded.
namespace serial {

template <typename T>
void conv_forward(const FeatureMapStack<T>& in, const T* weights, const T* bias,
                  int n_out, int k_h, int k_w, int pad_h, int pad_w,
                  FeatureMapStack<T>& out) {
  kdetail::conv_forward_impl(false, in, weights, bias, n_out, k_h, k_w, pad_h, pad_w, out);
}

template <typename T>
void conv_backward(const FeatureMapStack<T>& in, const T* weights, int n_out, int k_h,
                   int k_w, int pad_h, int pad_w, const FeatureMapStack<T>& grad_out,
                   FeatureMapStack<T>& grad_in, T* grad_w, T* grad_b) {
  kdetail::conv_backward_impl(false, in, weights, n_out, k_h, k_w, pad_h, pad_w, grad_out,
                              grad_in, grad_w, grad_b);
}

template <typename T>
void maxpool_forward(const FeatureMapStack<T>& in, FeatureMapStack<T>& out,
                     std::vector<int>& argmax) {
  kdetail::maxpool_forward_impl(false, in, out, argmax);
}

template <typename T>
void fc_forward(const T* weights, const T* bias, int out_dim, int in_dim, const T* x,
                T* y) {
  kdetail::fc_forward_impl(false, weights, bias, out_dim, in_dim, x, y);
}

template <typename T>
void fc_backward(const T* weights, int out_dim, int in_dim, const T* x, const T* grad_y,
                 T* grad_x, T* grad_w, T* grad_b) {
  kdetail::fc_backward_impl(false, weights, out_dim, in_dim, x, grad_y, grad_x, grad_w,
                            grad_b);
}

}  // namespace serial

// Production kernels, OpenMP over the map (or row) index.
namespace par {

template <typename T>
void conv_forward(const FeatureMapStack<T>& in, const T* weights, const T* bias,
                  int n_out, int k_h, int k_w, int pad_h, int pad_w,
                  FeatureMapStack<T>& out) {
  kdetail::conv_forward_impl(true, in, weights, bias, n_out, k_h, k_w, pad_h, pad_w, out);
}

template <typename T>
void conv_backward(const FeatureMapStack<T>& in, const T* weights, int n_out, int k_h,
                   int k_w, int pad_h, int pad_w, const FeatureMapStack<T>& grad_out,
                   FeatureMapStack<T>& grad_in, T* grad_w, T* grad_b) {
  kdetail::conv_backward_impl(true, in, weights, n_out, k_h, k_w, pad_h, pad_w, grad_out,
                              grad_in, grad_w, grad_b);
}

template <typename T>
void maxpool_forward(const FeatureMapStack<T>& in, FeatureMapStack<T>& out,
                     std::vector<int>& argmax) {
  kdetail::maxpool_forward_impl(true, in, out, argmax);
}

template <typename T>
void fc_forward(const T* weights, const T* bias, int out_dim, int in_dim, const T* x,
                T* y) {
  kdetail::fc_forward_impl(true, weights, bias, out_dim, in_dim, x, y);
}

template <typename T>
void fc_backward(const T* weights, int out_dim, int in_dim, const T* x, const T* grad_y,
                 T* grad_x, T* grad_w, T* grad_b) {
  kdetail::fc_backward_impl(true, weights, out_dim, in_dim, x, grad_y, grad_x, grad_w,
                            grad_b);
}

}  // namespace par

}  // namespace mspn
