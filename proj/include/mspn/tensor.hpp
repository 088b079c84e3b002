#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mspn/errors.hpp"

namespace mspn {

enum class PoolMode { kMax, kAverage };

inline const char* pool_mode_name(PoolMode m) {
  return m == PoolMode::kMax ? "max" : "average";
}

// Stack of 2-D response maps sharing one height and width. The width varies
// across samples but is fixed within a stack. Storage is map-major then
// row-major, so a row scan is a unit-stride walk.
template <typename T>
struct FeatureMapStack {
  int n_map = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  FeatureMapStack() = default;
  FeatureMapStack(int n_map_, int h_, int w_, T fill = T(0))
      : n_map(n_map_), h(h_), w(w_) {
    require(n_map >= 1 && h >= 1 && w >= 1, "FeatureMapStack: dims must be >= 1");
    data.assign(std::size_t(n_map) * h * w, fill);
  }

  std::size_t size() const { return data.size(); }

  T* map(int m) { return data.data() + std::size_t(m) * h * w; }
  const T* map(int m) const { return data.data() + std::size_t(m) * h * w; }

  T* row(int m, int r) { return map(m) + std::size_t(r) * w; }
  const T* row(int m, int r) const { return map(m) + std::size_t(r) * w; }

  T& at(int m, int r, int c) { return data[(std::size_t(m) * h + r) * w + c]; }
  T at(int m, int r, int c) const { return data[(std::size_t(m) * h + r) * w + c]; }

  bool same_shape(const FeatureMapStack& o) const {
    return n_map == o.n_map && h == o.h && w == o.w;
  }

  void check_valid(const char* who) const {
    require(n_map >= 1 && h >= 1 && w >= 1,
            std::string(who) + ": dims must be >= 1");
    require(data.size() == std::size_t(n_map) * h * w,
            std::string(who) + ": data length does not match n_map*h*w");
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }
};

template <typename T>
using FlatVector = std::vector<T>;

template <typename T>
struct RowReduceResult {
  FlatVector<T> values;     // n_map * h entries, map-major
  std::vector<int> argmax;  // winning column per row; empty in average mode
};

// Reduces every row of every map to one value. Output element m*h + r is the
// max (or mean) over the w cells of row r of map m. Max ties go to the lowest
// column. Serial on purpose: stacks are reduced one sample at a time and the
// parallelism lives at the sample level.
template <typename T>
RowReduceResult<T> row_reduce(const FeatureMapStack<T>& maps, PoolMode mode) {
  maps.check_valid("row_reduce");
  const int rows = maps.n_map * maps.h;
  const int w = maps.w;
  RowReduceResult<T> out;
  out.values.resize(rows);
  if (mode == PoolMode::kMax) {
    out.argmax.resize(rows);
    const T* p = maps.data.data();
    for (int i = 0; i < rows; ++i, p += w) {
      T best = p[0];
      int arg = 0;
      for (int c = 1; c < w; ++c) {
        if (p[c] > best) {
          best = p[c];
          arg = c;
        }
      }
      out.values[i] = best;
      out.argmax[i] = arg;
    }
  } else {
    const T* p = maps.data.data();
    for (int i = 0; i < rows; ++i, p += w) {
      double acc = 0.0;  // double accumulate keeps the mean order-insensitive
      for (int c = 0; c < w; ++c) acc += double(p[c]);
      out.values[i] = T(acc / w);
    }
  }
  return out;
}

// Adjoint of row_reduce. Max mode routes each row's gradient entirely to the
// saved argmax cell; average mode spreads grad/w uniformly over the row.
template <typename T>
FeatureMapStack<T> row_reduce_backward(const FlatVector<T>& grad_out, PoolMode mode,
                                       int n_map, int h, int w,
                                       const std::vector<int>& argmax = {}) {
  require(n_map >= 1 && h >= 1 && w >= 1, "row_reduce_backward: dims must be >= 1");
  const std::size_t rows = std::size_t(n_map) * h;
  require(grad_out.size() == rows,
          "row_reduce_backward: grad_out length " + std::to_string(grad_out.size()) +
              " != n_map*h = " + std::to_string(rows));
  FeatureMapStack<T> grad_in(n_map, h, w, T(0));
  if (mode == PoolMode::kMax) {
    require(argmax.size() == rows, "row_reduce_backward: argmax length != n_map*h");
    for (std::size_t i = 0; i < rows; ++i) {
      require(argmax[i] >= 0 && argmax[i] < w, "row_reduce_backward: argmax out of range");
      grad_in.data[i * w + argmax[i]] = grad_out[i];
    }
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      const T g = grad_out[i] / T(w);
      T* p = grad_in.data.data() + i * w;
      for (int c = 0; c < w; ++c) p[c] = g;
    }
  }
  return grad_in;
}

// Joins vectors in the given order.
template <typename T>
FlatVector<T> concat(const std::vector<FlatVector<T>>& vs) {
  require(!vs.empty(), "concat: needs at least one input");
  std::size_t total = 0;
  for (const auto& v : vs) total += v.size();
  FlatVector<T> out;
  out.reserve(total);
  for (const auto& v : vs) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Splits v back into pieces of the given sizes. Inverse of concat.
template <typename T>
std::vector<FlatVector<T>> split(const FlatVector<T>& v, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  require(total == v.size(), "split: sizes do not sum to vector length");
  std::vector<FlatVector<T>> out;
  out.reserve(sizes.size());
  std::size_t off = 0;
  for (std::size_t s : sizes) {
    out.emplace_back(v.begin() + off, v.begin() + off + s);
    off += s;
  }
  return out;
}

}  // namespace mspn
