#pragma once

#include <cstddef>
#include <vector>

#include "mspn/errors.hpp"
#include "mspn/tensor.hpp"

namespace mspn {

// Grayscale intensity grid, values in [0, 1], row-major.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<float> pix;

  Image() = default;
  Image(int h_, int w_, float fill = 0.f) : h(h_), w(w_) {
    require(h >= 1 && w >= 1, "Image: dims must be >= 1");
    pix.assign(std::size_t(h) * w, fill);
  }

  float& at(int r, int c) { return pix[std::size_t(r) * w + c]; }
  float at(int r, int c) const { return pix[std::size_t(r) * w + c]; }
};

// Bilinear resample to an arbitrary size, half-pixel-center convention.
// An identity-size call reproduces the input exactly.
Image resize_bilinear(const Image& img, int out_h, int out_w);

// Scales to the target height keeping the aspect ratio; the output width is
// round(w * target_h / h), at least 1.
Image resize_to_height(const Image& img, int target_h);

// Right-pads narrow images by replicating the last column. Wider images pass
// through unchanged. Replication keeps max statistics over rows unbiased.
Image pad_to_min_width(const Image& img, int min_w);

// Pads both sides evenly (left gets the smaller half) by edge replication.
Image pad_width_centered(const Image& img, int target_w);

Image crop(const Image& img, int r0, int c0, int ch, int cw);

template <typename T>
FeatureMapStack<T> to_stack(const Image& img) {
  FeatureMapStack<T> s(1, img.h, img.w);
  for (std::size_t i = 0; i < img.pix.size(); ++i) s.data[i] = T(img.pix[i]);
  return s;
}

}  // namespace mspn
