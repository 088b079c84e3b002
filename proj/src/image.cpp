#include "mspn/image.hpp"

#include <algorithm>
#include <cmath>

namespace mspn {

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require(img.h >= 1 && img.w >= 1 && !img.pix.empty(), "resize_bilinear: empty image");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: bad target size");
  if (out_h == img.h && out_w == img.w) return img;

  Image out(out_h, out_w);
  const double sy = double(img.h) / out_h;
  const double sx = double(img.w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, double(img.h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, double(img.w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * img.at(y0, x0) + wx * img.at(y0, x1);
      const double bot = (1.0 - wx) * img.at(y1, x0) + wx * img.at(y1, x1);
      out.at(r, c) = float((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

Image resize_to_height(const Image& img, int target_h) {
  require(target_h >= 1, "resize_to_height: bad target height");
  if (img.h == target_h) return img;
  const int out_w = std::max(1, int(std::lround(double(img.w) * target_h / img.h)));
  return resize_bilinear(img, target_h, out_w);
}

Image pad_to_min_width(const Image& img, int min_w) {
  if (img.w >= min_w) return img;
  Image out(img.h, min_w);
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) out.at(r, c) = img.at(r, c);
    const float edge = img.at(r, img.w - 1);
    for (int c = img.w; c < min_w; ++c) out.at(r, c) = edge;
  }
  return out;
}

Image pad_width_centered(const Image& img, int target_w) {
  if (img.w >= target_w) return img;
  const int left = (target_w - img.w) / 2;
  Image out(img.h, target_w);
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < target_w; ++c) {
      const int src = std::clamp(c - left, 0, img.w - 1);
      out.at(r, c) = img.at(r, src);
    }
  }
  return out;
}

Image crop(const Image& img, int r0, int c0, int ch, int cw) {
  require(r0 >= 0 && c0 >= 0 && ch >= 1 && cw >= 1 && r0 + ch <= img.h &&
              c0 + cw <= img.w,
          "crop: window out of bounds");
  Image out(ch, cw);
  for (int r = 0; r < ch; ++r)
    for (int c = 0; c < cw; ++c) out.at(r, c) = img.at(r0 + r, c0 + c);
  return out;
}

}  // namespace mspn
