#pragma once

#include "cxrssl/backbone/image.hpp"
#include "cxrssl/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cxrssl {

// Axis-aligned source region in pixel units.
struct Box {
  double y0 = 0, x0 = 0, height = 0, width = 0;
};

// Bilinear resampling of `box` onto an out_h x out_w grid using pixel-center
// alignment: output pixel d samples source coordinate
// box.origin + (d + 0.5) * box.size / out - 0.5, clamped to the image.
template <typename T>
ImageTensor<T> resample_bilinear(const ImageTensor<T>& src, const Box& box, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw InvalidArgument("resample: output size must be positive");
  ImageTensor<T> out(out_h, out_w, src.channels);
  const double sy = box.height / out_h;
  const double sx = box.width / out_w;
  std::vector<int> x_lo(static_cast<std::size_t>(out_w)), x_hi(static_cast<std::size_t>(out_w));
  std::vector<double> x_frac(static_cast<std::size_t>(out_w));
  for (int dx = 0; dx < out_w; ++dx) {
    double x = box.x0 + (dx + 0.5) * sx - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(src.width - 1));
    const int lo = static_cast<int>(std::floor(x));
    x_lo[dx] = lo;
    x_hi[dx] = std::min(lo + 1, src.width - 1);
    x_frac[dx] = x - lo;
  }
  for (int dy = 0; dy < out_h; ++dy) {
    double y = box.y0 + (dy + 0.5) * sy - 0.5;
    y = std::clamp(y, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = y - y0;
    for (int dx = 0; dx < out_w; ++dx) {
      const double fx = x_frac[dx];
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x_lo[dx], c) * (1.0 - fx) + src.at(y0, x_hi[dx], c) * fx;
        const double bot = src.at(y1, x_lo[dx], c) * (1.0 - fx) + src.at(y1, x_hi[dx], c) * fx;
        out.at(dy, dx, c) = static_cast<T>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return out;
}

template <typename T>
ImageTensor<T> resize_bilinear(const ImageTensor<T>& src, int out_h, int out_w) {
  return resample_bilinear(src, Box{0, 0, static_cast<double>(src.height), static_cast<double>(src.width)},
                           out_h, out_w);
}

template <typename T>
ImageTensor<T> flip_horizontal(const ImageTensor<T>& src) {
  ImageTensor<T> out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = src.at(y, src.width - 1 - x, c);
  return out;
}

// Separable Gaussian blur, reflect-101 borders, radius ceil(3 sigma).
template <typename T>
ImageTensor<T> gaussian_blur(const ImageTensor<T>& src, double sigma) {
  if (!(sigma > 0)) return src;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double z = 0;
  for (int i = -r; i <= r; ++i) z += (k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& w : k) w /= z;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  ImageTensor<T> tmp(src.height, src.width, src.channels), out(src.height, src.width, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * src.at(y, reflect(x + i, src.width), c);
        tmp.at(y, x, c) = static_cast<T>(s);
      }
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < src.channels; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp.at(reflect(y + i, src.height), x, c);
        out.at(y, x, c) = static_cast<T>(s);
      }
  return out;
}

}  // namespace cxrssl
