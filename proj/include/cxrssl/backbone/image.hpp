#pragma once

#include "cxrssl/backbone/config.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace cxrssl {

// H x W x C image, values stored row-major over (row, col, channel).
template <typename T>
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> values;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c, T fill = T(0))
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int y, int x, int c = 0) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  T at(int y, int x, int c = 0) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  void validate() const {
    if (height <= 0 || width <= 0 || channels < 1) {
      throw InvalidArgument("image: dimensions must be positive");
    }
    if (values.size() != static_cast<std::size_t>(height) * width * channels) {
      throw ShapeMismatch("image: value count does not match H*W*C");
    }
    for (T v : values) {
      if (!std::isfinite(v)) throw NonFiniteError("image: non-finite pixel value");
    }
  }

  template <typename U>
  ImageTensor<U> cast() const {
    ImageTensor<U> out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.values.assign(values.begin(), values.end());
    return out;
  }

  bool operator==(const ImageTensor&) const = default;
};

// Rows of `tokens` are either raw flattened patches or embeddings.
template <typename T>
struct TokenSequence {
  Mat<T> tokens;
  bool has_special_token = false;
};

// Splits an image into non-overlapping patches in row-major patch order
// (top-left to bottom-right). Each patch is flattened row-major over
// (patch row, patch col, channel), giving vectors of length p1*p2*C.
template <typename T>
TokenSequence<T> patchify(const ImageTensor<T>& image, const PatchConfig& cfg) {
  const int p1 = cfg.patch_height;
  const int p2 = cfg.patch_width;
  if (p1 <= 0 || p2 <= 0 || image.height % p1 != 0 || image.width % p2 != 0) {
    throw DimensionMismatch("patchify: image " + std::to_string(image.height) + "x" +
                            std::to_string(image.width) + " not divisible by patch " +
                            std::to_string(p1) + "x" + std::to_string(p2));
  }
  const int gh = image.height / p1;
  const int gw = image.width / p2;
  const int c = image.channels;
  TokenSequence<T> seq;
  seq.tokens.resize(gh * gw, p1 * p2 * c);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      T* row = seq.tokens.row(py * gw + px).data();
      int k = 0;
      for (int y = 0; y < p1; ++y) {
        for (int x = 0; x < p2; ++x) {
          for (int ch = 0; ch < c; ++ch) row[k++] = image.at(py * p1 + y, px * p2 + x, ch);
        }
      }
    }
  }
  return seq;
}

// Stacks the patches of several images into one (B*n) x (p1*p2*C) matrix.
template <typename T>
Mat<T> patchify_batch(const std::vector<const ImageTensor<T>*>& images, const PatchConfig& cfg) {
  if (images.empty()) throw InvalidArgument("patchify_batch: empty batch");
  Mat<T> first = patchify(*images[0], cfg).tokens;
  Mat<T> out(first.rows() * static_cast<Eigen::Index>(images.size()), first.cols());
  out.topRows(first.rows()) = first;
  for (std::size_t b = 1; b < images.size(); ++b) {
    Mat<T> p = patchify(*images[b], cfg).tokens;
    if (p.rows() != first.rows() || p.cols() != first.cols()) {
      throw ShapeMismatch("patchify_batch: images of different sizes in one batch");
    }
    out.middleRows(static_cast<Eigen::Index>(b) * first.rows(), first.rows()) = p;
  }
  return out;
}

}  // namespace cxrssl
