#pragma once

#include "cxrssl/backbone/image.hpp"
#include "cxrssl/backbone/image_ops.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace cxrssl::ssl {

// Augmentation chain for one view, applied as
// crop -> flip -> intensity jitter -> blur.
struct ViewAugment {
  bool random_crop = true;
  double crop_scale_min = 0.4;  // fraction of the image area
  double crop_scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;  // width / height
  double ratio_max = 4.0 / 3.0;
  double flip_p = 0.5;
  double jitter = 0.2;  // contrast in [1-j, 1+j], brightness offset in [-j, j]
  double blur_p = 0.0;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  int out_height = 0;  // 0 keeps the input size
  int out_width = 0;

  void validate() const {
    auto bad = [](const std::string& m) { throw InvalidArgument("view recipe: " + m); };
    if (random_crop) {
      if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1)) {
        bad("crop scale range must satisfy 0 < min <= max <= 1");
      }
      if (!(ratio_min > 0 && ratio_min <= ratio_max)) bad("aspect ratio range must satisfy 0 < min <= max");
    }
    if (!(flip_p >= 0 && flip_p <= 1)) bad("flip probability outside [0,1]");
    if (!(blur_p >= 0 && blur_p <= 1)) bad("blur probability outside [0,1]");
    if (!(jitter >= 0 && jitter < 1)) bad("jitter outside [0,1)");
    if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) bad("blur sigma range invalid");
    if (out_height < 0 || out_width < 0) bad("negative output size");
  }

  static ViewAugment identity() {
    ViewAugment a;
    a.random_crop = false;
    a.flip_p = 0;
    a.jitter = 0;
    a.blur_p = 0;
    return a;
  }
};

struct ViewRecipe {
  std::vector<ViewAugment> views;

  int view_count() const { return static_cast<int>(views.size()); }

  void validate(int min_views = 1) const {
    if (view_count() < min_views) {
      throw InvalidArgument("view recipe: need at least " + std::to_string(min_views) + " views, got " +
                            std::to_string(view_count()));
    }
    for (const auto& v : views) v.validate();
  }

  static ViewRecipe identity(int count = 1) { return {std::vector<ViewAugment>(static_cast<std::size_t>(count), ViewAugment::identity())}; }

  // Default chain; blur only on the first view.
  static ViewRecipe standard(int count = 2, double blur_p = 0.5) {
    ViewRecipe r{std::vector<ViewAugment>(static_cast<std::size_t>(count))};
    if (count > 0) r.views[0].blur_p = blur_p;
    return r;
  }
};

namespace detail {

inline Box sample_crop(int h, int w, const ViewAugment& a, Rng& rng) {
  const double area = static_cast<double>(h) * w;
  const double lr0 = std::log(a.ratio_min), lr1 = std::log(a.ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(a.crop_scale_min, a.crop_scale_max);
    const double ratio = std::exp(rng.uniform(lr0, lr1));
    const double cw = std::sqrt(target * ratio);
    const double ch = std::sqrt(target / ratio);
    if (cw <= w && ch <= h) {
      return Box{rng.uniform(0.0, h - ch), rng.uniform(0.0, w - cw), ch, cw};
    }
  }
  return Box{0, 0, static_cast<double>(h), static_cast<double>(w)};
}

}  // namespace detail

template <typename T>
ImageTensor<T> augment(const ImageTensor<T>& image, const ViewAugment& a, Rng& rng) {
  const int oh = a.out_height > 0 ? a.out_height : image.height;
  const int ow = a.out_width > 0 ? a.out_width : image.width;
  ImageTensor<T> v = image;
  if (a.random_crop) {
    v = resample_bilinear(image, detail::sample_crop(image.height, image.width, a, rng), oh, ow);
  } else if (oh != image.height || ow != image.width) {
    v = resize_bilinear(image, oh, ow);
  }
  if (a.flip_p > 0 && rng.bernoulli(a.flip_p)) v = flip_horizontal(v);
  if (a.jitter > 0) {
    const double contrast = rng.uniform(1.0 - a.jitter, 1.0 + a.jitter);
    const double brightness = rng.uniform(-a.jitter, a.jitter);
    double mean = 0;
    for (T x : v.values) mean += x;
    mean /= static_cast<double>(v.values.size());
    for (T& x : v.values) x = static_cast<T>((x - mean) * contrast + mean + brightness);
  }
  if (a.blur_p > 0 && rng.bernoulli(a.blur_p)) {
    v = gaussian_blur(v, rng.uniform(a.blur_sigma_min, a.blur_sigma_max));
  }
  return v;
}

// One augmented view per recipe entry. View i draws from its own stream
// derived from (seed, i).
template <typename T>
std::vector<ImageTensor<T>> make_views(const ImageTensor<T>& image, const ViewRecipe& recipe,
                                       std::uint64_t seed) {
  image.validate();
  recipe.validate();
  std::vector<ImageTensor<T>> out;
  out.reserve(recipe.views.size());
  for (std::size_t i = 0; i < recipe.views.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    out.push_back(augment(image, recipe.views[i], rng));
  }
  return out;
}

}  // namespace cxrssl::ssl
