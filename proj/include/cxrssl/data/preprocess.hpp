#pragma once

#include "cxrssl/backbone/image.hpp"
#include "cxrssl/backbone/image_ops.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/data/manifest.hpp"
#include "cxrssl/data/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace cxrssl::data {

struct PreprocessConfig {
  int height = 256;
  int width = 256;
  int channels = 1;
  double mean = 0.0;
  double std = 1.0;

  bool identity_stats() const { return mean == 0.0 && std == 1.0; }

  void validate() const {
    if (height <= 0 || width <= 0) throw InvalidArgument("preprocess: target size must be positive");
    if (channels != 1 && channels != 3) throw InvalidArgument("preprocess: channels must be 1 or 3");
    if (!(std > 0) || !std::isfinite(mean)) throw InvalidArgument("preprocess: std must be positive");
  }
};

// Pixels scaled to [0,1], with RGB collapsed to luminance
// (0.299 R + 0.587 G + 0.114 B) or gray replicated to match `channels`.
template <typename T>
ImageTensor<T> to_unit_range(const RawImage& raw, int channels) {
  if (raw.width <= 0 || raw.height <= 0 || raw.pixels.size() != static_cast<std::size_t>(raw.width) * raw.height * raw.channels) {
    throw ValidationError("undecodable image: inconsistent pixel buffer");
  }
  const double scale = 1.0 / raw.max_value();
  ImageTensor<T> out(raw.height, raw.width, channels);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x) {
      if (channels == raw.channels) {
        for (int c = 0; c < channels; ++c) out.at(y, x, c) = static_cast<T>(raw.at(y, x, c) * scale);
      } else if (channels == 1) {
        const double l = 0.299 * raw.at(y, x, 0) + 0.587 * raw.at(y, x, 1) + 0.114 * raw.at(y, x, 2);
        out.at(y, x, 0) = static_cast<T>(l * scale);
      } else {
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<T>(raw.at(y, x, 0) * scale);
      }
    }
  return out;
}

// Bilinear resize to the target size, then (x - mean) / std. On a tensor
// that already has the target size the resize is skipped, so repeated
// application with identity stats changes nothing.
template <typename T>
ImageTensor<T> preprocess(const ImageTensor<T>& unit, const PreprocessConfig& cfg) {
  cfg.validate();
  if (unit.channels != cfg.channels) {
    throw DimensionMismatch("preprocess: image has " + std::to_string(unit.channels) + " channels, expected " +
                            std::to_string(cfg.channels));
  }
  ImageTensor<T> out = (unit.height == cfg.height && unit.width == cfg.width)
                           ? unit
                           : resize_bilinear(unit, cfg.height, cfg.width);
  if (!cfg.identity_stats()) {
    for (T& v : out.values) v = static_cast<T>((v - cfg.mean) / cfg.std);
  }
  return out;
}

template <typename T>
ImageTensor<T> preprocess(const RawImage& raw, const PreprocessConfig& cfg) {
  cfg.validate();
  return preprocess(to_unit_range<T>(raw, cfg.channels), cfg);
}

template <typename T>
ImageTensor<T> load_image(const std::filesystem::path& path, const PreprocessConfig& cfg) {
  return preprocess<T>(read_png(path), cfg);
}

// Loads every record of `m` in manifest order.
template <typename T>
std::vector<ImageTensor<T>> load_images(const Manifest& m, const PreprocessConfig& cfg) {
  std::vector<ImageTensor<T>> out;
  out.reserve(m.size());
  for (const auto& r : m.records) out.push_back(load_image<T>(m.resolve(r), cfg));
  return out;
}

// Mean and standard deviation of all [0,1]-scaled pixels after resizing.
inline ManifestMeta intensity_stats(const Manifest& m, int height, int width, int channels) {
  PreprocessConfig cfg{height, width, channels, 0.0, 1.0};
  double s = 0, s2 = 0;
  std::size_t n = 0;
  for (const auto& r : m.records) {
    const auto img = load_image<double>(m.resolve(r), cfg);
    for (double v : img.values) {
      s += v;
      s2 += v * v;
    }
    n += img.values.size();
  }
  ManifestMeta meta = m.meta;
  meta.channels = channels;
  if (n == 0) return meta;
  meta.mean = s / static_cast<double>(n);
  meta.std = std::sqrt(std::max(s2 / static_cast<double>(n) - meta.mean * meta.mean, 1e-12));
  return meta;
}

}  // namespace cxrssl::data
