#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/data/manifest.hpp"
#include "cxrssl/data/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

namespace cxrssl::data {

struct SynthOptions {
  int n_images = 100;
  double positive_fraction = 0.31;
  int image_size = 64;
  std::uint64_t seed = 0;
  int max_images_per_patient = 3;
  bool labeled = true;            // false writes label=unlabeled
  bool shifted = false;           // out-of-domain look: lower contrast, more noise, pediatric ages
  std::string id_prefix = "img";  // image ids are <prefix><index>, patient ids p<prefix><index>
  double lesion_contrast = 0.3;  // blob peak above the local field intensity
  double noise_sd = 0.035;

  void validate() const {
    if (n_images < 2) throw InvalidArgument("synth: need at least 2 images");
    if (!(positive_fraction > 0 && positive_fraction < 1)) throw InvalidArgument("synth: positive fraction must be in (0,1)");
    if (image_size < 8) throw InvalidArgument("synth: image size must be at least 8");
    if (max_images_per_patient < 1) throw InvalidArgument("synth: max images per patient must be >= 1");
  }
};

struct SynthDataset {
  Manifest manifest;
  std::vector<RawImage> images;  // parallel to manifest.records
};

namespace detail {

struct Blob {
  double cy, cx, sigma, amp;
};

// Chest-like field: bright body with a vertical gradient, two dark
// elliptical lung fields with soft edges, optional bright blob opacities
// inside the lungs, per-image gain and offset, additive noise; quantized to
// 8 bits.
inline RawImage render_chest(int size, bool positive, const SynthOptions& o, Rng& rng) {
  const double s = size;
  const double gain = o.shifted ? rng.uniform(0.6, 0.85) : rng.uniform(0.8, 1.2);
  const double offset = o.shifted ? rng.uniform(0.05, 0.15) : rng.uniform(-0.08, 0.08);
  const double tilt = rng.uniform(-0.05, 0.05);
  const double field = rng.uniform(0.3, 0.4);
  // lung geometry with small per-image jitter
  const double cy = s * rng.uniform(0.46, 0.54);
  const double dx = s * rng.uniform(0.19, 0.24);
  const double ax = s * rng.uniform(0.13, 0.17);
  const double ay = s * rng.uniform(0.26, 0.33);
  const double cxs[2] = {s * 0.5 - dx, s * 0.5 + dx};

  std::vector<Blob> blobs;
  if (positive) {
    const int k = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < k; ++i) {
      const int side = static_cast<int>(rng.below(2));
      // uniform point inside the ellipse shrunk by 0.7
      double u, v;
      do {
        u = rng.uniform(-1, 1);
        v = rng.uniform(-1, 1);
      } while (u * u + v * v > 1);
      blobs.push_back({cy + 0.7 * ay * v, cxs[side] + 0.7 * ax * u, s * rng.uniform(0.05, 0.09),
                       o.lesion_contrast * rng.uniform(0.8, 1.25)});
    }
  }
  const double noise = o.shifted ? o.noise_sd * 1.6 : o.noise_sd;

  RawImage img;
  img.width = img.height = size;
  img.channels = 1;
  img.bit_depth = 8;
  img.pixels.resize(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      double v = 0.55 + 0.12 * (py / s) + tilt * (px / s - 0.5);
      for (double cx : cxs) {
        const double r = std::sqrt(((px - cx) / ax) * ((px - cx) / ax) + ((py - cy) / ay) * ((py - cy) / ay));
        v -= field / (1.0 + std::exp((r - 1.0) * 12.0));
      }
      for (const auto& b : blobs) {
        const double d2 = (py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx);
        v += b.amp * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
      }
      v = gain * v + offset + rng.normal(0.0, noise);
      const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
      img.pixels[static_cast<std::size_t>(y) * size + x] = static_cast<std::uint16_t>(q);
    }
  }
  return img;
}

inline std::string padded(const std::string& prefix, int i, int width) {
  std::string n = std::to_string(i);
  if (static_cast<int>(n.size()) < width) n.insert(0, static_cast<std::size_t>(width - static_cast<int>(n.size())), '0');
  return prefix + n;
}

}  // namespace detail

// Exactly round(n * positive_fraction) positives. Patients hold 1..max
// images of a single class; sex, age and cohort are per patient. Record
// order is shuffled. Pixels of image i come from stream (seed, i) only.
inline SynthDataset synth_generate(const SynthOptions& o) {
  o.validate();
  const int n = o.n_images;
  const int n_pos = static_cast<int>(std::lround(n * o.positive_fraction));
  Rng rng(mix_seed(o.seed, 0x6d657461));  // metadata stream

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  std::fill(labels.begin(), labels.begin() + n_pos, 1);

  struct Patient {
    std::string id;
    Sex sex;
    std::optional<double> age;
    std::string cohort;
  };
  std::vector<Patient> patients;
  std::vector<int> patient_of(static_cast<std::size_t>(n));
  const int width = std::max(5, static_cast<int>(std::to_string(n).size()));
  auto new_patient = [&]() {
    Patient p;
    p.id = "p" + detail::padded(o.id_prefix, static_cast<int>(patients.size()), width);
    p.sex = rng.bernoulli(0.5) ? Sex::M : Sex::F;
    if (o.shifted) {
      p.cohort = "synth-ood";
      p.age = std::floor(rng.uniform(0.0, 19.0) * 10.0) / 10.0;
    } else {
      p.cohort = rng.bernoulli(0.5) ? "synth-a" : "synth-b";
      if (rng.bernoulli(0.05)) {
        p.age = std::nullopt;
      } else if (rng.bernoulli(0.15)) {
        p.age = std::floor(rng.uniform(0.0, 19.0) * 10.0) / 10.0;
      } else {
        p.age = std::floor(rng.uniform(19.0, 85.0));
      }
    }
    patients.push_back(p);
    return static_cast<int>(patients.size()) - 1;
  };
  // group consecutive images of the same class into patients
  for (int cls : {1, 0}) {
    int i = cls == 1 ? 0 : n_pos;
    const int end = cls == 1 ? n_pos : n;
    while (i < end) {
      const int k = std::min(end - i, 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.max_images_per_patient))));
      const int pid = new_patient();
      for (int j = 0; j < k; ++j) patient_of[static_cast<std::size_t>(i + j)] = pid;
      i += k;
    }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  SynthDataset ds;
  ds.manifest.meta.name = o.shifted ? "synth-ood" : "synth";
  ds.manifest.meta.channels = 1;
  ds.images.reserve(static_cast<std::size_t>(n));
  for (int idx = 0; idx < n; ++idx) {
    const int src = order[static_cast<std::size_t>(idx)];
    const Patient& p = patients[static_cast<std::size_t>(patient_of[static_cast<std::size_t>(src)])];
    ImageRecord r;
    r.image_id = detail::padded(o.id_prefix, idx, width);
    r.path = "images/" + r.image_id + ".png";
    r.patient_id = p.id;
    r.label = !o.labeled ? Label::unlabeled : (labels[static_cast<std::size_t>(src)] ? Label::positive : Label::negative);
    r.sex = p.sex;
    r.age_years = p.age;
    r.cohort = p.cohort;
    ds.manifest.records.push_back(r);
    Rng pix(mix_seed(o.seed, 0x1000000ULL + static_cast<std::uint64_t>(idx)));
    ds.images.push_back(detail::render_chest(o.image_size, labels[static_cast<std::size_t>(src)] == 1, o, pix));
  }

  // [0,1]-scale intensity statistics of the generated pixels
  double s = 0, s2 = 0;
  std::size_t cnt = 0;
  for (const auto& im : ds.images)
    for (auto v : im.pixels) {
      const double x = v / 255.0;
      s += x;
      s2 += x * x;
      ++cnt;
    }
  ds.manifest.meta.mean = s / static_cast<double>(cnt);
  ds.manifest.meta.std = std::sqrt(std::max(s2 / static_cast<double>(cnt) - ds.manifest.meta.mean * ds.manifest.meta.mean, 1e-12));
  return ds;
}

// Writes images/<id>.png and manifest.csv (+ sidecar) under `dir`.
inline std::filesystem::path write_synth_dataset(const std::filesystem::path& dir, SynthDataset ds) {
  std::filesystem::create_directories(dir / "images");
  for (std::size_t i = 0; i < ds.images.size(); ++i) write_png(dir / ds.manifest.records[i].path, ds.images[i]);
  ds.manifest.base_dir = dir;
  const auto path = dir / "manifest.csv";
  save_manifest(path, ds.manifest);
  return path;
}

}  // namespace cxrssl::data
