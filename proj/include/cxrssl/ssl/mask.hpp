#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace cxrssl::ssl {

// Both index lists are sorted ascending.
struct MaskPlan {
  double mask_ratio = 0;
  std::vector<int> masked;
  std::vector<int> visible;

  int token_count() const { return static_cast<int>(masked.size() + visible.size()); }
};

inline int masked_count(int n_tokens, double mask_ratio) {
  return static_cast<int>(std::lround(mask_ratio * n_tokens));
}

inline MaskPlan plan_mask(int n_tokens, double mask_ratio, std::uint64_t seed) {
  if (!(mask_ratio >= 0 && mask_ratio < 1)) {
    throw OutOfRange("mask ratio " + std::to_string(mask_ratio) + " outside [0,1)");
  }
  if (n_tokens <= 0) throw InvalidArgument("plan_mask: n_tokens must be positive");
  const int k = masked_count(n_tokens, mask_ratio);
  if (k >= n_tokens) {
    throw OutOfRange("mask ratio " + std::to_string(mask_ratio) + " leaves no visible token of " +
                     std::to_string(n_tokens));
  }
  std::vector<int> idx(static_cast<std::size_t>(n_tokens));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  MaskPlan plan;
  plan.mask_ratio = mask_ratio;
  plan.masked.assign(idx.begin(), idx.begin() + k);
  plan.visible.assign(idx.begin() + k, idx.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

// One plan per sample, each from its own stream.
inline std::vector<MaskPlan> plan_masks(int batch, int n_tokens, double mask_ratio, std::uint64_t seed) {
  std::vector<MaskPlan> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) out.push_back(plan_mask(n_tokens, mask_ratio, mix_seed(seed, static_cast<std::uint64_t>(b))));
  return out;
}

}  // namespace cxrssl::ssl
