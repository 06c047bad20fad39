#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace cxrssl::eval {

using MetricFn = std::function<double(const std::vector<int>&, const std::vector<double>&)>;

struct BootstrapResult {
  double value = 0;
  double lo = 0;
  double hi = 0;
  int replicates = 0;  // resamples that entered the percentile estimate
  int skipped = 0;     // resamples dropped after exhausting redraws
};

// Linear-interpolation sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) throw UndefinedMetric("quantile of an empty sample");
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Case-resampling percentile bootstrap. A resample without both classes is
// redrawn up to `max_redraws` times, then skipped. The interval is widened
// if needed so it contains the full-sample value, and clipped to [0, 1].
inline BootstrapResult bootstrap_ci(const MetricFn& metric, const std::vector<int>& labels,
                                    const std::vector<double>& scores, int B = 2000, std::uint64_t seed = 0,
                                    double alpha = 0.05, int max_redraws = 100) {
  if (B < 1) throw InvalidArgument("bootstrap: B must be >= 1");
  if (!(alpha > 0 && alpha < 1)) throw OutOfRange("alpha must be in (0,1)");
  require_both_classes(labels, scores, "bootstrap_ci");
  BootstrapResult r;
  r.value = metric(labels, scores);
  const std::size_t n = labels.size();
  Rng rng(seed);
  std::vector<int> bl(n);
  std::vector<double> bs(n);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt <= max_redraws && !ok; ++attempt) {
      int pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(rng.below(n));
        bl[i] = labels[k];
        bs[i] = scores[k];
        pos += bl[i];
      }
      ok = pos > 0 && pos < static_cast<int>(n);
    }
    if (!ok) {
      ++r.skipped;
      continue;
    }
    stats.push_back(metric(bl, bs));
  }
  r.replicates = static_cast<int>(stats.size());
  if (stats.empty()) throw UndefinedMetric("bootstrap: every resample was single-class");
  std::sort(stats.begin(), stats.end());
  r.lo = std::clamp(std::min(quantile_sorted(stats, alpha / 2), r.value), 0.0, 1.0);
  r.hi = std::clamp(std::max(quantile_sorted(stats, 1 - alpha / 2), r.value), 0.0, 1.0);
  return r;
}

inline MetricFn accuracy_metric(double threshold = 0.5) {
  return [threshold](const std::vector<int>& l, const std::vector<double>& s) { return accuracy(l, s, threshold); };
}

inline MetricFn aupr_metric() {
  return [](const std::vector<int>& l, const std::vector<double>& s) { return aupr(l, s); };
}

}  // namespace cxrssl::eval
