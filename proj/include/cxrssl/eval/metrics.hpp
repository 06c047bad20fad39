#pragma once

#include "cxrssl/core/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace cxrssl::eval {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

inline ClassCounts check_inputs(const std::vector<int>& labels, const std::vector<double>& scores, const char* what) {
  if (labels.size() != scores.size()) {
    throw InvalidArgument(std::string(what) + ": " + std::to_string(labels.size()) + " labels but " +
                          std::to_string(scores.size()) + " scores");
  }
  if (labels.empty()) throw UndefinedMetric(std::string(what) + ": empty input");
  ClassCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++c.pos;
    } else if (labels[i] == 0) {
      ++c.neg;
    } else {
      throw InvalidArgument(std::string(what) + ": label " + std::to_string(labels[i]) + " is not 0/1");
    }
    if (!std::isfinite(scores[i])) throw NonFiniteError(std::string(what) + ": score " + std::to_string(i) + " is not finite");
  }
  return c;
}

inline ClassCounts require_both_classes(const std::vector<int>& labels, const std::vector<double>& scores,
                                        const char* what) {
  const ClassCounts c = check_inputs(labels, scores, what);
  if (c.pos == 0 || c.neg == 0) throw UndefinedMetric(std::string(what) + ": needs at least one positive and one negative");
  return c;
}

// 1-based ranks, ties sharing the average of their positions.
inline std::vector<double> midranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
    i = j + 1;
  }
  return r;
}

// Mann-Whitney AUC from the rank sum of the positives.
inline double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  const ClassCounts c = require_both_classes(labels, scores, "roc_auc");
  const auto r = midranks(scores);
  double rsum = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (labels[i] == 1) rsum += r[i];
  }
  const double np = static_cast<double>(c.pos), nn = static_cast<double>(c.neg);
  return (rsum - np * (np + 1) / 2) / (np * nn);
}

// Precision-recall step integral: descending sweep, tied scores as one
// group, sum of recall increments times precision.
inline double aupr(const std::vector<int>& labels, const std::vector<double>& scores) {
  const ClassCounts c = check_inputs(labels, scores, "aupr");
  if (c.pos == 0) throw UndefinedMetric("aupr: no positives");
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0, tp = 0, fp = 0, prev_recall = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    const double recall = tp / static_cast<double>(c.pos);
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return area;
}

struct Confusion {
  double acc = 0;
  double tpr = std::numeric_limits<double>::quiet_NaN();  // sensitivity
  double tnr = std::numeric_limits<double>::quiet_NaN();  // specificity
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// score >= threshold counts as a positive call.
inline Confusion confusion_metrics(const std::vector<int>& labels, const std::vector<double>& scores,
                                   double threshold = 0.5) {
  check_inputs(labels, scores, "confusion_metrics");
  if (!(threshold >= 0.0) || std::isnan(threshold)) throw OutOfRange("threshold must be >= 0");
  Confusion m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool call = scores[i] >= threshold;
    if (labels[i] == 1) {
      (call ? m.tp : m.fn) += 1;
    } else {
      (call ? m.fp : m.tn) += 1;
    }
  }
  m.acc = static_cast<double>(m.tp + m.tn) / static_cast<double>(labels.size());
  if (m.tp + m.fn > 0) m.tpr = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (m.tn + m.fp > 0) m.tnr = static_cast<double>(m.tn) / static_cast<double>(m.tn + m.fp);
  return m;
}

inline double accuracy(const std::vector<int>& labels, const std::vector<double>& scores, double threshold = 0.5) {
  return confusion_metrics(labels, scores, threshold).acc;
}

struct RocPoint {
  double fpr, tpr, threshold;
};

struct PrPoint {
  double recall, precision, threshold;
};

// (0,0) at threshold +inf, then one point per distinct score, descending.
inline std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  const ClassCounts c = require_both_classes(labels, scores, "roc_curve");
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({fp / static_cast<double>(c.neg), tp / static_cast<double>(c.pos), scores[idx[i]]});
    i = j;
  }
  return pts;
}

inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double a = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2;
  return a;
}

// (recall 0, precision 1) at threshold +inf, then one point per distinct
// score, descending.
inline std::vector<PrPoint> pr_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  const ClassCounts c = check_inputs(labels, scores, "pr_curve");
  if (c.pos == 0) throw UndefinedMetric("pr_curve: no positives");
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<PrPoint> pts{{0.0, 1.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] == 1 ? tp : fp) += 1;
      ++j;
    }
    pts.push_back({tp / static_cast<double>(c.pos), tp / (tp + fp), scores[idx[i]]});
    i = j;
  }
  return pts;
}

struct Interval {
  double value = 0;
  double lo = 0;
  double hi = 0;
};

struct DelongResult {
  double auc = 0;
  double variance = 0;
  double lo = 0;
  double hi = 0;
};

// Structural components from midranks (O(n log n)):
//   V10_i = (R_i - Rx_i) / n_neg for positive i,
//   V01_j = 1 - (R_j - Ry_j) / n_pos for negative j,
// where R is the rank among all scores and Rx/Ry the rank within the class.
// var = S10 / n_pos + S01 / n_neg with unbiased sample variances.
inline DelongResult delong(const std::vector<int>& labels, const std::vector<double>& scores, double alpha = 0.05) {
  const ClassCounts c = require_both_classes(labels, scores, "delong_ci");
  if (!(alpha > 0 && alpha < 1)) throw OutOfRange("alpha must be in (0,1)");
  std::vector<double> xs, ys;
  xs.reserve(c.pos);
  ys.reserve(c.neg);
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? xs : ys).push_back(scores[i]);
  const auto rz = midranks(scores);
  const auto rx = midranks(xs);
  const auto ry = midranks(ys);
  const double m = static_cast<double>(c.pos), n = static_cast<double>(c.neg);
  std::vector<double> v10, v01;
  v10.reserve(c.pos);
  v01.reserve(c.neg);
  std::size_t ix = 0, iy = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      v10.push_back((rz[i] - rx[ix++]) / n);
    } else {
      v01.push_back(1.0 - (rz[i] - ry[iy++]) / m);
    }
  }
  auto mean_var = [](const std::vector<double>& v) {
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::pair<double, double>{mu, v.size() > 1 ? s / static_cast<double>(v.size() - 1) : 0.0};
  };
  const double s10 = mean_var(v10).second;
  const double s01 = mean_var(v01).second;
  DelongResult r;
  r.auc = roc_auc(labels, scores);
  r.variance = s10 / m + s01 / n;
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2);
  const double half = z * std::sqrt(std::max(0.0, r.variance));
  r.lo = std::clamp(r.auc - half, 0.0, 1.0);
  r.hi = std::clamp(r.auc + half, 0.0, 1.0);
  return r;
}

}  // namespace cxrssl::eval
