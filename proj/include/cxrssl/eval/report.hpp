#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/data/manifest.hpp"
#include "cxrssl/eval/bootstrap.hpp"
#include "cxrssl/eval/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cxrssl::eval {

struct Prediction {
  std::string image_id;
  int label = 0;
  double score = 0;
};

struct PredictionSet {
  std::vector<Prediction> items;
  nlohmann::json provenance = nlohmann::json::object();

  std::vector<int> labels() const {
    std::vector<int> v;
    v.reserve(items.size());
    for (const auto& p : items) v.push_back(p.label);
    return v;
  }
  std::vector<double> scores() const {
    std::vector<double> v;
    v.reserve(items.size());
    for (const auto& p : items) v.push_back(p.score);
    return v;
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_predictions(std::ostream& out, const PredictionSet& p) {
  out << "image_id,label,score\n";
  for (const auto& r : p.items) out << data::detail::csv_field(r.image_id) << ',' << r.label << ',' << format_double(r.score) << '\n';
}

inline PredictionSet parse_predictions(std::istream& in, const std::string& source = "predictions") {
  PredictionSet p;
  std::vector<std::string> f;
  int line = 0;
  if (!data::detail::read_csv_row(in, f, line)) throw ValidationError(source + ": empty file");
  if (!f.empty() && f[0].rfind("\xEF\xBB\xBF", 0) == 0) f[0] = f[0].substr(3);
  if (f != std::vector<std::string>{"image_id", "label", "score"}) {
    throw ValidationError(source + ": header must be image_id,label,score");
  }
  while (data::detail::read_csv_row(in, f, line)) {
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 3) throw ValidationError(source + ": line " + std::to_string(line) + " has " + std::to_string(f.size()) + " fields");
    Prediction r;
    r.image_id = f[0];
    if (f[1] != "0" && f[1] != "1") throw ValidationError(source + ": line " + std::to_string(line) + ", field 'label'");
    r.label = f[1] == "1" ? 1 : 0;
    try {
      std::size_t used = 0;
      r.score = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ValidationError(source + ": line " + std::to_string(line) + ", field 'score'");
    }
    if (!std::isfinite(r.score) || r.score < 0 || r.score > 1) {
      throw ValidationError(source + ": line " + std::to_string(line) + ", score outside [0,1]");
    }
    p.items.push_back(std::move(r));
  }
  return p;
}

inline void save_predictions(const std::filesystem::path& path, const PredictionSet& p) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_predictions(out, p);
}

inline PredictionSet load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_predictions(in, path.string());
}

struct EvalOptions {
  double threshold = 0.5;
  int bootstrap_reps = 2000;
  std::uint64_t seed = 0;
  double alpha = 0.05;
};

struct EvaluationReport {
  double acc = 0, acc_lo = 0, acc_hi = 0;
  double aupr = 0, aupr_lo = 0, aupr_hi = 0;
  double auc = 0, auc_lo = 0, auc_hi = 0;
  double tpr = 0, tnr = 0;
  double threshold = 0.5;
  std::size_t n_pos = 0, n_neg = 0;
};

inline nlohmann::json to_json(const EvaluationReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  j["acc"] = r.acc;
  j["acc_ci"] = {r.acc_lo, r.acc_hi};
  j["aupr"] = r.aupr;
  j["aupr_ci"] = {r.aupr_lo, r.aupr_hi};
  j["auc"] = r.auc;
  j["auc_ci"] = {r.auc_lo, r.auc_hi};
  j["tpr"] = num(r.tpr);
  j["tnr"] = num(r.tnr);
  j["threshold"] = r.threshold;
  j["n_pos"] = r.n_pos;
  j["n_neg"] = r.n_neg;
  return j;
}

inline std::string report_text(const EvaluationReport& r) { return to_json(r).dump(2) + "\n"; }

inline EvaluationReport evaluate(const PredictionSet& p, const EvalOptions& o = {}) {
  const auto labels = p.labels();
  const auto scores = p.scores();
  const ClassCounts c = require_both_classes(labels, scores, "evaluate");
  EvaluationReport r;
  r.threshold = o.threshold;
  r.n_pos = c.pos;
  r.n_neg = c.neg;
  const Confusion cm = confusion_metrics(labels, scores, o.threshold);
  r.tpr = cm.tpr;
  r.tnr = cm.tnr;
  const auto acc = bootstrap_ci(accuracy_metric(o.threshold), labels, scores, o.bootstrap_reps, mix_seed(o.seed, 1), o.alpha);
  r.acc = acc.value;
  r.acc_lo = acc.lo;
  r.acc_hi = acc.hi;
  const auto ap = bootstrap_ci(aupr_metric(), labels, scores, o.bootstrap_reps, mix_seed(o.seed, 2), o.alpha);
  r.aupr = ap.value;
  r.aupr_lo = ap.lo;
  r.aupr_hi = ap.hi;
  const auto d = delong(labels, scores, o.alpha);
  r.auc = d.auc;
  r.auc_lo = d.lo;
  r.auc_hi = d.hi;
  return r;
}

inline void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& pts) {
  out << "fpr,tpr,threshold\n";
  for (const auto& p : pts) out << format_double(p.fpr) << ',' << format_double(p.tpr) << ',' << format_double(p.threshold) << '\n';
}

inline void write_pr_csv(std::ostream& out, const std::vector<PrPoint>& pts) {
  out << "recall,precision,threshold\n";
  for (const auto& p : pts) {
    out << format_double(p.recall) << ',' << format_double(p.precision) << ',' << format_double(p.threshold) << '\n';
  }
}

}  // namespace cxrssl::eval
