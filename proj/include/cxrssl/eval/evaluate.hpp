#pragma once

#include "cxrssl/core/digest.hpp"
#include "cxrssl/data/manifest.hpp"
#include "cxrssl/data/preprocess.hpp"
#include "cxrssl/eval/report.hpp"
#include "cxrssl/train/checkpoint.hpp"
#include "cxrssl/train/engine.hpp"

#include <sstream>
#include <utility>

namespace cxrssl::eval {

inline data::PreprocessConfig input_config(const train::Checkpoint& c) {
  return {c.model.image_height, c.model.image_width, c.model.channels, c.input_mean, c.input_std};
}

inline std::string manifest_digest(const data::Manifest& m) {
  std::ostringstream ss;
  data::write_manifest(ss, m);
  return sha256_hex(ss.str());
}

// Scores every labeled image of `m` with the checkpoint as-is.
inline PredictionSet predict_manifest(const train::Checkpoint& c, const data::Manifest& m) {
  require_classification_head(c.student, c.model);
  for (const auto& r : m.records) {
    if (!r.labeled()) throw UnlabeledData("image '" + r.image_id + "' has no label");
  }
  const auto images = data::load_images<float>(m, input_config(c));
  const auto probs = train::predict(c, images);
  PredictionSet p;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    p.items.push_back({m.records[i].image_id, m.records[i].label_value(), static_cast<double>(probs[i])});
  }
  p.provenance["checkpoint_sha256"] = sha256_hex(train::serialize(c));
  p.provenance["manifest_sha256"] = manifest_digest(m);
  return p;
}

inline std::pair<PredictionSet, EvaluationReport> evaluate(const train::Checkpoint& c, const data::Manifest& m,
                                                           const EvalOptions& o = {}) {
  PredictionSet p = predict_manifest(c, m);
  EvaluationReport r = evaluate(p, o);
  return {std::move(p), r};
}

}  // namespace cxrssl::eval
