#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/ssl/views.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace cxrssl::ssl {

enum class ObjectiveKind { mae, moco_v3, dino, supervised };

inline std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::mae: return "mae";
    case ObjectiveKind::moco_v3: return "moco_v3";
    case ObjectiveKind::dino: return "dino";
    case ObjectiveKind::supervised: return "supervised";
  }
  return "mae";
}

inline ObjectiveKind parse_objective(const std::string& s) {
  if (s == "mae") return ObjectiveKind::mae;
  if (s == "moco_v3" || s == "moco") return ObjectiveKind::moco_v3;
  if (s == "dino") return ObjectiveKind::dino;
  if (s == "supervised") return ObjectiveKind::supervised;
  throw ConfigError("unknown objective '" + s + "'");
}

// Hyperparameters of the pretext objectives and their view pipelines.
// Zero sizes resolve against the backbone width at init time.
struct SslConfig {
  // masked reconstruction
  double mask_ratio = 0.75;
  bool norm_targets = true;
  int decoder_depth = 4;
  int decoder_dim = 0;    // 0 -> dim / 2
  int decoder_heads = 0;  // 0 -> backbone heads
  // contrastive
  double moco_tau = 0.2;
  double moco_momentum = 0.99;
  // distillation
  int dino_prototypes = 256;
  int dino_bottleneck = 0;  // 0 -> dim
  double dino_tau_t = 0.04;
  double dino_tau_s = 0.1;
  double dino_center_momentum = 0.9;
  double dino_momentum = 0.996;
  // projection / prediction heads
  int head_hidden = 0;  // 0 -> 4 * dim
  int head_out = 0;     // 0 -> dim
  // views
  double crop_scale_min = 0.4;
  double crop_scale_max = 1.0;
  double flip_p = 0.5;
  double jitter = 0.2;
  double blur_p = 0.5;

  void validate() const {
    if (!(mask_ratio >= 0 && mask_ratio < 1)) throw ConfigError("ssl.mask_ratio must be in [0,1)");
    if (decoder_depth < 0 || decoder_dim < 0 || decoder_heads < 0) throw ConfigError("ssl decoder sizes must be >= 0");
    if (!(moco_tau > 0) || !(dino_tau_t > 0) || !(dino_tau_s > 0)) throw ConfigError("ssl temperatures must be > 0");
    for (double m : {moco_momentum, dino_momentum, dino_center_momentum}) {
      if (!(m >= 0 && m <= 1)) throw ConfigError("ssl momenta must be in [0,1]");
    }
    if (dino_prototypes <= 0 || dino_bottleneck < 0 || head_hidden < 0 || head_out < 0) {
      throw ConfigError("ssl head sizes must be positive");
    }
    two_view_recipe().validate(2);
  }

  ViewAugment base_augment() const {
    ViewAugment a;
    a.crop_scale_min = crop_scale_min;
    a.crop_scale_max = crop_scale_max;
    a.flip_p = flip_p;
    a.jitter = jitter;
    return a;
  }

  // Global views for the contrastive and distillation objectives; blur
  // only on the first.
  ViewRecipe two_view_recipe() const {
    ViewRecipe r{{base_augment(), base_augment()}};
    r.views[0].blur_p = blur_p;
    return r;
  }

  // Single view for reconstruction: crop and flip only.
  ViewRecipe reconstruction_recipe() const {
    ViewAugment a = base_augment();
    a.jitter = 0;
    return ViewRecipe{{a}};
  }
};

inline void to_json(nlohmann::json& j, const SslConfig& c) {
  j = nlohmann::json{{"mask_ratio", c.mask_ratio},
                     {"norm_targets", c.norm_targets},
                     {"decoder_depth", c.decoder_depth},
                     {"decoder_dim", c.decoder_dim},
                     {"decoder_heads", c.decoder_heads},
                     {"moco_tau", c.moco_tau},
                     {"moco_momentum", c.moco_momentum},
                     {"dino_prototypes", c.dino_prototypes},
                     {"dino_bottleneck", c.dino_bottleneck},
                     {"dino_tau_t", c.dino_tau_t},
                     {"dino_tau_s", c.dino_tau_s},
                     {"dino_center_momentum", c.dino_center_momentum},
                     {"dino_momentum", c.dino_momentum},
                     {"head_hidden", c.head_hidden},
                     {"head_out", c.head_out},
                     {"crop_scale_min", c.crop_scale_min},
                     {"crop_scale_max", c.crop_scale_max},
                     {"flip_p", c.flip_p},
                     {"jitter", c.jitter},
                     {"blur_p", c.blur_p}};
}

inline void from_json(const nlohmann::json& j, SslConfig& c) {
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.norm_targets = j.at("norm_targets").get<bool>();
  c.decoder_depth = j.at("decoder_depth").get<int>();
  c.decoder_dim = j.at("decoder_dim").get<int>();
  c.decoder_heads = j.at("decoder_heads").get<int>();
  c.moco_tau = j.at("moco_tau").get<double>();
  c.moco_momentum = j.at("moco_momentum").get<double>();
  c.dino_prototypes = j.at("dino_prototypes").get<int>();
  c.dino_bottleneck = j.at("dino_bottleneck").get<int>();
  c.dino_tau_t = j.at("dino_tau_t").get<double>();
  c.dino_tau_s = j.at("dino_tau_s").get<double>();
  c.dino_center_momentum = j.at("dino_center_momentum").get<double>();
  c.dino_momentum = j.at("dino_momentum").get<double>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.head_out = j.at("head_out").get<int>();
  c.crop_scale_min = j.at("crop_scale_min").get<double>();
  c.crop_scale_max = j.at("crop_scale_max").get<double>();
  c.flip_p = j.at("flip_p").get<double>();
  c.jitter = j.at("jitter").get<double>();
  c.blur_p = j.at("blur_p").get<double>();
}

}  // namespace cxrssl::ssl
