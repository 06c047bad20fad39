#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/ssl/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace cxrssl::train {

enum class Phase { pretrain, probe, finetune };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::probe: return "probe";
    case Phase::finetune: return "finetune";
  }
  return "pretrain";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "probe") return Phase::probe;
  if (s == "finetune") return Phase::finetune;
  throw ConfigError("unknown phase '" + s + "'");
}

struct TrainConfig {
  Phase phase = Phase::pretrain;
  ssl::ObjectiveKind objective = ssl::ObjectiveKind::mae;
  int batch_size = 64;
  int epochs = 200;
  double lr_initial = 5e-4;
  double lr_min = 1e-6;
  int warmup_epochs = 10;
  double wd_start = 0.04;
  double wd_end = 0.4;
  bool constant_wd = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 3.0;  // global gradient norm cap in pretraining; 0 disables
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between periodic checkpoints; 0 = final only

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs)) {
      throw ConfigError("train.warmup_epochs must be < train.epochs");
    }
    if (!(lr_min >= 0) || !(lr_min <= lr_initial)) throw ConfigError("train.lr_min must be in [0, lr_initial]");
    if (!(wd_start >= 0) || !(wd_end >= 0)) throw ConfigError("weight decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(eps > 0)) {
      throw ConfigError("AdamW betas must be in [0,1) and eps > 0");
    }
    if (!(clip_norm >= 0)) throw ConfigError("train.clip_norm must be >= 0");
    if (phase == Phase::pretrain && objective == ssl::ObjectiveKind::supervised) {
      throw ConfigError("pretraining needs a self-supervised objective (mae, moco_v3, dino)");
    }
  }

  // Full-scale defaults for the supervised phases.
  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.phase = Phase::finetune;
    c.objective = ssl::ObjectiveKind::supervised;
    c.batch_size = 48;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"phase", to_string(c.phase)},
                     {"objective", ssl::to_string(c.objective)},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"lr_initial", c.lr_initial},
                     {"lr_min", c.lr_min},
                     {"warmup_epochs", c.warmup_epochs},
                     {"wd_start", c.wd_start},
                     {"wd_end", c.wd_end},
                     {"constant_wd", c.constant_wd},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"clip_norm", c.clip_norm},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.phase = parse_phase(j.at("phase").get<std::string>());
  c.objective = ssl::parse_objective(j.at("objective").get<std::string>());
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr_initial = j.at("lr_initial").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.warmup_epochs = j.at("warmup_epochs").get<int>();
  c.wd_start = j.at("wd_start").get<double>();
  c.wd_end = j.at("wd_end").get<double>();
  c.constant_wd = j.at("constant_wd").get<bool>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
}

}  // namespace cxrssl::train
