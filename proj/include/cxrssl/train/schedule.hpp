#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/train/config.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

namespace cxrssl::train {

struct ScheduleState {
  std::int64_t global_step = 0;
  std::int64_t steps_per_epoch = 1;
  double lr = 0;
  double wd = 0;

  bool operator==(const ScheduleState&) const = default;
};

// Learning rate and weight decay at `step` of epochs * steps_per_epoch.
//
// lr: linear warmup from 0 over the warmup steps, then
//     lr_min + (lr_initial - lr_min) * (1 + cos(pi * p)) / 2 with
//     p = (step - warmup) / (total - 1 - warmup).
// wd: wd_start + (wd_end - wd_start) * (1 - cos(pi * q)) / 2 with
//     q = step / (total - 1).
inline ScheduleState schedule_at(std::int64_t step, const TrainConfig& cfg, std::int64_t steps_per_epoch) {
  if (steps_per_epoch < 1) throw InvalidArgument("steps_per_epoch must be >= 1");
  const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  if (step < 0 || step >= total) {
    throw OutOfRange("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  }
  const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  ScheduleState s;
  s.global_step = step;
  s.steps_per_epoch = steps_per_epoch;
  if (step < warm) {
    s.lr = cfg.lr_initial * static_cast<double>(step) / static_cast<double>(warm);
  } else {
    const std::int64_t span = total - 1 - warm;
    const double p = span > 0 ? static_cast<double>(step - warm) / static_cast<double>(span) : 0.0;
    s.lr = cfg.lr_min + 0.5 * (cfg.lr_initial - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * p));
  }
  if (cfg.constant_wd) {
    s.wd = cfg.wd_start;
  } else {
    const double q = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 0.0;
    s.wd = cfg.wd_start + 0.5 * (cfg.wd_end - cfg.wd_start) * (1.0 - std::cos(std::numbers::pi * q));
  }
  return s;
}

inline void to_json(nlohmann::json& j, const ScheduleState& s) {
  j = nlohmann::json{{"global_step", s.global_step}, {"steps_per_epoch", s.steps_per_epoch}, {"lr", s.lr}, {"wd", s.wd}};
}

inline void from_json(const nlohmann::json& j, ScheduleState& s) {
  s.global_step = j.at("global_step").get<std::int64_t>();
  s.steps_per_epoch = j.at("steps_per_epoch").get<std::int64_t>();
  s.lr = j.at("lr").get<double>();
  s.wd = j.at("wd").get<double>();
}

}  // namespace cxrssl::train
