// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/stage_config.hpp"

#include <algorithm>
#include <cmath>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"

namespace ota {

double LrSchedule::lr_at(std::int64_t step, std::int64_t total_steps) const {
  double lr = initial;
  for (double m : milestones) {
    const auto at = static_cast<std::int64_t>(std::llround(m * static_cast<double>(total_steps)));
    if (step >= at) lr *= decay;
  }
  return lr;
}

LrSchedule LrSchedule::with_initial(double lr) const {
  LrSchedule s = *this;
  s.initial = lr;
  return s;
}

namespace {

void validate_common(const StageConfig& c) {
  if (c.batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (c.lr_grid.empty()) throw ValidationError("lr_grid must not be empty");
  for (std::size_t i = 1; i < c.lr_grid.size(); ++i)
    if (!(c.lr_grid[i] < c.lr_grid[i - 1])) throw ValidationError("lr_grid must be sorted descending");
  for (double lr : c.lr_grid)
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("lr_grid values must be finite and >= 0");
  if (c.wd_grid.empty()) throw ValidationError("wd_grid must not be empty");
  for (double wd : c.wd_grid)
    if (!(wd >= 0.0) || !std::isfinite(wd)) throw ValidationError("wd_grid values must be finite and >= 0");
  if (!std::is_sorted(c.lr_schedule.milestones.begin(), c.lr_schedule.milestones.end()))
    throw ValidationError("lr milestones must be ascending");
  for (double m : c.lr_schedule.milestones)
    if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("lr milestones are fractions in [0, 1]");
  if (!(c.lr_schedule.decay > 0.0)) throw ValidationError("lr decay must be positive");
  if (c.input.resize <= 0 || c.input.crop <= 0 || c.input.crop > c.input.resize)
    throw ValidationError("input pipeline needs 0 < crop <= resize");
  if (c.optimizer.momentum < 0.0 || c.optimizer.momentum >= 1.0)
    throw ValidationError("momentum must lie in [0, 1)");
}

std::string kind_name(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_nesterov"; }

OptimizerKind kind_from_name(const std::string& s) {
  if (s == "sgd_nesterov") return OptimizerKind::sgd_nesterov;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer kind '" + s + "'");
}

}  // namespace

void StageConfig::validate() const {
  if (steps <= 0) throw ValidationError("steps must be positive");
  validate_common(*this);
}

void StageConfig::validate_allow_zero_steps() const {
  if (steps < 0) throw ValidationError("steps must be non-negative");
  validate_common(*this);
}

nlohmann::json to_json(const StageConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"optimizer",
           {{"kind", kind_name(c.optimizer.kind)},
            {"momentum", c.optimizer.momentum},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"lr_schedule",
           {{"initial", c.lr_schedule.initial},
            {"milestones", c.lr_schedule.milestones},
            {"decay", c.lr_schedule.decay}}},
          {"lr_grid", c.lr_grid},
          {"wd_grid", c.wd_grid},
          {"input", {{"resize", c.input.resize}, {"crop", c.input.crop}}}};
}

StageConfig stage_config_from_json(const nlohmann::json& json, const StageConfig& defaults,
                                   const std::string& context) {
  StageConfig c = defaults;
  JsonFields f(json, context);
  f.read("steps", c.steps).read("batch_size", c.batch_size).read("lr_grid", c.lr_grid).read("wd_grid", c.wd_grid);
  if (auto* opt = f.child("optimizer")) {
    JsonFields o(*opt, f.path("optimizer"));
    std::string kind = kind_name(c.optimizer.kind);
    o.read("kind", kind).read("momentum", c.optimizer.momentum).read("weight_decay", c.optimizer.weight_decay);
    c.optimizer.kind = kind_from_name(kind);
    o.finish();
  }
  if (auto* sched = f.child("lr_schedule")) {
    JsonFields s(*sched, f.path("lr_schedule"));
    s.read("initial", c.lr_schedule.initial)
        .read("milestones", c.lr_schedule.milestones)
        .read("decay", c.lr_schedule.decay);
    s.finish();
  }
  if (auto* input = f.child("input")) {
    JsonFields i(*input, f.path("input"));
    i.read("resize", c.input.resize).read("crop", c.input.crop);
    i.finish();
  }
  f.finish();
  return c;
}

}  // namespace ota
