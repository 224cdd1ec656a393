// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cigmae/eval/probe.hpp"

namespace cigmae::eval {

/// The five design-choice rows. Adding a row is a code change by design.
enum class AblationVariant { full, single_stream_amp, dual_stream_mae, no_bt, no_aim };

inline constexpr std::array<AblationVariant, 5> kAllVariants{AblationVariant::full, AblationVariant::single_stream_amp,
                                                             AblationVariant::dual_stream_mae, AblationVariant::no_bt,
                                                             AblationVariant::no_aim};

inline std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::full: return "full";
    case AblationVariant::single_stream_amp: return "single-stream-amp";
    case AblationVariant::dual_stream_mae: return "dual-stream-mae";
    case AblationVariant::no_bt: return "no-bt";
    case AblationVariant::no_aim: return "no-aim";
  }
  return "?";
}

inline AblationVariant parse_variant(std::string_view s) {
  for (auto v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown ablation variant '" + std::string(s) +
                    "' (expected full, single-stream-amp, dual-stream-mae, no-bt or no-aim)");
}

/// The variant's flag set applied on top of `base`.
inline train::TrainConfig apply_variant(train::TrainConfig base, AblationVariant v) {
  base.single_stream = false;
  base.random_mask = false;
  base.no_bt = false;
  switch (v) {
    case AblationVariant::full: break;
    case AblationVariant::single_stream_amp: base.single_stream = true; break;
    case AblationVariant::dual_stream_mae:
      base.random_mask = true;
      base.no_bt = true;
      break;
    case AblationVariant::no_bt: base.no_bt = true; break;
    case AblationVariant::no_aim: base.random_mask = true; break;
  }
  return base;
}

/// Pre-training on every sample (labels unused), then a k-shot probe drawn
/// from a stratified train split and scored on the held-out split.
struct ExperimentConfig {
  train::TrainConfig train;
  ProbeConfig probe;
  double split_ratio = 0.5;  ///< fraction of each class in the probe's train pool
};

template <class T = float>
struct ExperimentResult {
  EvalReport report;
  train::MetricsLog log;
  std::optional<train::Trainer<T>> trainer;
  data::SplitSpec split;
};

template <class T = float>
ExperimentResult<T> run_experiment(const data::Dataset& ds, const ExperimentConfig& cfg, const std::string& name = "full",
                                   bool keep_trainer = false,
                                   const std::function<void(const train::StepRecord&)>& on_step = {}) {
  ExperimentResult<T> out;
  out.split = data::stratified_split(ds.all_labels(), cfg.split_ratio, cfg.train.seed);
  auto trainer = train::pretrain_run<T>(ds, cfg.train, on_step);
  out.report = probe_model(trainer.model(), ds, out.split, cfg.probe);
  out.report.variant = name;
  out.report.config_hash = cfg.train.hash();
  out.log = trainer.log();
  if (keep_trainer) out.trainer.emplace(std::move(trainer));
  return out;
}

template <class T = float>
EvalReport ablation_run(const data::Dataset& ds, const ExperimentConfig& base, AblationVariant v,
                        const std::function<void(const train::StepRecord&)>& on_step = {}) {
  ExperimentConfig cfg = base;
  cfg.train = apply_variant(base.train, v);
  return run_experiment<T>(ds, cfg, to_string(v), false, on_step).report;
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps

/// Sweepable axes and the config key each one sets.
inline std::string sweep_key(std::string_view param) {
  if (param == "mask-ratio" || param == "mask_ratio") return "mask_ratio";
  if (param == "w-bt" || param == "w_bt") return "w_bt";
  if (param == "d-policy" || param == "d_policy") return "d_policy";
  if (param == "bt-width" || param == "bt_width") return "bt_width";
  throw ConfigError("unknown sweep parameter '" + std::string(param) + "' (expected mask-ratio, w-bt, d-policy or bt-width)");
}

/// Default grid of each axis.
inline std::vector<std::string> default_sweep_values(std::string_view param) {
  const auto key = sweep_key(param);
  if (key == "mask_ratio") return {"0.5", "0.75", "0.9", "0.95"};
  if (key == "w_bt") return {"0", "0.05", "0.2", "0.5", "1"};
  if (key == "d_policy") return {"64", "128", "256", "512"};
  return {"256", "512", "1024", "2048"};
}

/// One report per value, each from a fresh pre-training run.
template <class T = float>
std::vector<EvalReport> sweep(const data::Dataset& ds, const ExperimentConfig& base, std::string_view param,
                              const std::vector<std::string>& values,
                              const std::function<void(const EvalReport&)>& on_report = {}) {
  const auto key = sweep_key(param);
  std::vector<ExperimentConfig> cfgs;
  for (const auto& v : values) {  // validate the whole grid before running anything
    ExperimentConfig c = base;
    c.train.set(key, v);
    c.train.validate();
    cfgs.push_back(c);
  }
  std::vector<EvalReport> out;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    out.push_back(run_experiment<T>(ds, cfgs[i], key + "=" + values[i]).report);
    if (on_report) on_report(out.back());
  }
  return out;
}

}  // namespace cigmae::eval
