// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/core/conv.hpp"
#include "cigmae/core/error.hpp"
#include "cigmae/data/csi.hpp"
#include "cigmae/model/alignment.hpp"

namespace cigmae::train {

enum class RecReduction { sum, mean };

/// Every pre-training hyperparameter. Defaults are the reference settings;
/// `desk()` is a reduced preset sized for a single CPU core.
struct TrainConfig {
  double mask_ratio = 0.95;
  Extent2 patch{3, 5};
  double w_rec = 1.0;
  double w_bt = 0.2;
  double w_aim = 1e-4;
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double lr = 1e-4;
  double policy_lr = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::size_t d_policy = 256;
  std::size_t policy_heads = 4;
  std::size_t policy_mlp_ratio = 4;
  std::size_t d_latent = 256;
  std::array<std::size_t, 3> channels{128, 256, 512};
  std::size_t bt_width = 1024;
  double bt_lambda = model::kDefaultRedundancyWeight;
  std::uint64_t seed = 0;
  bool single_stream = false;
  bool random_mask = false;
  bool no_bt = false;
  model::ReconKind recon_loss = model::ReconKind::mae;
  bool normalized_target = false;
  RecReduction rec_reduction = RecReduction::sum;
  /// Assert the gradient-flow matrix every N steps (0 disables).
  std::size_t grad_flow_check_every = 0;

  bool uses_policy() const { return !random_mask; }
  /// Projection heads exist for dual-stream runs unless the no-bt variant
  /// is selected. With w_bt = 0 they are built but never trained, which keeps
  /// paired-seed comparisons against w_bt > 0 on identical initial values.
  bool uses_bt() const { return !no_bt && !single_stream; }

  static TrainConfig desk() {
    TrainConfig c;
    c.epochs = 30;
    c.batch_size = 32;
    c.lr = 1e-3;
    c.policy_lr = 1e-3;
    c.d_policy = 64;
    c.policy_mlp_ratio = 2;
    c.channels = {32, 64, 128};
    c.bt_width = 256;
    return c;
  }

  model::BackboneConfig backbone(const data::DatasetManifest& m) const {
    model::BackboneConfig b;
    b.antennas = m.antennas;
    b.subcarriers = m.subcarriers;
    b.timesteps = m.timesteps;
    b.patch = patch;
    b.channels = channels;
    b.latent = d_latent;
    b.validate();
    return b;
  }

  void validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
    for (auto [name, v] : {std::pair{"w_rec", w_rec}, {"w_bt", w_bt}, {"w_aim", w_aim}, {"bt_lambda", bt_lambda},
                           {"weight_decay", weight_decay}, {"lr", lr}, {"policy_lr", policy_lr}})
      if (!(v >= 0.0)) throw ConfigError(std::string(name) + " must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (patch.h == 0 || patch.w == 0) throw ConfigError("patch extents must be >= 1");
    if (d_policy == 0 || policy_heads == 0 || d_policy % policy_heads)
      throw ConfigError("d_policy must be a positive multiple of policy_heads");
    if (policy_mlp_ratio == 0 || d_latent == 0 || bt_width == 0) throw ConfigError("widths must be >= 1");
    for (auto c : channels)
      if (c == 0) throw ConfigError("channels must be >= 1");
  }

  /// Canonical key=value text (one key per line, fixed order).
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [k, v] : entries()) os << k << " = " << v << "\n";
    return os.str();
  }

  /// FNV-1a of the canonical text with `epochs` left out, so that a run can
  /// be resumed with a longer schedule.
  std::uint64_t hash() const {
    TrainConfig c = *this;
    c.epochs = 1;
    c.grad_flow_check_every = 0;
    return io::fnv1a(c.to_text());
  }

  void set(const std::string& key, const std::string& value);

  std::vector<std::pair<std::string, std::string>> entries() const {
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    return {
        {"mask_ratio", num(mask_ratio)},
        {"patch", std::to_string(patch.h) + "x" + std::to_string(patch.w)},
        {"w_rec", num(w_rec)},
        {"w_bt", num(w_bt)},
        {"w_aim", num(w_aim)},
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"lr", num(lr)},
        {"policy_lr", num(policy_lr)},
        {"weight_decay", num(weight_decay)},
        {"beta1", num(beta1)},
        {"beta2", num(beta2)},
        {"d_policy", std::to_string(d_policy)},
        {"policy_heads", std::to_string(policy_heads)},
        {"policy_mlp_ratio", std::to_string(policy_mlp_ratio)},
        {"d_latent", std::to_string(d_latent)},
        {"channels", std::to_string(channels[0]) + "," + std::to_string(channels[1]) + "," + std::to_string(channels[2])},
        {"bt_width", std::to_string(bt_width)},
        {"bt_lambda", num(bt_lambda)},
        {"seed", std::to_string(seed)},
        {"single_stream", flag(single_stream)},
        {"random_mask", flag(random_mask)},
        {"no_bt", flag(no_bt)},
        {"recon_loss", recon_loss == model::ReconKind::mae ? "mae" : "mse"},
        {"normalized_target", flag(normalized_target)},
        {"rec_reduction", rec_reduction == RecReduction::sum ? "sum" : "mean"},
        {"grad_flow_check_every", std::to_string(grad_flow_check_every)},
    };
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace detail

inline void TrainConfig::set(const std::string& key, const std::string& raw) {
  using namespace detail;
  const std::string v = trim(raw);
  auto sz = [&] { return static_cast<std::size_t>(parse_uint(key, v)); };
  if (key == "mask_ratio") mask_ratio = parse_double(key, v);
  else if (key == "patch") {
    const auto parts = split(v, 'x');
    if (parts.size() != 2) throw ConfigError("config: 'patch' expects HxW, got '" + v + "'");
    patch = {static_cast<std::size_t>(parse_uint(key, parts[0])), static_cast<std::size_t>(parse_uint(key, parts[1]))};
  } else if (key == "w_rec") w_rec = parse_double(key, v);
  else if (key == "w_bt") w_bt = parse_double(key, v);
  else if (key == "w_aim") w_aim = parse_double(key, v);
  else if (key == "epochs") epochs = sz();
  else if (key == "batch_size") batch_size = sz();
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "policy_lr") policy_lr = parse_double(key, v);
  else if (key == "weight_decay") weight_decay = parse_double(key, v);
  else if (key == "beta1") beta1 = parse_double(key, v);
  else if (key == "beta2") beta2 = parse_double(key, v);
  else if (key == "d_policy") d_policy = sz();
  else if (key == "policy_heads") policy_heads = sz();
  else if (key == "policy_mlp_ratio") policy_mlp_ratio = sz();
  else if (key == "d_latent") d_latent = sz();
  else if (key == "channels") {
    const auto parts = split(v, ',');
    if (parts.size() != 3) throw ConfigError("config: 'channels' expects three comma-separated widths");
    for (std::size_t i = 0; i < 3; ++i) channels[i] = static_cast<std::size_t>(parse_uint(key, parts[i]));
  } else if (key == "bt_width") bt_width = sz();
  else if (key == "bt_lambda") bt_lambda = parse_double(key, v);
  else if (key == "seed") seed = parse_uint(key, v);
  else if (key == "single_stream") single_stream = parse_bool(key, v);
  else if (key == "random_mask") random_mask = parse_bool(key, v);
  else if (key == "no_bt") no_bt = parse_bool(key, v);
  else if (key == "recon_loss") {
    if (v == "mae") recon_loss = model::ReconKind::mae;
    else if (v == "mse") recon_loss = model::ReconKind::mse;
    else throw ConfigError("config: 'recon_loss' expects mae or mse, got '" + v + "'");
  } else if (key == "normalized_target") normalized_target = parse_bool(key, v);
  else if (key == "rec_reduction") {
    if (v == "sum") rec_reduction = RecReduction::sum;
    else if (v == "mean") rec_reduction = RecReduction::mean;
    else throw ConfigError("config: 'rec_reduction' expects sum or mean, got '" + v + "'");
  } else if (key == "grad_flow_check_every") grad_flow_check_every = sz();
  else throw ConfigError("config: unknown key '" + key + "'");
}

/// Applies `key = value` lines on top of `base`. '#' starts a comment;
/// a line `preset = desk` resets to the desk preset before later keys.
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value == "desk") base = TrainConfig::desk();
      else if (value == "reference") base = TrainConfig{};
      else throw ConfigError("config: unknown preset '" + value + "'");
      continue;
    }
    base.set(key, value);
  }
  base.validate();
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  return parse_config(io::read_file(path), std::move(base));
}

}  // namespace cigmae::train
