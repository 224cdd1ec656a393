// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "cigmae/core/rng.hpp"
#include "cigmae/data/csi.hpp"

namespace cigmae::data {

/// Half-open subcarrier x time rectangle.
struct ActivityRegion {
  std::size_t s0 = 0, s1 = 0;
  std::size_t t0 = 0, t1 = 0;
  bool contains(std::size_t s, std::size_t t) const { return s >= s0 && s < s1 && t >= t0 && t < t1; }
  bool operator==(const ActivityRegion&) const = default;
};

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t per_class = 100;
  std::size_t antennas = 3;
  std::size_t subcarriers = 30;
  std::size_t timesteps = 200;
  double noise_std = 0.005;
  double activity_amplitude = 0.5;
  std::size_t band_height = 9;
  std::size_t burst_length = 60;
  /// Explicit per-class regions; when empty they are laid out automatically.
  std::vector<ActivityRegion> regions;
  bool preprocess = true;

  /// Class c's region. Automatic layout staggers bands across the subcarrier
  /// axis on multiples of 3 and alternates early/late bursts on multiples of 5.
  ActivityRegion region(std::size_t c) const {
    if (!regions.empty()) return regions.at(c);
    const std::size_t h = std::min(band_height, subcarriers), L = std::min(burst_length, timesteps);
    const std::size_t span = subcarriers - h;
    std::size_t s0 = classes > 1 ? static_cast<std::size_t>(std::lround(double(c) * double(span) / (3.0 * double(classes - 1)))) * 3
                                 : 0;
    s0 = std::min(s0, span);
    const double frac = (c % 2 == 0) ? 0.1 : 0.55;
    std::size_t t0 = static_cast<std::size_t>(std::lround(frac * double(timesteps) / 5.0)) * 5;
    t0 = std::min(t0, timesteps - L);
    return {s0, s0 + h, t0, t0 + L};
  }

  void validate() const {
    if (classes < 1 || per_class < 1 || antennas < 1 || subcarriers < 2 || timesteps < 2)
      throw ConfigError("synth: classes, per_class, antennas >= 1 and subcarriers, timesteps >= 2 required");
    if (!regions.empty() && regions.size() != classes)
      throw ConfigError("synth: " + std::to_string(regions.size()) + " regions given for " + std::to_string(classes) +
                        " classes");
    for (std::size_t c = 0; c < classes; ++c) {
      const auto r = region(c);
      if (r.s0 >= r.s1 || r.t0 >= r.t1 || r.s1 > subcarriers || r.t1 > timesteps)
        throw ConfigError("synth: invalid activity region for class " + std::to_string(c));
    }
    if (!(noise_std >= 0) || !(activity_amplitude >= 0)) throw ConfigError("synth: noise and amplitude must be >= 0");
  }
};

/// Generates a labelled dataset from a complex channel model. Background:
/// unit gain with a mild static frequency profile, random per-sample gain,
/// random linear phase distortion (offset + slope across subcarriers) and
/// additive complex noise. Activity: inside the class region a Hann-windowed
/// complex tone with a class-specific subcarrier phase slope and Doppler rate
/// is added, so amplitude and phase respond together.
inline Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using cd = std::complex<double>;
  constexpr double pi = std::numbers::pi;
  const std::size_t N = cfg.antennas, S = cfg.subcarriers, T = cfg.timesteps;
  const std::size_t per = N * S * T;

  Dataset raw;
  raw.manifest.count = cfg.classes * cfg.per_class;
  raw.manifest.antennas = static_cast<std::uint32_t>(N);
  raw.manifest.subcarriers = static_cast<std::uint32_t>(S);
  raw.manifest.timesteps = static_cast<std::uint32_t>(T);
  raw.manifest.classes = static_cast<std::uint32_t>(cfg.classes);
  raw.manifest.has_labels = true;
  raw.amplitude.resize(raw.size() * per);
  raw.phase.resize(raw.size() * per);
  raw.labels.resize(raw.size());

  const Rng root(seed);
  std::vector<cd> h(per);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const std::size_t c = i % cfg.classes;
    raw.labels[i] = static_cast<std::int32_t>(c);
    Rng rng = root.fork(i);
    const auto reg = cfg.region(c);
    const double gain = rng.uniform(0.8, 1.2);
    const double slope = rng.uniform(-0.3, 0.3);
    const double theta = 0.35 + 0.25 * double(c);                // subcarrier phase slope of the activity
    const double doppler = 0.04 + 0.015 * double(c);             // cycles per step
    const double m = cfg.activity_amplitude * rng.uniform(0.7, 1.3);
    const double psi0 = rng.uniform(-pi, pi);
    const double jitter = rng.uniform(0.9, 1.1);
    for (std::size_t n = 0; n < N; ++n) {
      const double offset = rng.uniform(-pi, pi);
      for (std::size_t s = 0; s < S; ++s) {
        const double profile = 1.0 + 0.05 * std::cos(2.0 * pi * double(s) / double(S) + double(n));
        const cd base = std::polar(gain * profile, offset + slope * double(s));
        for (std::size_t t = 0; t < T; ++t) {
          cd v = base + cd(rng.normal(0.0, cfg.noise_std), rng.normal(0.0, cfg.noise_std));
          if (reg.contains(s, t)) {
            const double u = (double(t - reg.t0) + 0.5) / double(reg.t1 - reg.t0);
            const double env = 0.5 - 0.5 * std::cos(2.0 * pi * u);
            const double ang = theta * double(s) + 2.0 * pi * doppler * jitter * double(t - reg.t0) + psi0 + double(n);
            v += gain * m * env * std::polar(1.0, ang) * std::polar(1.0, offset + slope * double(s));
          }
          h[(n * S + s) * T + t] = v;
        }
      }
    }
    auto amp = raw.values(i, Modality::amplitude);
    auto ph = raw.values(i, Modality::phase);
    for (std::size_t j = 0; j < per; ++j) {
      amp[j] = static_cast<float>(std::abs(h[j]));
      double p = std::arg(h[j]);
      if (p <= -pi) p = pi;
      ph[j] = static_cast<float>(p);
    }
  }
  if (!cfg.preprocess) return raw;
  return preprocess(raw);
}

}  // namespace cigmae::data
