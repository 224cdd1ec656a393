// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cigmae/core/tensor.hpp"

namespace cigmae::data {

enum class Modality : std::uint8_t { amplitude = 0, phase = 1 };

inline const char* to_string(Modality m) { return m == Modality::amplitude ? "amplitude" : "phase"; }

enum class NormalizationMode : std::uint8_t { none = 0, per_sample = 1, global = 2 };

inline const char* to_string(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::none: return "none";
    case NormalizationMode::per_sample: return "per-sample";
    case NormalizationMode::global: return "global";
  }
  return "?";
}

/// Statistics recorded with a dataset. For `global` mode these are the
/// statistics that were applied; otherwise they are zero.
struct NormalizationInfo {
  NormalizationMode mode = NormalizationMode::none;
  double amplitude_mean = 0, amplitude_std = 0;
  double phase_mean = 0, phase_std = 0;
  bool operator==(const NormalizationInfo&) const = default;
};

struct DatasetManifest {
  std::uint64_t count = 0;
  std::uint32_t antennas = 0;     // N
  std::uint32_t subcarriers = 0;  // S
  std::uint32_t timesteps = 0;    // T
  std::uint32_t classes = 0;      // C, 0 when unlabeled
  bool has_labels = false;
  std::string modality_order = "amplitude,phase";
  NormalizationInfo normalization;

  std::size_t sample_values() const { return std::size_t(antennas) * subcarriers * timesteps; }
  Shape sample_shape() const { return {antennas, subcarriers, timesteps}; }
  bool operator==(const DatasetManifest&) const = default;
};

/// One synchronised amplitude/phase pair, each [N, S, T].
template <class T>
struct CsiSample {
  Tensor<T> amplitude;
  Tensor<T> phase;
  std::optional<int> label;
};

/// In-memory dataset: float32 amplitude and phase blocks, sample-major.
struct Dataset {
  DatasetManifest manifest;
  std::vector<float> amplitude;
  std::vector<float> phase;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return static_cast<std::size_t>(manifest.count); }

  std::span<const float> values(std::size_t i, Modality m) const {
    const auto n = manifest.sample_values();
    const auto& block = m == Modality::amplitude ? amplitude : phase;
    return std::span<const float>(block).subspan(i * n, n);
  }
  std::span<float> values(std::size_t i, Modality m) {
    const auto n = manifest.sample_values();
    auto& block = m == Modality::amplitude ? amplitude : phase;
    return std::span<float>(block).subspan(i * n, n);
  }

  template <class T>
  CsiSample<T> sample(std::size_t i) const {
    auto conv = [&](Modality m) {
      auto v = values(i, m);
      return Tensor<T>(manifest.sample_shape(), std::vector<T>(v.begin(), v.end()));
    };
    CsiSample<T> s{conv(Modality::amplitude), conv(Modality::phase), std::nullopt};
    if (manifest.has_labels) s.label = labels[i];
    return s;
  }

  /// Stacks the selected samples of one modality into [B, N, S, T].
  template <class T>
  Tensor<T> gather(std::span<const std::size_t> indices, Modality m) const {
    const auto n = manifest.sample_values();
    std::vector<T> out;
    out.reserve(indices.size() * n);
    for (auto i : indices) {
      if (i >= size()) throw DataError("gather: index " + std::to_string(i) + " out of range");
      auto v = values(i, m);
      out.insert(out.end(), v.begin(), v.end());
    }
    return Tensor<T>(Shape{indices.size(), manifest.antennas, manifest.subcarriers, manifest.timesteps}, std::move(out));
  }

  std::vector<int> labels_of(std::span<const std::size_t> indices) const {
    if (!manifest.has_labels) throw DataError("dataset has no labels");
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
  }

  std::vector<int> all_labels() const { return std::vector<int>(labels.begin(), labels.end()); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset d;
    d.manifest = manifest;
    d.manifest.count = indices.size();
    for (auto i : indices) {
      auto a = values(i, Modality::amplitude), p = values(i, Modality::phase);
      d.amplitude.insert(d.amplitude.end(), a.begin(), a.end());
      d.phase.insert(d.phase.end(), p.begin(), p.end());
      if (manifest.has_labels) d.labels.push_back(labels.at(i));
    }
    return d;
  }

  /// Throws DataError when blocks or labels disagree with the manifest.
  void validate() const {
    const auto n = manifest.sample_values() * size();
    if (amplitude.size() != n || phase.size() != n) throw DataError("dataset payload does not match manifest shape");
    if (manifest.has_labels) {
      if (labels.size() != size()) throw DataError("dataset label count does not match sample count");
      for (auto l : labels)
        if (l < 0 || static_cast<std::uint32_t>(l) >= manifest.classes)
          throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(manifest.classes) + ")");
    }
  }
};

// ---------------------------------------------------------------------------
// Preprocessing

/// Amplitude and phase of re + j*im; phase in (-pi, pi], (0, 0) maps to (0, 0).
template <class T>
std::pair<Tensor<T>, Tensor<T>> decompose_complex(const Tensor<T>& re, const Tensor<T>& im) {
  if (re.shape() != im.shape()) throw DimensionError("decompose_complex: real/imaginary shapes differ");
  std::vector<T> amp(re.numel()), ph(re.numel());
  for (std::size_t i = 0; i < amp.size(); ++i) {
    const T r = re.at(i), m = im.at(i);
    amp[i] = std::hypot(r, m);
    T p = std::atan2(m, r);
    if (p <= -std::numbers::pi_v<T>) p = std::numbers::pi_v<T>;
    ph[i] = p;
  }
  return {Tensor<T>(re.shape(), std::move(amp)), Tensor<T>(re.shape(), std::move(ph))};
}

namespace detail {

/// Unwraps one subcarrier profile in place, then removes its least-squares line.
template <class T>
void calibrate_profile(T* v, std::size_t n, std::size_t stride) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double offset = 0.0;
  double prev = v[0];
  std::vector<double> u(n);
  u[0] = prev;
  for (std::size_t k = 1; k < n; ++k) {
    const double raw = v[k * stride];
    const double d = raw - prev;
    if (std::abs(d) > std::numbers::pi) offset -= two_pi * std::round(d / two_pi);
    prev = raw;
    u[k] = raw + offset;
  }
  const double kbar = (double(n) - 1.0) / 2.0;
  double ubar = 0;
  for (double x : u) ubar += x;
  ubar /= double(n);
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sxy += (double(k) - kbar) * (u[k] - ubar);
    sxx += (double(k) - kbar) * (double(k) - kbar);
  }
  const double slope = sxy / sxx;
  for (std::size_t k = 0; k < n; ++k) v[k * stride] = static_cast<T>(u[k] - ubar - slope * (double(k) - kbar));
}

}  // namespace detail

/// Linear phase calibration of [N, S, T]: for every antenna and timestep the
/// subcarrier profile is unwrapped and its least-squares line removed.
template <class T>
Tensor<T> calibrate_phase(const Tensor<T>& phase) {
  if (phase.rank() != 3) throw DimensionError("calibrate_phase: expected [N, S, T], got " + cigmae::to_string(phase.shape()));
  const std::size_t N = phase.dim(0), S = phase.dim(1), Tn = phase.dim(2);
  if (S < 2) throw DataError("calibrate_phase: need at least 2 subcarriers");
  std::vector<T> out(phase.values().begin(), phase.values().end());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t t = 0; t < Tn; ++t) detail::calibrate_profile(out.data() + n * S * Tn + t, S, Tn);
  return Tensor<T>(phase.shape(), std::move(out));
}

struct ZScoreStats {
  double mean = 0;
  double std = 1;
};

template <class V>
ZScoreStats compute_stats(std::span<const V> x) {
  double m = 0;
  for (V v : x) m += v;
  m /= double(x.size());
  double s = 0;
  for (V v : x) s += (v - m) * (v - m);
  return {m, std::sqrt(s / double(x.size()))};
}

inline constexpr double kZScoreEps = 1e-8;

/// (x - mean) / (std + 1e-8); statistics over all elements unless supplied.
template <class T>
Tensor<T> zscore_normalize(const Tensor<T>& x, std::optional<ZScoreStats> stats = std::nullopt) {
  const ZScoreStats s = stats ? *stats : compute_stats(x.values());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>((x.at(i) - s.mean) / (s.std + kZScoreEps));
  return Tensor<T>(x.shape(), std::move(out));
}

/// Linear interpolation of [N, S, T_in] at T_out positions evenly spanning
/// [0, T_in - 1]. Both endpoints are reproduced exactly.
template <class T>
Tensor<T> resample_time(const Tensor<T>& x, std::size_t t_out) {
  if (x.rank() != 3) throw DimensionError("resample_time: expected [N, S, T], got " + cigmae::to_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), t_in = x.dim(2);
  if (t_in < 2 || t_out < 2) throw DataError("resample_time: need T_in >= 2 and T_out >= 2");
  std::vector<T> out(rows * t_out);
  const std::size_t den = t_out - 1;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.values().data() + r * t_in;
    for (std::size_t j = 0; j < t_out; ++j) {
      const std::size_t num = j * (t_in - 1);
      const std::size_t lo = num / den, rem = num % den;
      if (rem == 0) {
        out[r * t_out + j] = src[lo];
      } else {
        const double f = double(rem) / double(den);
        out[r * t_out + j] = static_cast<T>((1.0 - f) * src[lo] + f * src[lo + 1]);
      }
    }
  }
  return Tensor<T>(Shape{x.dim(0), x.dim(1), t_out}, std::move(out));
}

struct PreprocessOptions {
  bool calibrate_phase = true;
  NormalizationMode normalization = NormalizationMode::per_sample;
  /// Required for `global` mode: samples whose statistics define the
  /// normalisation (typically the training split).
  std::vector<std::size_t> stats_from;
  std::optional<std::size_t> resample_to;
};

/// Applies phase calibration, optional resampling and z-scoring to a raw
/// dataset (normalization mode `none`).
inline Dataset preprocess(const Dataset& raw, const PreprocessOptions& opt = {}) {
  if (raw.manifest.normalization.mode != NormalizationMode::none)
    throw DataError("preprocess: dataset is already normalised (" + std::string(to_string(raw.manifest.normalization.mode)) + ")");
  Dataset out;
  out.manifest = raw.manifest;
  out.labels = raw.labels;
  const std::size_t t_out = opt.resample_to.value_or(raw.manifest.timesteps);
  out.manifest.timesteps = static_cast<std::uint32_t>(t_out);
  const Shape shape = raw.manifest.sample_shape();

  std::vector<Tensor<double>> amps, phases;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto a = raw.values(i, Modality::amplitude), p = raw.values(i, Modality::phase);
    Tensor<double> ta(shape, std::vector<double>(a.begin(), a.end()));
    Tensor<double> tp(shape, std::vector<double>(p.begin(), p.end()));
    if (opt.calibrate_phase) tp = calibrate_phase(tp);
    if (opt.resample_to) {
      ta = resample_time(ta, t_out);
      tp = resample_time(tp, t_out);
    }
    amps.push_back(std::move(ta));
    phases.push_back(std::move(tp));
  }

  std::optional<ZScoreStats> ga, gp;
  if (opt.normalization == NormalizationMode::global) {
    if (opt.stats_from.empty()) throw DataError("preprocess: global normalisation needs a statistics subset");
    std::vector<double> va, vp;
    for (auto i : opt.stats_from) {
      va.insert(va.end(), amps.at(i).values().begin(), amps.at(i).values().end());
      vp.insert(vp.end(), phases.at(i).values().begin(), phases.at(i).values().end());
    }
    ga = compute_stats(std::span<const double>(va));
    gp = compute_stats(std::span<const double>(vp));
    out.manifest.normalization = {NormalizationMode::global, ga->mean, ga->std, gp->mean, gp->std};
  } else {
    out.manifest.normalization = {opt.normalization, 0, 0, 0, 0};
  }

  for (std::size_t i = 0; i < raw.size(); ++i) {
    Tensor<double> a = amps[i], p = phases[i];
    if (opt.normalization != NormalizationMode::none) {
      a = zscore_normalize(a, ga);
      p = zscore_normalize(p, gp);
    }
    out.amplitude.insert(out.amplitude.end(), a.values().begin(), a.values().end());
    out.phase.insert(out.phase.end(), p.values().begin(), p.values().end());
  }
  return out;
}

}  // namespace cigmae::data
