// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/data/csi.hpp"

namespace cigmae::data {

// File layout (little-endian):
//   "CIGMCSI\0"  u32 version
//   u64 count  u32 N S T C  u8 has_labels  str modality_order
//   u8 norm_mode  f64 amp_mean amp_std phase_mean phase_std
//   per sample: f32[N*S*T] amplitude, f32[N*S*T] phase
//   i32[count] labels (only when has_labels)

inline constexpr std::string_view kDatasetMagic{"CIGMCSI\0", 8};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr const char* kDatasetExtension = ".csi";

inline std::string encode_dataset(const Dataset& d) {
  d.validate();
  io::Writer w;
  const auto& m = d.manifest;
  w.put_bytes(kDatasetMagic);
  w.put(kDatasetVersion);
  w.put(m.count);
  w.put(m.antennas);
  w.put(m.subcarriers);
  w.put(m.timesteps);
  w.put(m.classes);
  w.put(static_cast<std::uint8_t>(m.has_labels));
  w.put_string(m.modality_order);
  w.put(static_cast<std::uint8_t>(m.normalization.mode));
  w.put(m.normalization.amplitude_mean);
  w.put(m.normalization.amplitude_std);
  w.put(m.normalization.phase_mean);
  w.put(m.normalization.phase_std);
  for (std::size_t i = 0; i < d.size(); ++i) {
    w.put_span(d.values(i, Modality::amplitude));
    w.put_span(d.values(i, Modality::phase));
  }
  if (m.has_labels) w.put_span(std::span<const std::int32_t>(d.labels));
  return std::move(w.bytes());
}

inline Dataset decode_dataset(std::string_view bytes) {
  using Code = FormatError::Code;
  io::Reader r(bytes);
  if (r.remaining() < kDatasetMagic.size() || r.get_bytes(kDatasetMagic.size()) != kDatasetMagic)
    throw FormatError(Code::bad_magic, "not a CSI dataset file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion)
    throw FormatError(Code::bad_version, "unsupported dataset version " + std::to_string(version));
  Dataset d;
  auto& m = d.manifest;
  m.count = r.get<std::uint64_t>();
  m.antennas = r.get<std::uint32_t>();
  m.subcarriers = r.get<std::uint32_t>();
  m.timesteps = r.get<std::uint32_t>();
  m.classes = r.get<std::uint32_t>();
  m.has_labels = r.get<std::uint8_t>() != 0;
  m.modality_order = r.get_string(256);
  const auto mode = r.get<std::uint8_t>();
  if (mode > 2) throw FormatError(Code::integrity, "unknown normalisation mode " + std::to_string(mode));
  m.normalization.mode = static_cast<NormalizationMode>(mode);
  m.normalization.amplitude_mean = r.get<double>();
  m.normalization.amplitude_std = r.get<double>();
  m.normalization.phase_mean = r.get<double>();
  m.normalization.phase_std = r.get<double>();
  if (m.modality_order != "amplitude,phase")
    throw FormatError(Code::shape_mismatch, "unsupported modality order '" + m.modality_order + "'");

  const std::size_t per = m.sample_values();
  const unsigned __int128 expected = static_cast<unsigned __int128>(m.count) * per * 2 * sizeof(float) +
                                     (m.has_labels ? static_cast<unsigned __int128>(m.count) * sizeof(std::int32_t) : 0);
  if (expected > r.remaining())
    throw FormatError(Code::truncated, "dataset payload truncated: manifest needs " +
                                           std::to_string(static_cast<std::uint64_t>(expected)) + " bytes, " +
                                           std::to_string(r.remaining()) + " present");
  if (expected < r.remaining())
    throw FormatError(Code::shape_mismatch, "dataset payload larger than manifest shape " + cigmae::to_string(m.sample_shape()) +
                                                " x " + std::to_string(m.count) + " implies");
  d.amplitude.resize(d.size() * per);
  d.phase.resize(d.size() * per);
  for (std::size_t i = 0; i < d.size(); ++i) {
    r.get_span(d.values(i, Modality::amplitude));
    r.get_span(d.values(i, Modality::phase));
  }
  if (m.has_labels) {
    d.labels.resize(d.size());
    r.get_span(std::span<std::int32_t>(d.labels));
    for (auto l : d.labels)
      if (l < 0 || static_cast<std::uint32_t>(l) >= m.classes)
        throw FormatError(Code::bad_label, "label " + std::to_string(l) + " outside [0, " + std::to_string(m.classes) + ")");
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(d));
}

/// Concatenates datasets with identical sample shape, class count and
/// normalisation.
inline Dataset concatenate(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw DataError("concatenate: no datasets");
  Dataset out;
  out.manifest = parts.front().manifest;
  out.manifest.count = 0;
  for (const auto& p : parts) {
    auto a = p.manifest, b = out.manifest;
    a.count = b.count = 0;
    if (!(a == b))
      throw FormatError(FormatError::Code::shape_mismatch, "concatenate: manifests disagree on shape, classes or normalisation");
    out.manifest.count += p.manifest.count;
    out.amplitude.insert(out.amplitude.end(), p.amplitude.begin(), p.amplitude.end());
    out.phase.insert(out.phase.end(), p.phase.begin(), p.phase.end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

/// Reads a packed file, or every *.csi file of a directory in name order.
inline Dataset read_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == kDatasetExtension) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw FormatError(FormatError::Code::io, "no " + std::string(kDatasetExtension) + " files in " + path.string());
    std::vector<Dataset> parts;
    for (const auto& f : files) parts.push_back(decode_dataset(io::read_file(f)));
    return concatenate(parts);
  }
  return decode_dataset(io::read_file(path));
}

inline std::string dump_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "samples: " << m.count << "\n"
     << "shape: " << m.antennas << " x " << m.subcarriers << " x " << m.timesteps << "\n"
     << "classes: " << m.classes << "\n"
     << "labels: " << (m.has_labels ? "yes" : "no") << "\n"
     << "modalities: " << m.modality_order << "\n"
     << "normalization: " << to_string(m.normalization.mode) << "\n";
  if (m.normalization.mode == NormalizationMode::global)
    os << "amplitude_stats: " << m.normalization.amplitude_mean << " " << m.normalization.amplitude_std << "\n"
       << "phase_stats: " << m.normalization.phase_mean << " " << m.normalization.phase_std << "\n";
  return os.str();
}

}  // namespace cigmae::data
