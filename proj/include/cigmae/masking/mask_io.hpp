// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/masking/aim.hpp"

namespace cigmae::masking {

// Bitset file: "CIGMASK\0", u32 version, u32 S T s_p t_p, u64 count, then per
// partition ceil(L/8) bytes; bit i (LSB first) set when patch i is visible.

inline constexpr std::string_view kMaskMagic{"CIGMASK\0", 8};
inline constexpr std::uint32_t kMaskVersion = 1;

inline std::string encode_masks(std::span<const MaskPartition> parts) {
  if (parts.empty()) throw DataError("encode_masks: no partitions");
  const PatchGrid g = parts.front().grid;
  io::Writer w;
  w.put_bytes(kMaskMagic);
  w.put(kMaskVersion);
  for (auto v : {g.S, g.T, g.patch.h, g.patch.w}) w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint64_t>(parts.size()));
  const std::size_t L = g.size();
  for (const auto& p : parts) {
    if (!(p.grid == g)) throw DataError("encode_masks: partitions use different grids");
    std::vector<std::uint8_t> bits((L + 7) / 8, 0);
    for (auto i : p.visible) bits[i / 8] |= std::uint8_t(1u << (i % 8));
    w.put_span(std::span<const std::uint8_t>(bits));
  }
  return std::move(w.bytes());
}

inline std::vector<MaskPartition> decode_masks(std::string_view bytes) {
  using Code = FormatError::Code;
  io::Reader r(bytes);
  if (r.remaining() < kMaskMagic.size() || r.get_bytes(kMaskMagic.size()) != kMaskMagic)
    throw FormatError(Code::bad_magic, "not a mask file (bad magic)");
  if (const auto v = r.get<std::uint32_t>(); v != kMaskVersion)
    throw FormatError(Code::bad_version, "unsupported mask file version " + std::to_string(v));
  std::uint32_t dims[4];
  for (auto& d : dims) d = r.get<std::uint32_t>();
  PatchGrid g;
  try {
    g = PatchGrid::make(dims[0], dims[1], {dims[2], dims[3]});
  } catch (const ConfigError& e) {
    throw FormatError(Code::shape_mismatch, e.what());
  }
  const auto count = r.get<std::uint64_t>();
  const std::size_t L = g.size(), nbytes = (L + 7) / 8;
  if (r.remaining() != count * nbytes)
    throw FormatError(r.remaining() < count * nbytes ? Code::truncated : Code::shape_mismatch,
                      "mask payload size does not match header");
  std::vector<MaskPartition> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    auto bits = r.get_bytes(nbytes);
    std::vector<std::size_t> vis;
    for (std::size_t i = 0; i < L; ++i)
      if (static_cast<unsigned char>(bits[i / 8]) & (1u << (i % 8))) vis.push_back(i);
    out.push_back(make_partition(g, std::move(vis)));
  }
  return out;
}

inline void write_masks(std::span<const MaskPartition> parts, const std::filesystem::path& path) {
  io::write_file(path, encode_masks(parts));
}

inline std::vector<MaskPartition> read_masks(const std::filesystem::path& path) { return decode_masks(io::read_file(path)); }

/// S lines of T space-separated 0/1 values (1 = visible pixel).
inline std::string mask_grid_text(const MaskPartition& part) {
  std::string s;
  s.reserve(part.pixels.size() * 2);
  for (std::size_t r = 0; r < part.grid.S; ++r) {
    for (std::size_t c = 0; c < part.grid.T; ++c) {
      if (c) s += ' ';
      s += part.pixels[r * part.grid.T + c] ? '1' : '0';
    }
    s += '\n';
  }
  return s;
}

/// Order-sensitive FNV-1a digest of visible sets, used to compare runs.
inline std::uint64_t mask_hash(std::span<const MaskPartition> parts, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const auto& p : parts) {
    io::Writer w;
    w.put(static_cast<std::uint64_t>(p.visible.size()));
    for (auto i : p.visible) w.put(static_cast<std::uint32_t>(i));
    h = io::fnv1a(w.bytes(), h);
  }
  return h;
}

}  // namespace cigmae::masking
