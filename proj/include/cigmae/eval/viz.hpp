// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/masking/aim.hpp"
#include "cigmae/model/alignment.hpp"

namespace cigmae::eval {

enum class VizKind { error_heatmap, mask_overlay, corr_matrix };

inline VizKind parse_viz_kind(std::string_view s) {
  if (s == "error-heatmap") return VizKind::error_heatmap;
  if (s == "mask-overlay") return VizKind::mask_overlay;
  if (s == "corr-matrix") return VizKind::corr_matrix;
  throw ConfigError("unknown visualisation kind '" + std::string(s) + "' (expected error-heatmap, mask-overlay or corr-matrix)");
}

/// Binary greyscale PGM (P5) of a row-major rows x cols grid; values are
/// mapped linearly from [lo, hi] to [0, 255].
inline std::string pgm(const std::vector<double>& v, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::ostringstream os;
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  std::string px(rows * cols, '\0');
  const double span = hi - lo;
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double t = span > 0 ? std::clamp((v[i] - lo) / span, 0.0, 1.0) : 0.0;
    px[i] = static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
  }
  return os.str() + px;
}

inline std::string grid_csv(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) os << (c ? "," : "") << v[r * cols + c];
    os << '\n';
  }
  return os.str();
}

/// Mean |x_hat - x| on the S x T plane: `<stem>.csv` plus `<stem>.pgm`
/// scaled to the map's maximum (all black when the error is zero).
template <class T>
std::vector<std::filesystem::path> emit_error_heatmap(const Tensor<T>& x_hat, const Tensor<T>& x, const std::filesystem::path& stem) {
  const auto m = model::pixel_error_map(x_hat, x);
  const std::size_t S = m.dim(0), Tn = m.dim(1);
  std::vector<double> v(m.values().begin(), m.values().end());
  const double hi = *std::max_element(v.begin(), v.end());
  const auto csv = std::filesystem::path(stem).concat(".csv"), img = std::filesystem::path(stem).concat(".pgm");
  io::write_file(csv, grid_csv(v, S, Tn));
  io::write_file(img, pgm(v, S, Tn, 0.0, hi));
  return {csv, img};
}

/// Visible fraction of a partition (|V| / L).
inline double visible_fraction(const masking::MaskPartition& p) {
  return double(p.visible.size()) / double(p.grid.size());
}

/// Pixel-level S x T mask (1 = visible) with the visible fraction in a
/// leading comment line, plus an optional per-pixel probability image.
inline std::vector<std::filesystem::path> emit_mask_overlay(const masking::MaskPartition& p, const std::filesystem::path& stem,
                                                            const std::vector<double>* patch_probs = nullptr) {
  const auto& g = p.grid;
  std::ostringstream os;
  os << std::setprecision(6) << "# visible_fraction " << visible_fraction(p) << " (" << p.visible.size() << "/" << g.size()
     << " patches)\n";
  std::vector<double> v(p.pixels.begin(), p.pixels.end());
  os << grid_csv(v, g.S, g.T);
  const auto csv = std::filesystem::path(stem).concat(".csv"), img = std::filesystem::path(stem).concat(".pgm");
  io::write_file(csv, os.str());
  std::vector<std::filesystem::path> out{csv};
  std::vector<double> shade(g.S * g.T);
  if (patch_probs) {
    // Patch probabilities, brightened on visible pixels.
    const double hi = *std::max_element(patch_probs->begin(), patch_probs->end());
    for (std::size_t r = 0; r < g.S; ++r)
      for (std::size_t c = 0; c < g.T; ++c) {
        const std::size_t i = g.index(r / g.patch.h, c / g.patch.w);
        const double base = hi > 0 ? 0.6 * (*patch_probs)[i] / hi : 0.0;
        shade[r * g.T + c] = base + (p.pixels[r * g.T + c] ? 0.4 : 0.0);
      }
  } else {
    shade = v;
  }
  io::write_file(img, pgm(shade, g.S, g.T, 0.0, 1.0));
  out.push_back(img);
  return out;
}

/// W x W correlation matrix as CSV; `crop` > 0 also writes a PGM of the
/// top-left crop x crop block mapped from [-1, 1].
template <class T>
std::vector<std::filesystem::path> emit_corr_matrix(const Tensor<T>& C, const std::filesystem::path& stem, std::size_t crop = 64) {
  const auto csv = std::filesystem::path(stem).concat(".csv");
  io::write_file(csv, model::matrix_csv(C));
  std::vector<std::filesystem::path> out{csv};
  if (crop) {
    const std::size_t W = C.dim(0), k = std::min(crop, W);
    std::vector<double> v(k * k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) v[i * k + j] = double(C.at(i * W + j));
    const auto img = std::filesystem::path(stem).concat(".pgm");
    io::write_file(img, pgm(v, k, k, -1.0, 1.0));
    out.push_back(img);
  }
  return out;
}

}  // namespace cigmae::eval
