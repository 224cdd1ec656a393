// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cigmae/core/attention.hpp"
#include "cigmae/core/conv.hpp"
#include "cigmae/core/rng.hpp"

namespace cigmae::masking {

/// Non-overlapping (s_p, t_p) tiling of an S x T plane; patch i sits at
/// row i / cols(), column i % cols().
struct PatchGrid {
  std::size_t S = 0, T = 0;
  Extent2 patch;

  static PatchGrid make(std::size_t S, std::size_t T, Extent2 patch) {
    if (patch.h == 0 || patch.w == 0 || S % patch.h != 0 || T % patch.w != 0)
      throw ConfigError("patch " + to_string(patch) + " does not tile a " + std::to_string(S) + "x" + std::to_string(T) +
                        " plane");
    return {S, T, patch};
  }

  std::size_t rows() const { return S / patch.h; }
  std::size_t cols() const { return T / patch.w; }
  std::size_t size() const { return rows() * cols(); }
  std::size_t index(std::size_t row, std::size_t col) const { return row * cols() + col; }
  std::size_t row_of(std::size_t i) const { return i / cols(); }
  std::size_t col_of(std::size_t i) const { return i % cols(); }
  std::size_t pixels_per_patch() const { return patch.h * patch.w; }
  bool operator==(const PatchGrid&) const = default;
};

/// Per-sample visibility distribution over L patches.
struct VisibilityDistribution {
  std::vector<double> p;
  std::vector<double> log_p;

  static VisibilityDistribution from_log(std::span<const double> lp) {
    VisibilityDistribution d;
    d.log_p.assign(lp.begin(), lp.end());
    d.p.resize(lp.size());
    cigmae::detail::clean_vector_state();
    for (std::size_t i = 0; i < lp.size(); ++i) d.p[i] = std::exp(lp[i]);
    return d;
  }
  static VisibilityDistribution from_probs(std::span<const double> p) {
    VisibilityDistribution d;
    d.p.assign(p.begin(), p.end());
    d.log_p.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) d.log_p[i] = std::log(p[i]);
    return d;
  }
  std::size_t size() const { return p.size(); }
};

/// Visible and masked patch sets with the materialised pixel mask
/// (1 on visible pixels, row-major S x T).
struct MaskPartition {
  PatchGrid grid;
  std::vector<std::size_t> visible;
  std::vector<std::size_t> masked;
  std::vector<std::uint8_t> pixels;

  bool is_masked_patch(std::size_t i) const { return pixels[grid.row_of(i) * grid.patch.h * grid.T + grid.col_of(i) * grid.patch.w] == 0; }
  bool operator==(const MaskPartition&) const = default;
};

/// Number of masked patches, round-half-up of rho * L.
inline std::size_t masked_count(std::size_t L, double rho) {
  return static_cast<std::size_t>(std::floor(rho * double(L) + 0.5));
}

inline void check_ratio(std::size_t L, double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("mask ratio must lie in (0, 1), got " + std::to_string(rho));
  const auto m = masked_count(L, rho);
  if (m >= L)
    throw ConfigError("mask ratio " + std::to_string(rho) + " leaves no visible patch out of " + std::to_string(L));
  if (m == 0) throw ConfigError("mask ratio " + std::to_string(rho) + " masks no patch out of " + std::to_string(L));
}

/// Builds a partition from the visible set; the rest is masked.
inline MaskPartition make_partition(const PatchGrid& grid, std::vector<std::size_t> visible) {
  const std::size_t L = grid.size();
  std::vector<char> vis(L, 0);
  for (auto i : visible) {
    if (i >= L || vis[i]) throw DataError("make_partition: invalid or repeated visible index " + std::to_string(i));
    vis[i] = 1;
  }
  MaskPartition m;
  m.grid = grid;
  m.visible = std::move(visible);
  m.pixels.assign(grid.S * grid.T, 0);
  for (std::size_t i = 0; i < L; ++i) {
    if (!vis[i]) {
      m.masked.push_back(i);
      continue;
    }
    const std::size_t r0 = grid.row_of(i) * grid.patch.h, c0 = grid.col_of(i) * grid.patch.w;
    for (std::size_t r = 0; r < grid.patch.h; ++r)
      for (std::size_t c = 0; c < grid.patch.w; ++c) m.pixels[(r0 + r) * grid.T + c0 + c] = 1;
  }
  return m;
}

/// Visible set = top-(L - round(rho L)) of log p_i + g_i, g_i ~ Gumbel(0, 1);
/// noise is skipped in deterministic mode. Ties go to the lower index.
inline MaskPartition gumbel_topk_partition(const VisibilityDistribution& dist, double rho, const PatchGrid& grid,
                                           Rng& rng, bool deterministic = false) {
  const std::size_t L = grid.size();
  if (dist.size() != L)
    throw DimensionError("gumbel_topk_partition: " + std::to_string(dist.size()) + " probabilities for " +
                         std::to_string(L) + " patches");
  check_ratio(L, rho);
  const std::size_t k = L - masked_count(L, rho);
  std::vector<double> keys(dist.log_p);
  cigmae::detail::clean_vector_state();
  if (!deterministic)
    for (auto& v : keys) v += rng.gumbel();
  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  order.resize(k);
  return make_partition(grid, std::move(order));
}

inline MaskPartition gumbel_topk_partition(const VisibilityDistribution& dist, double rho, const PatchGrid& grid,
                                           std::uint64_t seed, bool deterministic = false) {
  Rng rng(seed);
  return gumbel_topk_partition(dist, rho, grid, rng, deterministic);
}

/// Uniformly random partition with the same masked count.
inline MaskPartition random_partition(const PatchGrid& grid, double rho, Rng& rng) {
  const std::size_t L = grid.size();
  check_ratio(L, rho);
  auto perm = rng.permutation(L);
  perm.resize(L - masked_count(L, rho));
  return make_partition(grid, std::vector<std::size_t>(perm.begin(), perm.end()));
}

/// x [N, S, T] or [B, N, S, T] times the pixel mask, broadcast over antennas.
/// Batched input takes one partition per sample.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, std::span<const MaskPartition> parts) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("apply_mask: expected [N,S,T] or [B,N,S,T], got " + to_string(x.shape()));
  const std::size_t B = x.rank() == 4 ? x.dim(0) : 1;
  const std::size_t S = x.shape()[x.rank() - 2], Tn = x.shape()[x.rank() - 1];
  const std::size_t N = x.shape()[x.rank() - 3];
  if (parts.size() != B) throw DimensionError("apply_mask: " + std::to_string(parts.size()) + " partitions for batch " + std::to_string(B));
  std::vector<T> m(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    const auto& pix = parts[b].pixels;
    if (parts[b].grid.S != S || parts[b].grid.T != Tn)
      throw DimensionError("apply_mask: mask plane " + std::to_string(parts[b].grid.S) + "x" + std::to_string(parts[b].grid.T) +
                           " vs input " + to_string(x.shape()));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < S * Tn; ++j) m[(b * N + n) * S * Tn + j] = static_cast<T>(pix[j]);
  }
  const Tensor<T> mask(x.shape(), std::move(m));
  if (!x.requires_grad()) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * mask.at(i);
    return Tensor<T>(x.shape(), std::move(out));
  }
  return mul(x, mask);
}

template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, const MaskPartition& part) {
  return apply_mask(x, std::span<const MaskPartition>(&part, 1));
}

/// Mean absolute error over every pixel (all antennas) of each masked patch,
/// in `part.masked` order. `abs_err` is one sample, N x S x T row-major.
template <class V>
std::vector<double> per_patch_error(std::span<const V> abs_err, const MaskPartition& part) {
  const auto& g = part.grid;
  const std::size_t plane = g.S * g.T;
  if (plane == 0 || abs_err.size() % plane != 0)
    throw DimensionError("per_patch_error: " + std::to_string(abs_err.size()) + " values do not tile " +
                         std::to_string(g.S) + "x" + std::to_string(g.T) + " planes");
  const std::size_t N = abs_err.size() / plane;
  std::vector<double> e;
  e.reserve(part.masked.size());
  for (auto i : part.masked) {
    const std::size_t r0 = g.row_of(i) * g.patch.h, c0 = g.col_of(i) * g.patch.w;
    double s = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t r = 0; r < g.patch.h; ++r)
        for (std::size_t c = 0; c < g.patch.w; ++c) s += abs_err[n * plane + (r0 + r) * g.T + c0 + c];
    e.push_back(s / double(N * g.pixels_per_patch()));
  }
  return e;
}

/// |x_hat - x| per element of a [B, N, S, T] pair, detached from both graphs.
template <class T>
std::vector<T> abs_error(const Tensor<T>& x_hat, const Tensor<T>& x) {
  if (x_hat.shape() != x.shape())
    throw DimensionError("abs_error: " + to_string(x_hat.shape()) + " vs " + to_string(x.shape()));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x_hat.at(i) - x.at(i));
  return out;
}

/// Policy-gradient objective averaged over the batch:
/// -(1/B) sum_b (1/|M_b|) sum_{i in M_b} log p_bi * E_bi.
/// `log_p` is [B, L] (or [L]); E_b follows parts[b].masked order and is
/// treated as a constant.
template <class T>
Tensor<T> aim_loss(const Tensor<T>& log_p, std::span<const MaskPartition> parts,
                   const std::vector<std::vector<double>>& rewards) {
  const std::size_t L = log_p.shape().back();
  const std::size_t B = log_p.numel() / std::max<std::size_t>(L, 1);
  if (parts.size() != B || rewards.size() != B)
    throw DimensionError("aim_loss: batch " + std::to_string(B) + " vs " + std::to_string(parts.size()) +
                         " partitions, " + std::to_string(rewards.size()) + " reward sets");
  std::vector<T> w(log_p.numel(), T(0));
  for (std::size_t b = 0; b < B; ++b) {
    const auto& M = parts[b].masked;
    if (rewards[b].size() != M.size()) throw DimensionError("aim_loss: reward count differs from masked-set size");
    if (M.empty()) throw DataError("aim_loss: empty masked set");
    for (std::size_t j = 0; j < M.size(); ++j) {
      const std::size_t i = M[j];
      if (i >= L) throw DimensionError("aim_loss: masked index out of range");
      if (!std::isfinite(rewards[b][j])) throw NumericError("aim_loss: non-finite reward for patch " + std::to_string(i));
      if (!std::isfinite(double(log_p.at(b * L + i))))
        throw NumericError("aim_loss: zero visibility probability for masked patch " + std::to_string(i));
      w[b * L + i] = static_cast<T>(-rewards[b][j] / (double(M.size()) * double(B)));
    }
  }
  return weighted_sum(log_p, std::move(w));
}

template <class T>
Tensor<T> aim_loss(const Tensor<T>& log_p, const MaskPartition& part, const std::vector<double>& rewards) {
  return aim_loss(log_p, std::span<const MaskPartition>(&part, 1), std::vector<std::vector<double>>{rewards});
}

// ---------------------------------------------------------------------------
// Policy network

/// Psi = {h_eta, attention block, w}. Tokens are projected by h_eta, mixed by
/// one attention block, then scored by w^T U_i and softmaxed over patches.
template <class T>
struct PolicyParams {
  std::size_t token_channels = 0;
  std::size_t width = 0;
  Tensor<T> h_w, h_b;
  AttentionBlockParams<T> block;
  Tensor<T> score_w;

  static PolicyParams init(Rng& rng, std::size_t token_channels, std::size_t width, std::size_t heads,
                           std::size_t mlp_hidden, const std::string& prefix) {
    PolicyParams p;
    p.token_channels = token_channels;
    p.width = width;
    const double bc = 1.0 / std::sqrt(double(token_channels));
    p.h_w = uniform_parameter<T>(rng, {width, token_channels}, bc, prefix + ".h_eta.w");
    p.h_b = uniform_parameter<T>(rng, {width}, bc, prefix + ".h_eta.b");
    p.block = AttentionBlockParams<T>::init(rng, width, heads, mlp_hidden, prefix + ".block");
    p.score_w = uniform_parameter<T>(rng, {1, width}, 1.0 / std::sqrt(double(width)), prefix + ".w");
    return p;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    s.add(h_w);
    s.add(h_b);
    s.extend(block.parameters());
    s.add(score_w);
    return s;
  }
};

/// Native patch embeddings: first convolution on the unmasked input, spatial
/// grid flattened to L tokens, detached, then h_eta. x is [B, N, S, T] or
/// [N, S, T]; result is [B, L, width] (or [L, width]).
template <class T>
Tensor<T> patch_tokens(const Tensor<T>& x, const Tensor<T>& conv_w, const Tensor<T>& conv_b, Extent2 conv_stride,
                       const PatchGrid& grid, const PolicyParams<T>& policy) {
  if (conv_w.rank() != 4 || conv_w.dim(2) != grid.patch.h || conv_w.dim(3) != grid.patch.w || !(conv_stride == grid.patch))
    throw ConfigError("patch_tokens: first convolution kernel/stride must equal the patch size " + to_string(grid.patch));
  const bool batched = x.rank() == 4;
  const Tensor<T> xb = batched ? x : Tensor<T>(Shape{1, x.dim(0), x.dim(1), x.dim(2)}, std::vector<T>(x.values().begin(), x.values().end()));
  Tensor<T> feat;
  {
    NoGradGuard guard;
    feat = channels_last(conv2d(xb, conv_w, conv_b, conv_stride));
  }
  feat = feat.detach();
  if (feat.dim(1) != grid.size())
    throw DimensionError("patch_tokens: convolution produced " + std::to_string(feat.dim(1)) + " positions for " +
                         std::to_string(grid.size()) + " patches");
  Tensor<T> tokens = affine(feat, policy.h_w, policy.h_b);
  return batched ? tokens : reshape(tokens, Shape{grid.size(), policy.width});
}

/// log p over patches, [B, L] (or [L]): log_softmax(w^T attention_block(tokens)).
template <class T>
Tensor<T> policy_log_probs(const Tensor<T>& tokens, const PolicyParams<T>& policy) {
  const Tensor<T> u = attention_block(tokens, policy.block);
  const Tensor<T> s = affine(u, policy.score_w, Tensor<T>{});
  Shape flat(s.shape().begin(), s.shape().end() - 1);
  return log_softmax(reshape(s, flat));
}

template <class T>
std::vector<VisibilityDistribution> distributions(const Tensor<T>& log_p) {
  const std::size_t L = log_p.shape().back(), B = log_p.numel() / L;
  std::vector<VisibilityDistribution> out;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> lp(L);
    for (std::size_t i = 0; i < L; ++i) lp[i] = double(log_p.at(b * L + i));
    out.push_back(VisibilityDistribution::from_log(lp));
  }
  return out;
}

}  // namespace cigmae::masking
