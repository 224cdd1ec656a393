// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cigmae/core/conv.hpp"
#include "cigmae/core/nn_ops.hpp"
#include "cigmae/core/params.hpp"
#include "cigmae/masking/aim.hpp"

namespace cigmae::model {

/// Geometry of one convolutional stream. Defaults reproduce the reference
/// architecture: (N,30,200) -> (128,10,40) -> (256,5,20) -> (512,5,10) -> 256.
struct BackboneConfig {
  std::size_t antennas = 3;
  std::size_t subcarriers = 30;
  std::size_t timesteps = 200;
  Extent2 patch{3, 5};
  std::array<std::size_t, 3> channels{128, 256, 512};
  Extent2 kernel2{2, 2};
  Extent2 kernel3{1, 2};
  std::size_t latent = 256;

  /// Spatial extents after each encoder convolution.
  std::array<Extent2, 3> maps() const {
    validate();
    Extent2 a{subcarriers / patch.h, timesteps / patch.w};
    Extent2 b{a.h / kernel2.h, a.w / kernel2.w};
    Extent2 c{b.h / kernel3.h, b.w / kernel3.w};
    return {a, b, c};
  }

  std::size_t flat_width() const {
    const auto m = maps();
    return channels[2] * m[2].h * m[2].w;
  }

  void validate() const {
    auto fail = [&](const std::string& what) {
      throw ConfigError("backbone: " + what + " for input " + std::to_string(antennas) + "x" + std::to_string(subcarriers) +
                        "x" + std::to_string(timesteps));
    };
    for (auto e : {patch, kernel2, kernel3})
      if (e.h == 0 || e.w == 0) fail("zero kernel extent");
    if (antennas == 0 || latent == 0 || channels[0] == 0 || channels[1] == 0 || channels[2] == 0) fail("zero width");
    if (subcarriers % patch.h || timesteps % patch.w) fail("patch " + to_string(patch) + " does not tile the plane");
    const std::size_t h1 = subcarriers / patch.h, w1 = timesteps / patch.w;
    if (h1 % kernel2.h || w1 % kernel2.w) fail("second stride " + to_string(kernel2) + " does not divide the patch grid");
    const std::size_t h2 = h1 / kernel2.h, w2 = w1 / kernel2.w;
    if (h2 % kernel3.h || w2 % kernel3.w) fail("third stride " + to_string(kernel3) + " does not divide the feature map");
  }

  masking::PatchGrid grid() const { return masking::PatchGrid::make(subcarriers, timesteps, patch); }
};

namespace detail {
template <class T>
Tensor<T> fan_in_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::string name) {
  return uniform_parameter<T>(rng, std::move(shape), 1.0 / std::sqrt(double(fan_in)), std::move(name));
}
}  // namespace detail

/// Three stride-equals-kernel convolutions (ReLU after each) and a linear map
/// from the flattened map to the latent.
template <class T>
struct EncoderParams {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, fc_w, fc_b;

  static EncoderParams init(Rng& rng, const BackboneConfig& c, const std::string& prefix) {
    c.validate();
    const auto [c1, c2, c3] = c.channels;
    const std::size_t f1 = c.antennas * c.patch.h * c.patch.w, f2 = c1 * c.kernel2.h * c.kernel2.w,
                      f3 = c2 * c.kernel3.h * c.kernel3.w;
    EncoderParams p;
    p.conv1_w = detail::fan_in_uniform<T>(rng, {c1, c.antennas, c.patch.h, c.patch.w}, f1, prefix + ".conv1.w");
    p.conv1_b = detail::fan_in_uniform<T>(rng, {c1}, f1, prefix + ".conv1.b");
    p.conv2_w = detail::fan_in_uniform<T>(rng, {c2, c1, c.kernel2.h, c.kernel2.w}, f2, prefix + ".conv2.w");
    p.conv2_b = detail::fan_in_uniform<T>(rng, {c2}, f2, prefix + ".conv2.b");
    p.conv3_w = detail::fan_in_uniform<T>(rng, {c3, c2, c.kernel3.h, c.kernel3.w}, f3, prefix + ".conv3.w");
    p.conv3_b = detail::fan_in_uniform<T>(rng, {c3}, f3, prefix + ".conv3.b");
    p.fc_w = detail::fan_in_uniform<T>(rng, {c.latent, c.flat_width()}, c.flat_width(), prefix + ".fc.w");
    p.fc_b = detail::fan_in_uniform<T>(rng, {c.latent}, c.flat_width(), prefix + ".fc.b");
    return p;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    for (const auto* t : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w, &conv3_b, &fc_w, &fc_b}) s.add(*t);
    return s;
  }
};

/// Mirror of the encoder: linear map to the deepest feature map, then three
/// transposed convolutions; the last one emits N channels with no activation.
template <class T>
struct DecoderParams {
  Tensor<T> fc_w, fc_b, deconv1_w, deconv1_b, deconv2_w, deconv2_b, deconv3_w, deconv3_b;

  static DecoderParams init(Rng& rng, const BackboneConfig& c, const std::string& prefix) {
    c.validate();
    const auto [c1, c2, c3] = c.channels;
    DecoderParams p;
    p.fc_w = detail::fan_in_uniform<T>(rng, {c.flat_width(), c.latent}, c.latent, prefix + ".fc.w");
    p.fc_b = detail::fan_in_uniform<T>(rng, {c.flat_width()}, c.latent, prefix + ".fc.b");
    p.deconv1_w = detail::fan_in_uniform<T>(rng, {c3, c2, c.kernel3.h, c.kernel3.w}, c3, prefix + ".deconv1.w");
    p.deconv1_b = detail::fan_in_uniform<T>(rng, {c2}, c3, prefix + ".deconv1.b");
    p.deconv2_w = detail::fan_in_uniform<T>(rng, {c2, c1, c.kernel2.h, c.kernel2.w}, c2, prefix + ".deconv2.w");
    p.deconv2_b = detail::fan_in_uniform<T>(rng, {c1}, c2, prefix + ".deconv2.b");
    p.deconv3_w = detail::fan_in_uniform<T>(rng, {c1, c.antennas, c.patch.h, c.patch.w}, c1, prefix + ".deconv3.w");
    p.deconv3_b = detail::fan_in_uniform<T>(rng, {c.antennas}, c1, prefix + ".deconv3.b");
    return p;
  }

  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    for (const auto* t : {&fc_w, &fc_b, &deconv1_w, &deconv1_b, &deconv2_w, &deconv2_b, &deconv3_w, &deconv3_b})
      s.add(*t);
    return s;
  }
};

template <class T>
struct EncoderTrace {
  Tensor<T> e1, e2, e3, z;
};

template <class T>
EncoderTrace<T> encode_trace(const Tensor<T>& x, const EncoderParams<T>& p, const BackboneConfig& c) {
  if (x.rank() != 4 || x.dim(1) != c.antennas || x.dim(2) != c.subcarriers || x.dim(3) != c.timesteps)
    throw DimensionError("encode: expected [B," + std::to_string(c.antennas) + "," + std::to_string(c.subcarriers) + "," +
                         std::to_string(c.timesteps) + "], got " + to_string(x.shape()));
  EncoderTrace<T> t;
  t.e1 = relu(conv2d(x, p.conv1_w, p.conv1_b, c.patch));
  t.e2 = relu(conv2d(t.e1, p.conv2_w, p.conv2_b, c.kernel2));
  t.e3 = relu(conv2d(t.e2, p.conv3_w, p.conv3_b, c.kernel3));
  t.z = affine(reshape(t.e3, Shape{x.dim(0), c.flat_width()}), p.fc_w, p.fc_b);
  return t;
}

/// x [B, N, S, T] -> z [B, latent].
template <class T>
Tensor<T> encode(const Tensor<T>& x, const EncoderParams<T>& p, const BackboneConfig& c) {
  return encode_trace(x, p, c).z;
}

/// z [B, latent] -> [B, N, S, T].
template <class T>
Tensor<T> decode(const Tensor<T>& z, const DecoderParams<T>& p, const BackboneConfig& c) {
  if (z.rank() != 2 || z.dim(1) != c.latent)
    throw DimensionError("decode: expected [B," + std::to_string(c.latent) + "], got " + to_string(z.shape()));
  const auto m = c.maps();
  const std::size_t B = z.dim(0);
  Tensor<T> h = relu(affine(z, p.fc_w, p.fc_b));
  h = reshape(h, Shape{B, c.channels[2], m[2].h, m[2].w});
  h = relu(deconv2d(h, p.deconv1_w, p.deconv1_b, c.kernel3));
  h = relu(deconv2d(h, p.deconv2_w, p.deconv2_b, c.kernel2));
  return deconv2d(h, p.deconv3_w, p.deconv3_b, c.patch);
}

/// One modality: encoder f_theta and decoder g_phi.
template <class T>
struct StreamParams {
  EncoderParams<T> encoder;
  DecoderParams<T> decoder;

  static StreamParams init(Rng& rng, const BackboneConfig& c, const std::string& prefix) {
    StreamParams s;
    s.encoder = EncoderParams<T>::init(rng, c, prefix + ".enc");
    s.decoder = DecoderParams<T>::init(rng, c, prefix + ".dec");
    return s;
  }
  ParameterSet<T> parameters() const {
    auto s = encoder.parameters();
    s.extend(decoder.parameters());
    return s;
  }
};

// ---------------------------------------------------------------------------
// Reconstruction losses

enum class ReconKind { mae, mse };

struct ReconLossOptions {
  ReconKind kind = ReconKind::mae;
  /// Per-patch, per-antenna standardisation of the target before the loss.
  bool normalized_target = false;
};

/// Per-patch standardised copy of x [B, N, S, T] (mean 0, unit variance per
/// antenna and patch, variance floored at 1e-6).
template <class T>
Tensor<T> normalize_patches(const Tensor<T>& x, const masking::PatchGrid& g) {
  const std::size_t S = g.S, Tn = g.T, planes = x.numel() / (S * Tn);
  std::vector<T> out(x.values().begin(), x.values().end());
  const std::size_t n = g.pixels_per_patch();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t r0 = g.row_of(i) * g.patch.h, c0 = g.col_of(i) * g.patch.w;
      auto at = [&](std::size_t r, std::size_t c) -> T& { return out[pl * S * Tn + (r0 + r) * Tn + c0 + c]; };
      double m = 0, v = 0;
      for (std::size_t r = 0; r < g.patch.h; ++r)
        for (std::size_t c = 0; c < g.patch.w; ++c) m += at(r, c);
      m /= double(n);
      for (std::size_t r = 0; r < g.patch.h; ++r)
        for (std::size_t c = 0; c < g.patch.w; ++c) v += (at(r, c) - m) * (at(r, c) - m);
      const double inv = 1.0 / std::sqrt(std::max(v / double(n), 1e-6));
      for (std::size_t r = 0; r < g.patch.h; ++r)
        for (std::size_t c = 0; c < g.patch.w; ++c) at(r, c) = static_cast<T>((at(r, c) - m) * inv);
    }
  return Tensor<T>(x.shape(), std::move(out));
}

/// Mean (absolute or squared) error over pixels with Pi = 0, across every
/// antenna and batch item. x is the target and is never differentiated.
template <class T>
Tensor<T> masked_reconstruction_loss(const Tensor<T>& x_hat, const Tensor<T>& x, std::span<const masking::MaskPartition> parts,
                                     ReconLossOptions opt = {}) {
  if (x_hat.shape() != x.shape())
    throw DimensionError("reconstruction loss: " + to_string(x_hat.shape()) + " vs " + to_string(x.shape()));
  if (x.rank() != 4 || parts.size() != x.dim(0))
    throw DimensionError("reconstruction loss: need [B,N,S,T] and one partition per sample");
  const std::size_t B = x.dim(0), N = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::size_t omega = 0;
  for (const auto& p : parts) {
    if (p.pixels.size() != plane) throw DimensionError("reconstruction loss: mask plane size mismatch");
    for (auto v : p.pixels) omega += v == 0;
  }
  if (omega == 0) throw DataError("reconstruction loss: mask has no masked pixel");
  const T inv = T(1) / static_cast<T>(omega * N);
  std::vector<T> w(x.numel(), T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < plane; ++j)
        if (parts[b].pixels[j] == 0) w[(b * N + n) * plane + j] = inv;
  const Tensor<T> target = opt.normalized_target ? normalize_patches(x.detach(), parts.front().grid) : x.detach();
  const Tensor<T> r = sub(x_hat, target);
  return weighted_sum(opt.kind == ReconKind::mae ? abs(r) : square(r), std::move(w));
}

template <class T>
Tensor<T> masked_mae_loss(const Tensor<T>& x_hat, const Tensor<T>& x, std::span<const masking::MaskPartition> parts) {
  return masked_reconstruction_loss(x_hat, x, parts, {});
}

/// Mean |x_hat - x| over batch and antennas on the S x T plane.
template <class T>
Tensor<T> pixel_error_map(const Tensor<T>& x_hat, const Tensor<T>& x) {
  if (x_hat.shape() != x.shape() || x.rank() < 2)
    throw DimensionError("pixel_error_map: " + to_string(x_hat.shape()) + " vs " + to_string(x.shape()));
  const std::size_t S = x.shape()[x.rank() - 2], Tn = x.shape()[x.rank() - 1], plane = S * Tn;
  const std::size_t planes = x.numel() / plane;
  std::vector<T> out(plane, T(0));
  for (std::size_t k = 0; k < planes; ++k)
    for (std::size_t j = 0; j < plane; ++j) out[j] += std::abs(x_hat.at(k * plane + j) - x.at(k * plane + j));
  for (auto& v : out) v /= static_cast<T>(planes);
  return Tensor<T>(Shape{S, Tn}, std::move(out));
}

// ---------------------------------------------------------------------------
// Classifier head: one fully connected layer over concatenated latents.

template <class T>
struct ClassifierParams {
  Tensor<T> w, b;

  static ClassifierParams init(Rng& rng, std::size_t in, std::size_t classes, const std::string& prefix) {
    if (classes < 2) throw ConfigError("classifier: need at least 2 classes");
    ClassifierParams p;
    p.w = detail::fan_in_uniform<T>(rng, {classes, in}, in, prefix + ".w");
    p.b = detail::fan_in_uniform<T>(rng, {classes}, in, prefix + ".b");
    return p;
  }
  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    s.add(w);
    s.add(b);
    return s;
  }
  std::size_t classes() const { return w.dim(0); }
};

/// Logits [B, C] for features [B, D].
template <class T>
Tensor<T> classify(const Tensor<T>& features, const ClassifierParams<T>& p) {
  return affine(features, p.w, p.b);
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t C = logits.shape().back(), B = logits.numel() / C;
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits.at(b * C + c) > logits.at(b * C + best)) best = c;
    out[b] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cigmae::model
