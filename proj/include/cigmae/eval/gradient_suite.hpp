// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "cigmae/core/attention.hpp"
#include "cigmae/core/conv.hpp"
#include "cigmae/core/gradcheck.hpp"
#include "cigmae/core/nn_ops.hpp"
#include "cigmae/masking/aim.hpp"
#include "cigmae/model/alignment.hpp"
#include "cigmae/model/backbone.hpp"

namespace cigmae::eval {

struct GradCase {
  std::string name;
  std::size_t instances = 0;
  double worst = 0;  ///< largest relative error over all instances
  double tolerance = 1e-4;
  bool passed() const { return worst < tolerance; }
};

struct GradSuiteResult {
  std::vector<GradCase> cases;
  double seconds = 0;
  bool passed() const {
    for (const auto& c : cases)
      if (!c.passed()) return false;
    return !cases.empty();
  }
};

namespace detail {

using TD = Tensor<double>;

inline TD leaf(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  auto t = random_tensor(rng, std::move(s), lo, hi);
  t.set_requires_grad(true);
  return t;
}

inline std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.normal();
  return w;
}

inline std::vector<TD> params_of(const ParameterSet<double>& ps) { return {ps.begin(), ps.end()}; }

inline std::vector<TD> join(std::vector<TD> a, const std::vector<TD>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline model::BackboneConfig suite_backbone() {
  model::BackboneConfig c;
  c.antennas = 2;
  c.subcarriers = 4;
  c.timesteps = 8;
  c.patch = {2, 2};
  c.channels = {2, 3, 2};
  c.kernel2 = {1, 2};
  c.kernel3 = {2, 1};
  c.latent = 3;
  return c;
}

}  // namespace detail

/// Finite-difference check of every differentiable primitive and of the
/// three composite losses (reconstruction, policy, alignment), each on
/// `instances` random small problems in double precision.
inline GradSuiteResult run_gradient_suite(std::uint64_t seed = 0, std::size_t instances = 3, double tolerance = 1e-4) {
  using detail::TD;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng = Rng(seed).fork("gradcheck");
  std::vector<GradCase> cases;
  auto record = [&](const std::string& name, const std::function<double(std::size_t)>& instance) {
    GradCase c{name, instances, 0.0, tolerance};
    for (std::size_t k = 0; k < instances; ++k) c.worst = std::max(c.worst, instance(k));
    cases.push_back(c);
  };
  auto check = [](const std::function<TD()>& op, const std::vector<TD>& leaves) { return finite_difference_check_inplace(op, leaves); };

  // Elementwise primitives, each through a random linear read-out.
  using Unary = TD (*)(const TD&);
  const std::vector<std::pair<std::string, Unary>> unaries{
      {"relu", [](const TD& x) { return relu(x); }},     {"gelu", [](const TD& x) { return gelu(x); }},
      {"abs", [](const TD& x) { return abs(x); }},       {"square", [](const TD& x) { return square(x); }},
      {"exp", [](const TD& x) { return exp(x); }},       {"log", [](const TD& x) { return log(add_scalar(square(x), 0.5)); }},
      {"scale", [](const TD& x) { return scale(x, -1.7); }}};
  for (const auto& [name, f] : unaries)
    record(name, [&](std::size_t k) {
      auto x = detail::leaf(rng, {k + 2, 3});
      const auto w = detail::normals(rng, x.numel());
      return check([&] { return weighted_sum(f(x), w); }, {x});
    });
  record("add/sub/mul", [&](std::size_t k) {
    auto a = detail::leaf(rng, {2, k + 2}), b = detail::leaf(rng, {2, k + 2});
    const auto w = detail::normals(rng, a.numel());
    return check([&] { return weighted_sum(add(mul(a, b), sub(a, scale(b, 0.5))), w); }, {a, b});
  });
  record("sum/mean/reshape", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 1, 6});
    return check([&] { return add(square(sum(reshape(x, {6, k + 1}))), mean(square(x))); }, {x});
  });
  record("matmul", [&](std::size_t k) {
    double worst = 0;
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        const std::size_t r = k + 2, c = 3, n = k + 3;
        auto a = detail::leaf(rng, ta ? Shape{c, r} : Shape{r, c}), b = detail::leaf(rng, tb ? Shape{n, c} : Shape{c, n});
        worst = std::max(worst, check([&] { return sum(square(matmul(a, b, ta, tb))); }, {a, b}));
      }
    return worst;
  });
  record("affine", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 2, 3}), w = detail::leaf(rng, {4, 3}), b = detail::leaf(rng, {4});
    return check([&] { return sum(square(affine(x, w, b))); }, {x, w, b});
  });
  record("concat_features", [&](std::size_t k) {
    auto a = detail::leaf(rng, {k + 2, 3}), b = detail::leaf(rng, {k + 2, 2});
    const auto w = detail::normals(rng, (k + 2) * 5);
    return check([&] { return weighted_sum(concat_features(a, b), w); }, {a, b});
  });
  record("layer_norm", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 2, 5}), g = detail::leaf(rng, {5}), b = detail::leaf(rng, {5});
    const auto w = detail::normals(rng, x.numel());
    return check([&] { return weighted_sum(layer_norm(x, g, b), w); }, {x, g, b});
  });
  record("batch_norm_features", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 3, 4});
    const auto w = detail::normals(rng, x.numel());
    return check([&] { return weighted_sum(batch_norm_features(x), w); }, {x});
  });
  record("softmax/log_softmax", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 1, 5});
    const auto w = detail::normals(rng, x.numel()), v = detail::normals(rng, x.numel());
    return check([&] { return add(weighted_sum(softmax(x), w), weighted_sum(log_softmax(x), v)); }, {x});
  });
  record("cross_entropy", [&](std::size_t k) {
    auto x = detail::leaf(rng, {k + 3, 4});
    std::vector<int> y(k + 3);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(rng.below(4));
    return check([&] { return cross_entropy(x, std::span<const int>(y)); }, {x});
  });
  const Extent2 strides[] = {{1, 1}, {2, 3}, {1, 2}}, kernels[] = {{2, 2}, {2, 3}, {3, 2}};
  record("conv2d", [&](std::size_t k) {
    auto x = detail::leaf(rng, {2, 2, 6, 7}), w = detail::leaf(rng, {3, 2, kernels[k % 3].h, kernels[k % 3].w}),
         b = detail::leaf(rng, {3});
    return check([&] { return sum(square(conv2d(x, w, b, strides[k % 3]))); }, {x, w, b});
  });
  record("deconv2d", [&](std::size_t k) {
    auto x = detail::leaf(rng, {2, 3, 2, 3}), w = detail::leaf(rng, {3, 2, kernels[k % 3].h, kernels[k % 3].w}),
         b = detail::leaf(rng, {2});
    return check([&] { return sum(square(deconv2d(x, w, b, strides[k % 3]))); }, {x, w, b});
  });
  record("channels_last", [&](std::size_t k) {
    auto x = detail::leaf(rng, {2, k + 2, 2, 3});
    const auto w = detail::normals(rng, x.numel());
    return check([&] { return weighted_sum(channels_last(x), w); }, {x});
  });
  record("multi_head_attention", [&](std::size_t k) {
    const std::size_t L = k + 2, d = 4, heads = 1 + k % 2;
    auto q = detail::leaf(rng, {2, L, d}), kk = detail::leaf(rng, {2, L, d}), v = detail::leaf(rng, {2, L, d});
    const auto w = detail::normals(rng, 2 * L * d);
    return check([&] { return weighted_sum(multi_head_attention(q, kk, v, heads), w); }, {q, kk, v});
  });
  record("attention_block", [&](std::size_t k) {
    const std::size_t L = k + 2, d = 4;
    auto p = AttentionBlockParams<double>::init(rng, d, 2, 6, "blk");
    auto x = detail::leaf(rng, {L, d});
    const auto w = detail::normals(rng, L * d);
    return check([&] { return weighted_sum(attention_block(x, p), w); }, detail::join({x}, detail::params_of(p.parameters())));
  });

  // Composite losses.
  const auto bc = detail::suite_backbone();
  const auto grid = bc.grid();
  record("reconstruction loss (mae/mse x raw/normalised)", [&](std::size_t k) {
    std::vector<masking::MaskPartition> parts{masking::random_partition(grid, 0.75, rng), masking::random_partition(grid, 0.5, rng)};
    const auto x = random_tensor(rng, {2, bc.antennas, bc.subcarriers, bc.timesteps});
    auto xh = detail::leaf(rng, {2, bc.antennas, bc.subcarriers, bc.timesteps});
    double worst = 0;
    for (auto kind : {model::ReconKind::mae, model::ReconKind::mse})
      for (bool norm : {false, true})
        worst = std::max(worst, check([&] {
          return model::masked_reconstruction_loss(xh, x, std::span<const masking::MaskPartition>(parts), {kind, norm});
        }, {xh}));
    (void)k;
    return worst;
  });
  record("reconstruction loss through encoder and decoder", [&](std::size_t) {
    auto s = model::StreamParams<double>::init(rng, bc, "s");
    std::vector<masking::MaskPartition> parts{masking::random_partition(grid, 0.75, rng), masking::random_partition(grid, 0.5, rng)};
    const auto x = random_tensor(rng, {2, bc.antennas, bc.subcarriers, bc.timesteps});
    const auto xm = masking::apply_mask(x, std::span<const masking::MaskPartition>(parts));
    return check([&] {
      return model::masked_mae_loss(model::decode(model::encode(xm, s.encoder, bc), s.decoder, bc), x,
                                    std::span<const masking::MaskPartition>(parts));
    }, detail::params_of(s.parameters()));
  });
  record("policy loss through the policy network", [&](std::size_t) {
    auto p = masking::PolicyParams<double>::init(rng, 3, 4, 2, 8, "pol");
    auto feats = random_tensor(rng, {2, grid.size(), 3});
    std::vector<masking::MaskPartition> parts{masking::random_partition(grid, 0.75, rng), masking::random_partition(grid, 0.5, rng)};
    std::vector<std::vector<double>> rewards;
    for (const auto& part : parts) {
      std::vector<double> e(part.masked.size());
      for (auto& v : e) v = rng.uniform(0.0, 2.0);
      rewards.push_back(e);
    }
    return check([&] {
      return masking::aim_loss(masking::policy_log_probs(affine(feats, p.h_w, p.h_b), p),
                               std::span<const masking::MaskPartition>(parts), rewards);
    }, detail::params_of(p.parameters()));
  });
  record("alignment loss through the projection heads", [&](std::size_t) {
    auto ha = model::ProjectionHeadParams<double>::init(rng, 3, 4, "a");
    auto hp = model::ProjectionHeadParams<double>::init(rng, 3, 4, "p");
    auto za = detail::leaf(rng, {6, 3}), zp = detail::leaf(rng, {6, 3});
    return check([&] {
      auto [pa, pp] = model::project_and_normalize(za, zp, ha, hp);
      return model::bt_loss(model::cross_correlation(pa, pp));
    }, detail::join(detail::join({za, zp}, detail::params_of(ha.parameters())), detail::params_of(hp.parameters())));
  });

  GradSuiteResult out;
  out.cases = std::move(cases);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace cigmae::eval
