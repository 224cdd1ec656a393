// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cigmae/core/gradcheck.hpp"
#include "cigmae/core/optim.hpp"
#include "cigmae/model/alignment.hpp"

namespace cigmae::model {
namespace {

using TD = Tensor<double>;

TEST(Projection, ShapeAndNormalisation) {
  Rng rng(1);
  auto ha = ProjectionHeadParams<double>::init(rng, 256, 1024, "bt.a");
  auto hp = ProjectionHeadParams<double>::init(rng, 256, 1024, "bt.p");
  auto za = random_tensor(rng, {16, 256}), zp = random_tensor(rng, {16, 256});
  auto [pa, pp] = project_and_normalize(za, zp, ha, hp);
  EXPECT_EQ(pa.shape(), (Shape{16, 1024}));
  for (const auto* t : {&pa, &pp})
    for (std::size_t j = 0; j < 1024; ++j) {
      double m = 0, v = 0;
      for (std::size_t b = 0; b < 16; ++b) m += t->at(b * 1024 + j) / 16;
      for (std::size_t b = 0; b < 16; ++b) v += (t->at(b * 1024 + j) - m) * (t->at(b * 1024 + j) - m) / 16;
      ASSERT_LT(std::abs(m), 1e-9);
      ASSERT_LT(std::abs(v - 1.0), 1e-6);
    }
}

TEST(Projection, SymmetricStreamsAgreeExactly) {
  Rng r1(4), r2(4);
  auto ha = ProjectionHeadParams<double>::init(r1, 8, 16, "a");
  auto hp = ProjectionHeadParams<double>::init(r2, 8, 16, "p");
  Rng rng(5);
  auto z = random_tensor(rng, {6, 8});
  auto [pa, pp] = project_and_normalize(z, z, ha, hp);
  EXPECT_TRUE(std::ranges::equal(pa.values(), pp.values()));
}

TEST(Projection, BatchOfOneRejected) {
  Rng rng(2);
  auto h = ProjectionHeadParams<double>::init(rng, 4, 4, "a");
  EXPECT_THROW(project_and_normalize(TD({1, 4}, 1.0), TD({1, 4}, 1.0), h, h), DataError);
}

TEST(CrossCorrelation, Examples) {
  auto c1 = cross_correlation(TD({2, 1}, {1, -1}), TD({2, 1}, {1, -1}));
  EXPECT_EQ(c1.shape(), (Shape{1, 1}));
  EXPECT_EQ(c1.item(), 1.0);

  auto cols = TD({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  auto id = cross_correlation(cols, cols);
  EXPECT_EQ(std::vector<double>(id.values().begin(), id.values().end()), (std::vector<double>{1, 0, 0, 1}));

  Rng rng(3);
  auto a = batch_norm_features(random_tensor(rng, {10, 3}));
  auto neg = cross_correlation(a, scale(a, -1.0));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(neg.at(i * 3 + i), -1.0, 1e-12);
  auto pos = cross_correlation(a, a);
  for (std::size_t k = 0; k < 9; ++k) EXPECT_NEAR(neg.at(k), -pos.at(k), 1e-15);
}

TEST(CrossCorrelation, EntriesBoundedForNormalisedInputs) {
  Rng rng(6);
  auto a = batch_norm_features(random_tensor(rng, {32, 20}));
  auto b = batch_norm_features(random_tensor(rng, {32, 20}));
  for (double v : cross_correlation(a, b).values()) {
    EXPECT_LE(v, 1.0 + 1e-6);
    EXPECT_GE(v, -1.0 - 1e-6);
  }
}

TEST(BtLoss, Examples) {
  EXPECT_EQ(bt_loss(TD({2, 2}, {1, 0, 0, 1})).item(), 0.0);
  EXPECT_EQ(bt_loss(TD({2, 2}, 0.0)).item(), 2.0);
  EXPECT_EQ(bt_loss(TD({2, 2}, 0.0), 0.7).item(), 2.0);
  EXPECT_NEAR(bt_loss(TD({2, 2}, {1, 0.5, 0.5, 1}), 0.005).item(), 0.0025, 1e-15);
}

TEST(BtLoss, NonNegativeZeroOnlyAtIdentity) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    auto C = random_tensor(rng, {4, 4});
    EXPECT_GT(bt_loss(C).item(), 0.0);
  }
}

TEST(BtLoss, ClosedFormAndFiniteDifferenceGradients) {
  Rng rng(8);
  const double lambda = 0.005;
  for (std::size_t W : {2u, 3u, 5u}) {
    auto C = random_tensor(rng, {W, W});
    C.set_requires_grad(true);
    bt_loss(C, lambda).backward();
    for (std::size_t i = 0; i < W; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double c = C.at(i * W + j);
        const double expect = i == j ? -2.0 * (1.0 - c) : 2.0 * lambda * c;
        EXPECT_NEAR(C.grad()[i * W + j], expect, 1e-15);
      }
    EXPECT_LT(finite_difference_check([&](const auto& in) { return bt_loss(in[0], lambda); }, {C}), 1e-6);
  }
}

TEST(BtLoss, CompositeGradientThroughHeads) {
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    auto ha = ProjectionHeadParams<double>::init(rng, 3, 4, "a");
    auto hp = ProjectionHeadParams<double>::init(rng, 3, 4, "p");
    std::vector<TD> inputs{random_tensor(rng, {6, 3}), random_tensor(rng, {6, 3})};
    for (const auto& p : ha.parameters()) inputs.push_back(p);
    auto fn = [&](const std::vector<TD>& in) {
      auto h = ha;
      TD* slots[] = {&h.w1, &h.b1, &h.w2, &h.b2, &h.w3, &h.b3};
      for (std::size_t i = 0; i < 6; ++i) *slots[i] = in[i + 2];
      auto [pa, pp] = project_and_normalize(in[0], in[1], h, hp);
      return bt_loss(cross_correlation(pa, pp));
    };
    EXPECT_LT(finite_difference_check(fn, inputs), 1e-4);
  }
}

TEST(BtLoss, DecoderReceivesNoGradient) {
  BackboneConfig c;
  c.antennas = 1;
  c.subcarriers = 6;
  c.timesteps = 10;
  c.kernel2 = {2, 2};
  c.kernel3 = {1, 1};
  c.channels = {2, 2, 2};
  c.latent = 4;
  Rng rng(10);
  auto sa = StreamParams<double>::init(rng, c, "a");
  auto sp = StreamParams<double>::init(rng, c, "p");
  auto ha = ProjectionHeadParams<double>::init(rng, 4, 8, "bt.a");
  auto hp = ProjectionHeadParams<double>::init(rng, 4, 8, "bt.p");
  auto x = random_tensor(rng, {4, 1, 6, 10});
  auto [pa, pp] = project_and_normalize(encode(x, sa.encoder, c), encode(x, sp.encoder, c), ha, hp);
  bt_loss(cross_correlation(pa, pp)).backward();
  for (const auto& p : sa.decoder.parameters()) EXPECT_FALSE(p.has_grad()) << p.name();
  for (const auto& p : sp.decoder.parameters()) EXPECT_FALSE(p.has_grad()) << p.name();
  EXPECT_TRUE(sa.encoder.conv1_w.has_grad());
  EXPECT_TRUE(hp.w1.has_grad());
}

TEST(BtLoss, ToyLinearStreamsAlign) {
  // Two linear views of a shared 4-d source; bt_loss alone should align them.
  Rng rng(11);
  const std::size_t n = 256, src = 4, dim = 8, W = 4, B = 64;
  auto A = random_tensor(rng, {dim, src}), P = random_tensor(rng, {dim, src});
  std::vector<double> xa(n * dim), xp(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(src);
    for (auto& v : s) v = rng.normal();
    for (std::size_t d = 0; d < dim; ++d) {
      double a = 0, p = 0;
      for (std::size_t k = 0; k < src; ++k) a += A.at(d * src + k) * s[k], p += P.at(d * src + k) * s[k];
      xa[i * dim + d] = a + rng.normal(0, 0.02);
      xp[i * dim + d] = p + rng.normal(0, 0.02);
    }
  }
  auto wa = uniform_parameter<double>(rng, {W, dim}, 0.35, "wa");
  auto wp = uniform_parameter<double>(rng, {W, dim}, 0.35, "wp");
  ParameterSet<double> ps;
  ps.add(wa);
  ps.add(wp);
  AdamWConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0;
  AdamW<double> opt(ps, cfg);
  auto batch = [&](const std::vector<double>& v, const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    for (auto i : idx) out.insert(out.end(), v.begin() + long(i * dim), v.begin() + long((i + 1) * dim));
    return TD({idx.size(), dim}, out);
  };
  auto corr = [&](const TD& a, const TD& p) {
    return cross_correlation(batch_norm_features(affine(a, wa, TD{})), batch_norm_features(affine(p, wp, TD{})));
  };
  for (int step = 0; step < 500; ++step) {
    auto perm = rng.permutation(n);
    perm.resize(B);
    opt.zero_grad();
    bt_loss(corr(batch(xa, perm), batch(xp, perm))).backward();
    opt.step();
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  NoGradGuard guard;
  const auto s = summarize_correlation(corr(batch(xa, all), batch(xp, all)));
  EXPECT_GT(s.diagonal_mean, 0.99);
}

TEST(MatrixCsv, IdentityDiagonal) {
  EXPECT_EQ(matrix_csv(TD({2, 2}, {1, 0, 0, 1})), "1,0\n0,1\n");
}

}  // namespace
}  // namespace cigmae::model
