// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>

#include "cigmae/model/backbone.hpp"

namespace cigmae::model {

/// linear - ReLU - linear - ReLU - linear, latent -> W -> W -> W.
template <class T>
struct ProjectionHeadParams {
  Tensor<T> w1, b1, w2, b2, w3, b3;

  static ProjectionHeadParams init(Rng& rng, std::size_t latent, std::size_t width, const std::string& prefix) {
    if (width == 0) throw ConfigError("projection head: width must be >= 1");
    ProjectionHeadParams p;
    p.w1 = detail::fan_in_uniform<T>(rng, {width, latent}, latent, prefix + ".l1.w");
    p.b1 = detail::fan_in_uniform<T>(rng, {width}, latent, prefix + ".l1.b");
    p.w2 = detail::fan_in_uniform<T>(rng, {width, width}, width, prefix + ".l2.w");
    p.b2 = detail::fan_in_uniform<T>(rng, {width}, width, prefix + ".l2.b");
    p.w3 = detail::fan_in_uniform<T>(rng, {width, width}, width, prefix + ".l3.w");
    p.b3 = detail::fan_in_uniform<T>(rng, {width}, width, prefix + ".l3.b");
    return p;
  }
  ParameterSet<T> parameters() const {
    ParameterSet<T> s;
    for (const auto* t : {&w1, &b1, &w2, &b2, &w3, &b3}) s.add(*t);
    return s;
  }
  std::size_t width() const { return w3.dim(0); }
};

template <class T>
Tensor<T> project(const Tensor<T>& z, const ProjectionHeadParams<T>& h) {
  return affine(relu(affine(relu(affine(z, h.w1, h.b1)), h.w2, h.b2)), h.w3, h.b3);
}

/// Heads applied to each latent, then per-feature batch normalisation.
template <class T>
std::pair<Tensor<T>, Tensor<T>> project_and_normalize(const Tensor<T>& z_a, const Tensor<T>& z_p,
                                                      const ProjectionHeadParams<T>& head_a,
                                                      const ProjectionHeadParams<T>& head_p) {
  if (z_a.rank() != 2 || z_a.dim(0) < 2 || z_a.shape() != z_p.shape())
    throw DataError("project_and_normalize: need matching [B, d] latents with B >= 2, got " + to_string(z_a.shape()) +
                    " and " + to_string(z_p.shape()));
  return {batch_norm_features(project(z_a, head_a)), batch_norm_features(project(z_p, head_p))};
}

/// C = a^T b / B for [B, W] inputs.
template <class T>
Tensor<T> cross_correlation(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || a.shape() != b.shape())
    throw DimensionError("cross_correlation: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return scale(matmul(a, b, true, false), T(1) / static_cast<T>(a.dim(0)));
}

inline constexpr double kDefaultRedundancyWeight = 0.005;

/// sum_i (1 - C_ii)^2 + lambda sum_{i != j} C_ij^2.
template <class T>
Tensor<T> bt_loss(const Tensor<T>& C, T lambda = T(kDefaultRedundancyWeight)) {
  if (C.rank() != 2 || C.dim(0) != C.dim(1)) throw DimensionError("bt_loss: square matrix required, got " + to_string(C.shape()));
  const std::size_t W = C.dim(0);
  double loss = 0;
  for (std::size_t i = 0; i < W; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double c = C.at(i * W + j);
      loss += i == j ? (1 - c) * (1 - c) : double(lambda) * c * c;
    }
  return Tensor<T>::make_result(Shape{1}, {static_cast<T>(loss)}, {C}, [W, lambda](cigmae::detail::Node<T>& self) {
    if (auto* g = cigmae::detail::parent_grad(self, 0)) {
      const auto& c = cigmae::detail::parent_value(self, 0);
      const T up = self.grad[0];
      for (std::size_t i = 0; i < W; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const std::size_t k = i * W + j;
          (*g)[k] += up * (i == j ? T(-2) * (T(1) - c[k]) : T(2) * lambda * c[k]);
        }
    }
  });
}

struct CorrelationSummary {
  double diagonal_mean = 0;
  double off_diagonal_abs_mean = 0;
};

template <class T>
CorrelationSummary summarize_correlation(const Tensor<T>& C) {
  const std::size_t W = C.dim(0);
  CorrelationSummary s;
  for (std::size_t i = 0; i < W; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double c = C.at(i * W + j);
      if (i == j) s.diagonal_mean += c;
      else s.off_diagonal_abs_mean += std::abs(c);
    }
  s.diagonal_mean /= double(W);
  if (W > 1) s.off_diagonal_abs_mean /= double(W * (W - 1));
  return s;
}

/// Row-major CSV of a 2-D tensor, one row per line.
template <class T>
std::string matrix_csv(const Tensor<T>& m) {
  if (m.rank() != 2) throw DimensionError("matrix_csv: rank-2 tensor required");
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) os << (j ? "," : "") << double(m.at(i * m.dim(1) + j));
    os << '\n';
  }
  return os.str();
}

}  // namespace cigmae::model
