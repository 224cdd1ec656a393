// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small products otherwise take Eigen's coefficient-based path, whose
// vectorized reductions peel by buffer address. The blocked kernels do not,
// so results stay bitwise reproducible whatever the heap layout.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cigmae/core/tensor.hpp"

namespace cigmae {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  clean_vector_state();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [deriv](detail::Node<T>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    clean_vector_state();
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    const auto& av = detail::parent_value(self, 0);
    const auto& bv = detail::parent_value(self, 1);
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// Identity on the forward pass; the result is a fresh leaf, so nothing
/// upstream of it receives gradient.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return x.detach();
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return Tensor<T>::make_result(Shape{1}, {s}, {x}, [](detail::Node<T>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (auto& gi : *g) gi += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum of x weighted elementwise by constant weights.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights) {
  if (weights.size() != x.numel()) throw DimensionError("weighted_sum: weight count mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x.values()[i] * weights[i];
  return Tensor<T>::make_result(Shape{1}, {s}, {x}, [w = std::move(weights)](detail::Node<T>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < w.size(); ++i) (*g)[i] += self.grad[0] * w[i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  std::vector<T> v(x.values().begin(), x.values().end());
  return Tensor<T>::make_result(std::move(shape), std::move(v), {x}, [](detail::Node<T>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
  });
}

/// [B, C, P...] -> [B, prod(P), C]: channels become the trailing axis.
template <class T>
Tensor<T> channels_last(const Tensor<T>& x) {
  if (x.rank() < 3) throw DimensionError("channels_last: rank >= 3 required, got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.numel() / (B * C);
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) out[(b * P + p) * C + c] = xv[(b * C + c) * P + p];
  return Tensor<T>::make_result(Shape{B, P, C}, std::move(out), {x}, [B, C, P](detail::Node<T>& self) {
    if (auto* g = detail::parent_grad(self, 0))
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t p = 0; p < P; ++p) (*g)[(b * C + c) * P + p] += self.grad[(b * P + p) * C + c];
  });
}

/// [B, Da] ++ [B, Db] -> [B, Da + Db].
template <class T>
Tensor<T> concat_features(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
    throw DimensionError("concat_features: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t B = a.dim(0), da = a.dim(1), db = b.dim(1), d = da + db;
  std::vector<T> out(B * d);
  for (std::size_t r = 0; r < B; ++r) {
    std::copy_n(a.values().data() + r * da, da, out.data() + r * d);
    std::copy_n(b.values().data() + r * db, db, out.data() + r * d + da);
  }
  return Tensor<T>::make_result(Shape{B, d}, std::move(out), {a, b}, [B, da, db, d](detail::Node<T>& self) {
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < da; ++j) (*ga)[r * da + j] += self.grad[r * d + j];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < db; ++j) (*gb)[r * db + j] += self.grad[r * d + da + j];
  });
}

/// 2-D matrix product with optional transposition of either operand.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: rank-2 operands required");
  const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  const std::size_t M = trans_a ? ac : ar, K = trans_a ? ar : ac;
  const std::size_t Kb = trans_b ? bc : br, N = trans_b ? br : bc;
  if (K != Kb)
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<T> out(M * N);
  ConstMatMap<T> A(a.values().data(), ar, ac), Bm(b.values().data(), br, bc);
  MatMap<T> C(out.data(), M, N);
  if (!trans_a && !trans_b) C.noalias() = A * Bm;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * Bm;
  else if (!trans_a && trans_b) C.noalias() = A * Bm.transpose();
  else C.noalias() = A.transpose() * Bm.transpose();
  return Tensor<T>::make_result(
      Shape{M, N}, std::move(out), {a, b}, [=](detail::Node<T>& self) {
        ConstMatMap<T> G(self.grad.data(), M, N);
        ConstMatMap<T> A(detail::parent_value(self, 0).data(), ar, ac);
        ConstMatMap<T> Bm(detail::parent_value(self, 1).data(), br, bc);
        if (auto* ga = detail::parent_grad(self, 0)) {
          MatMap<T> GA(ga->data(), ar, ac);
          // dA_eff = G * B_eff^T, transposed back when A entered transposed.
          if (!trans_a && !trans_b) GA.noalias() += G * Bm.transpose();
          else if (!trans_a && trans_b) GA.noalias() += G * Bm;
          else if (trans_a && !trans_b) GA.noalias() += Bm * G.transpose();
          else GA.noalias() += Bm.transpose() * G.transpose();
        }
        if (auto* gb = detail::parent_grad(self, 1)) {
          MatMap<T> GB(gb->data(), br, bc);
          if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
          else if (trans_a && !trans_b) GB.noalias() += A * G;
          else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      });
}

/// y = x W^T + b over the last axis. weight is [Dout, Din]; bias may be undefined.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2) throw DimensionError("affine: bad operand ranks");
  const std::size_t din = x.shape().back();
  const std::size_t dout = weight.dim(0);
  if (weight.dim(1) != din)
    throw DimensionError("affine: input width " + std::to_string(din) + " vs weight " + to_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != dout) throw DimensionError("affine: bias width mismatch");
  const std::size_t rows = x.numel() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  std::vector<T> out(rows * dout);
  {
    ConstMatMap<T> X(x.values().data(), rows, din), W(weight.values().data(), dout, din);
    MatMap<T> Y(out.data(), rows, dout);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.values().data(), dout);
      Y.rowwise() += b;
    }
  }
  auto backward = [=](detail::Node<T>& self) {
    ConstMatMap<T> G(self.grad.data(), rows, dout);
    if (auto* gx = detail::parent_grad(self, 0)) {
      ConstMatMap<T> W(detail::parent_value(self, 1).data(), dout, din);
      MatMap<T>(gx->data(), rows, din).noalias() += G * W;
    }
    if (auto* gw = detail::parent_grad(self, 1)) {
      ConstMatMap<T> X(detail::parent_value(self, 0).data(), rows, din);
      MatMap<T>(gw->data(), dout, din).noalias() += G.transpose() * X;
    }
    if (has_bias) {
      if (auto* gb = detail::parent_grad(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += self.grad[r * dout + j];
      }
    }
  };
  if (has_bias) return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x, weight, bias}, backward);
  return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x, weight}, backward);
}

}  // namespace cigmae
