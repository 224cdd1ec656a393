// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "cigmae/core/ops.hpp"

namespace cigmae {

/// Normalises each row over the last axis, then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: gamma/beta width mismatch");
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(d);
    (*inv)[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * (*inv)[r];
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma.values()[j] + beta.values()[j];
    }
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, gamma, beta}, [=](detail::Node<T>& self) {
    const auto& g = detail::parent_value(self, 1);
    auto* gx = detail::parent_grad(self, 0);
    auto* gg = detail::parent_grad(self, 1);
    auto* gb = detail::parent_grad(self, 2);
    std::vector<T> dh(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data() + r * d;
      const T* h = xhat->data() + r * d;
      T s1 = 0, s2 = 0;
      for (std::size_t j = 0; j < d; ++j) {
        dh[j] = dy[j] * g[j];
        s1 += dh[j];
        s2 += dh[j] * h[j];
        if (gg) (*gg)[j] += dy[j] * h[j];
        if (gb) (*gb)[j] += dy[j];
      }
      if (gx)
        for (std::size_t j = 0; j < d; ++j)
          (*gx)[r * d + j] += (*inv)[r] / T(d) * (T(d) * dh[j] - s1 - h[j] * s2);
    }
  });
}

/// Per-feature standardisation over the batch axis of [B, D]: zero mean and
/// unit population variance. The variance is floored at eps before the square
/// root, so constant columns map to zero and all others are exact.
template <class T>
Tensor<T> batch_norm_features(const Tensor<T>& x, T eps = T(1e-5)) {
  if (x.rank() != 2) throw DimensionError("batch_norm_features: expected [B, D], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), D = x.dim(1);
  if (B < 2) throw DimensionError("batch_norm_features: batch size must be >= 2, got " + std::to_string(B));
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv = std::make_shared<std::vector<T>>(D);
  auto tiny = std::make_shared<std::vector<char>>(D);
  const auto xv = x.values();
  for (std::size_t j = 0; j < D; ++j) {
    T mu = 0;
    for (std::size_t b = 0; b < B; ++b) mu += xv[b * D + j];
    mu /= T(B);
    T var = 0;
    for (std::size_t b = 0; b < B; ++b) var += (xv[b * D + j] - mu) * (xv[b * D + j] - mu);
    var /= T(B);
    (*inv)[j] = T(1) / std::sqrt(std::max(var, eps));
    (*tiny)[j] = var <= eps;
    for (std::size_t b = 0; b < B; ++b) (*xhat)[b * D + j] = (xv[b * D + j] - mu) * (*inv)[j];
  }
  std::vector<T> out(*xhat);
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [=](detail::Node<T>& self) {
    auto* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t j = 0; j < D; ++j) {
      T s1 = 0, s2 = 0;
      for (std::size_t b = 0; b < B; ++b) {
        s1 += self.grad[b * D + j];
        s2 += self.grad[b * D + j] * (*xhat)[b * D + j];
      }
      // Below the guard the scale is constant, so only the centring term remains.
      if ((*tiny)[j]) s2 = 0;
      for (std::size_t b = 0; b < B; ++b)
        (*gx)[b * D + j] += (*inv)[j] / T(B) * (T(B) * self.grad[b * D + j] - s1 - (*xhat)[b * D + j] * s2);
    }
  });
}

namespace detail {

/// Left-to-right sum; Eigen's vectorized sum depends on buffer alignment.
template <class T>
T sequential_sum(const T* x, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

/// y = exp(x - shift) into y. The packet exp and std::exp disagree in the
/// last bit, and Eigen peels unaligned heads to the scalar path, so the work
/// is done in an owned (always aligned) buffer to keep results layout-free.
template <class T>
void exp_shifted(const T* x, T shift, T* y, std::size_t n) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  thread_local Arr buf;
  const auto m = static_cast<Eigen::Index>(n);
  buf.resize(m);
  buf = Eigen::Map<const Arr>(x, m);
  buf = (buf - shift).exp();
  std::copy(buf.data(), buf.data() + n, y);
}

template <class T>
void softmax_row(const T* x, T* y, std::size_t n) {
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xa(x, static_cast<Eigen::Index>(n));
  exp_shifted(x, xa.maxCoeff(), y, n);
  const T z = sequential_sum(y, n);
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

/// Row-wise in-place softmax of a rows x n block.
template <class T>
void softmax_rows(T* a, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(a + r * n, a + r * n, n);
}

}  // namespace detail

/// Softmax over the last axis (max-subtracted).
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  std::vector<T> out(logits.numel());
  for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(logits.values().data() + r * n, out.data() + r * n, n);
  return Tensor<T>::make_result(logits.shape(), std::move(out), {logits}, [n, rows](detail::Node<T>& self) {
    auto* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

/// log(softmax(x)) over the last axis, computed as x - logsumexp(x).
template <class T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  std::vector<T> out(logits.numel());
  detail::clean_vector_state();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.values().data() + r * n;
    const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xa(x, static_cast<Eigen::Index>(n));
    const T mx = xa.maxCoeff();
    detail::exp_shifted(x, mx, out.data() + r * n, n);
    const T lse = mx + std::log(detail::sequential_sum(out.data() + r * n, n));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[j] - lse;
  }
  return Tensor<T>::make_result(logits.shape(), std::move(out), {logits}, [n, rows](detail::Node<T>& self) {
    auto* gx = detail::parent_grad(self, 0);
    if (!gx) return;
    detail::clean_vector_state();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T s = 0;
      for (std::size_t j = 0; j < n; ++j) s += dy[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += dy[j] - std::exp(y[j]) * s;
    }
  });
}

/// Multi-head scaled dot-product attention on already-projected q, k, v of
/// shape [B, L, d]; head h uses feature columns [h*d/H, (h+1)*d/H).
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
  if (q.rank() != 3) throw DimensionError("attention: expected [B, L, d], got " + to_string(q.shape()));
  detail::require_same_shape(q.shape(), k.shape(), "attention");
  detail::require_same_shape(q.shape(), v.shape(), "attention");
  const std::size_t B = q.dim(0), L = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> os(static_cast<Eigen::Index>(d));

  auto probs = std::make_shared<std::vector<T>>(B * heads * L * L);
  std::vector<T> out(B * L * d);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * L * d + h * dh;
      Strided Q(q.values().data() + off, L, dh, os), K(k.values().data() + off, L, dh, os),
          V(v.values().data() + off, L, dh, os);
      MatMap<T> A(probs->data() + (b * heads + h) * L * L, L, L);
      A.noalias() = scale * (Q * K.transpose());
      detail::softmax_rows(A.data(), L, L);
      StridedMut(out.data() + off, L, dh, os).noalias() = A * V;
    }

  return Tensor<T>::make_result(q.shape(), std::move(out), {q, k, v}, [=](detail::Node<T>& self) {
    auto* gq = detail::parent_grad(self, 0);
    auto* gk = detail::parent_grad(self, 1);
    auto* gv = detail::parent_grad(self, 2);
    const auto& qv = detail::parent_value(self, 0);
    const auto& kv = detail::parent_value(self, 1);
    const auto& vv = detail::parent_value(self, 2);
    RowMat<T> dA(L, L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = b * L * d + h * dh;
        Strided Q(qv.data() + off, L, dh, os), K(kv.data() + off, L, dh, os), V(vv.data() + off, L, dh, os),
            dO(self.grad.data() + off, L, dh, os);
        ConstMatMap<T> A(probs->data() + (b * heads + h) * L * L, L, L);
        if (gv) StridedMut(gv->data() + off, L, dh, os).noalias() += A.transpose() * dO;
        if (!gq && !gk) continue;
        dA.noalias() = dO * V.transpose();
        Eigen::Array<T, Eigen::Dynamic, 1> dots(L);
        for (std::size_t i = 0; i < L; ++i) {
          // sequential so the result does not depend on buffer alignment
          T s = 0;
          for (std::size_t j = 0; j < L; ++j) s += dA(i, j) * A(i, j);
          dots[i] = s;
        }
        dA.array() = A.array() * (dA.array().colwise() - dots) * scale;
        if (gq) StridedMut(gq->data() + off, L, dh, os).noalias() += dA * K;
        if (gk) StridedMut(gk->data() + off, L, dh, os).noalias() += dA.transpose() * Q;
      }
  });
}

/// Mean softmax cross-entropy of logits [B, C] against integer labels.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  auto probs = std::make_shared<std::vector<T>>(B * C);
  std::vector<int> lab(labels.begin(), labels.end());
  T loss = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (lab[b] < 0 || static_cast<std::size_t>(lab[b]) >= C) throw DataError("cross_entropy: label out of range");
    detail::softmax_row(logits.values().data() + b * C, probs->data() + b * C, C);
    loss -= std::log(std::max((*probs)[b * C + lab[b]], std::numeric_limits<T>::min()));
  }
  loss /= T(B);
  return Tensor<T>::make_result(Shape{1}, {loss}, {logits}, [=](detail::Node<T>& self) {
    auto* g = detail::parent_grad(self, 0);
    if (!g) return;
    const T s = self.grad[0] / T(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        (*g)[b * C + c] += s * ((*probs)[b * C + c] - (static_cast<int>(c) == lab[b] ? T(1) : T(0)));
  });
}

}  // namespace cigmae
