// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "cigmae/core/ops.hpp"

namespace cigmae {

/// (height, width) pair for kernels and strides.
struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Extent2&) const = default;
};

inline std::string to_string(Extent2 e) { return "(" + std::to_string(e.h) + "," + std::to_string(e.w) + ")"; }

namespace detail {

/// Geometry shared by valid convolution and its transpose: a "large" image
/// [B, C, H, W] tiled by a [oh, ow] grid of kernel windows at the given stride.
struct WindowGeometry {
  std::size_t batch, channels, height, width;
  Extent2 kernel, stride;
  std::size_t oh, ow;

  std::size_t rows() const { return batch * oh * ow; }
  std::size_t cols() const { return channels * kernel.h * kernel.w; }

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          const std::size_t row = (b * oh + i) * ow + j;
          std::size_t col = 0;
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t ki = 0; ki < kernel.h; ++ki) {
              const std::size_t base = ((b * channels + c) * height + i * stride.h + ki) * width + j * stride.w;
              for (std::size_t kj = 0; kj < kernel.w; ++kj, ++col) f(row, col, base + kj);
            }
        }
  }
};

template <class T>
std::vector<T> im2col(const WindowGeometry& g, const T* image) {
  std::vector<T> cols(g.rows() * g.cols());
  const std::size_t nc = g.cols();
  g.for_each([&](std::size_t r, std::size_t c, std::size_t p) { cols[r * nc + c] = image[p]; });
  return cols;
}

template <class T>
void col2im_add(const WindowGeometry& g, const T* cols, std::vector<T>& image) {
  const std::size_t nc = g.cols();
  g.for_each([&](std::size_t r, std::size_t c, std::size_t p) { image[p] += cols[r * nc + c]; });
}

/// [B, C, P] -> [B*P, C]
template <class T>
std::vector<T> to_rows(const T* x, std::size_t B, std::size_t C, std::size_t P) {
  std::vector<T> r(B * C * P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) r[(b * P + p) * C + c] = x[(b * C + c) * P + p];
  return r;
}

template <class T>
void from_rows_add(const T* rows, std::size_t B, std::size_t C, std::size_t P, T* x) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) x[(b * C + c) * P + p] += rows[(b * P + p) * C + c];
}

inline void check_extent(Extent2 e, const char* what) {
  if (e.h < 1 || e.w < 1) throw ConfigError(std::string(what) + " components must be >= 1, got " + to_string(e));
}

}  // namespace detail

/// Valid (unpadded) 2-D convolution.
/// input [B,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] -> [B,Cout,H',W'],
/// H' = (H-kh)/sh + 1 (floor), likewise for W'.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Extent2 stride) {
  detail::check_extent(stride, "conv2d stride");
  if (input.rank() != 4 || weight.rank() != 4)
    throw DimensionError("conv2d: expected rank-4 input and weight, got " + to_string(input.shape()) + ", " +
                         to_string(weight.shape()));
  const std::size_t B = input.dim(0), cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t cout = weight.dim(0);
  const Extent2 k{weight.dim(2), weight.dim(3)};
  if (weight.dim(1) != cin)
    throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  if (H < k.h || W < k.w) throw DimensionError("conv2d: input " + to_string(input.shape()) + " smaller than kernel");
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias width mismatch");
  const detail::WindowGeometry geo{B, cin, H, W, k, stride, (H - k.h) / stride.h + 1, (W - k.w) / stride.w + 1};
  const std::size_t P = geo.oh * geo.ow, K = geo.cols();

  auto cols = std::make_shared<std::vector<T>>(detail::im2col(geo, input.values().data()));
  RowMat<T> yrows(geo.rows(), cout);
  yrows.noalias() = ConstMatMap<T>(cols->data(), geo.rows(), K) * ConstMatMap<T>(weight.values().data(), cout, K).transpose();
  std::vector<T> out(B * cout * P, T(0));
  detail::from_rows_add(yrows.data(), B, cout, P, out.data());
  if (bias.defined())
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < P; ++p) out[(b * cout + c) * P + p] += bias.values()[c];

  auto backward = [geo, cols, cout, P, K, B](detail::Node<T>& self) {
    const auto gy = detail::to_rows(self.grad.data(), B, cout, P);
    ConstMatMap<T> GY(gy.data(), geo.rows(), cout);
    if (auto* gw = detail::parent_grad(self, 1))
      MatMap<T>(gw->data(), cout, K).noalias() += GY.transpose() * ConstMatMap<T>(cols->data(), geo.rows(), K);
    if (auto* gx = detail::parent_grad(self, 0)) {
      RowMat<T> gcols = GY * ConstMatMap<T>(detail::parent_value(self, 1).data(), cout, K);
      detail::col2im_add(geo, gcols.data(), *gx);
    }
    if (self.parents.size() > 2)
      if (auto* gb = detail::parent_grad(self, 2))
        for (std::size_t r = 0; r < geo.rows(); ++r)
          for (std::size_t c = 0; c < cout; ++c) (*gb)[c] += gy[r * cout + c];
  };
  Shape shape{B, cout, geo.oh, geo.ow};
  if (bias.defined()) return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight, bias}, backward);
  return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight}, backward);
}

/// Transposed convolution (no padding, no output padding).
/// input [B,Cin,H,W], weight [Cin,Cout,kh,kw], bias [Cout] -> [B,Cout,H',W'],
/// H' = (H-1)*sh + kh, likewise for W'.
template <class T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Extent2 stride) {
  detail::check_extent(stride, "deconv2d stride");
  if (input.rank() != 4 || weight.rank() != 4)
    throw DimensionError("deconv2d: expected rank-4 input and weight, got " + to_string(input.shape()) + ", " +
                         to_string(weight.shape()));
  const std::size_t B = input.dim(0), cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (weight.dim(0) != cin)
    throw DimensionError("deconv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                         std::to_string(weight.dim(0)));
  const std::size_t cout = weight.dim(1);
  const Extent2 k{weight.dim(2), weight.dim(3)};
  if (bias.defined() && bias.numel() != cout) throw DimensionError("deconv2d: bias width mismatch");
  const std::size_t OH = (H - 1) * stride.h + k.h, OW = (W - 1) * stride.w + k.w;
  const detail::WindowGeometry geo{B, cout, OH, OW, k, stride, H, W};
  const std::size_t P = H * W, K = geo.cols();

  auto xrows = std::make_shared<std::vector<T>>(detail::to_rows(input.values().data(), B, cin, P));
  RowMat<T> cols(geo.rows(), K);
  cols.noalias() = ConstMatMap<T>(xrows->data(), geo.rows(), cin) * ConstMatMap<T>(weight.values().data(), cin, K);
  std::vector<T> out(B * cout * OH * OW, T(0));
  detail::col2im_add(geo, cols.data(), out);
  if (bias.defined()) {
    const std::size_t plane = OH * OW;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < cout; ++c)
        for (std::size_t p = 0; p < plane; ++p) out[(b * cout + c) * plane + p] += bias.values()[c];
  }

  auto backward = [geo, xrows, cin, cout, P, K, B, OH, OW](detail::Node<T>& self) {
    const auto gcols = detail::im2col(geo, self.grad.data());
    ConstMatMap<T> GC(gcols.data(), geo.rows(), K);
    if (auto* gw = detail::parent_grad(self, 1))
      MatMap<T>(gw->data(), cin, K).noalias() += ConstMatMap<T>(xrows->data(), geo.rows(), cin).transpose() * GC;
    if (auto* gx = detail::parent_grad(self, 0)) {
      RowMat<T> gxr = GC * ConstMatMap<T>(detail::parent_value(self, 1).data(), cin, K).transpose();
      detail::from_rows_add(gxr.data(), B, cin, P, gx->data());
    }
    if (self.parents.size() > 2)
      if (auto* gb = detail::parent_grad(self, 2)) {
        const std::size_t plane = OH * OW;
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t p = 0; p < plane; ++p) (*gb)[c] += self.grad[(b * cout + c) * plane + p];
      }
  };
  Shape shape{B, cout, OH, OW};
  if (bias.defined()) return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight, bias}, backward);
  return Tensor<T>::make_result(std::move(shape), std::move(out), {input, weight}, backward);
}

}  // namespace cigmae
