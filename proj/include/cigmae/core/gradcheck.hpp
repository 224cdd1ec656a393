// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cigmae/core/tensor.hpp"

namespace cigmae {

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar-valued `op` against central
/// differences at every coordinate of every input. Returns
/// max |analytic - numeric| / max(1, |numeric|).
inline double finite_difference_check(const ScalarFn& op, std::vector<Tensor<double>> inputs, double eps = 1e-5) {
  for (auto& x : inputs) {
    x = x.detach();
    x.set_requires_grad(true);
  }
  const Tensor<double> out = op(inputs);
  if (out.numel() != 1) throw DimensionError("finite_difference_check: op must be scalar-valued");
  if (!all_finite(out)) throw NumericError("finite_difference_check: non-finite output");
  out.backward();

  double worst = 0.0;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto vals = x.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double plus = 0, minus = 0;
      {
        NoGradGuard guard;
        vals[i] = saved + eps;
        plus = op(inputs).item();
        vals[i] = saved - eps;
        minus = op(inputs).item();
      }
      vals[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("finite_difference_check: non-finite probe");
      const double numeric = (plus - minus) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

/// Same comparison for an op that closes over live leaf tensors (model
/// parameters, say) instead of taking them as arguments. Each leaf is
/// perturbed in place and restored; leaves must require gradients.
inline double finite_difference_check_inplace(const std::function<Tensor<double>()>& op, const std::vector<Tensor<double>>& leaves,
                                              double eps = 1e-5) {
  for (auto x : leaves) {
    if (!x.requires_grad()) throw ConfigError("finite_difference_check_inplace: leaf does not require gradients");
    x.clear_grad();
  }
  const Tensor<double> out = op();
  if (out.numel() != 1) throw DimensionError("finite_difference_check: op must be scalar-valued");
  if (!all_finite(out)) throw NumericError("finite_difference_check: non-finite output");
  out.backward();

  double worst = 0.0;
  for (const auto& leaf : leaves) {
    auto x = leaf;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    auto vals = x.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double plus = 0, minus = 0;
      {
        NoGradGuard guard;
        vals[i] = saved + eps;
        plus = op().item();
        vals[i] = saved - eps;
        minus = op().item();
      }
      vals[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("finite_difference_check: non-finite probe");
      const double numeric = (plus - minus) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    x.clear_grad();
  }
  return worst;
}

/// Tensor of the given shape with entries drawn uniformly from [lo, hi).
template <class Gen>
Tensor<double> random_tensor(Gen& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace cigmae
