// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cigmae/core/params.hpp"

namespace cigmae {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// AdamW with decoupled weight decay and bias correction.
template <class T>
class AdamW {
 public:
  AdamW(ParameterSet<T> params, AdamWConfig hyper) : params_(std::move(params)) {
    state_.hyper = hyper;
    for (const auto& p : params_) {
      state_.first_moment.emplace_back(p.numel(), T(0));
      state_.second_moment.emplace_back(p.numel(), T(0));
    }
  }

  void zero_grad() { params_.zero_grad(); }

  /// Applies one update from the currently accumulated gradients.
  void step() {
    for (const auto& p : params_)
      if (!p.has_grad()) throw NumericError("adamw: parameter '" + p.name() + "' has no gradient");
    const auto& h = state_.hyper;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const T bc1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
    const T lr = static_cast<T>(h.lr), b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
    const T decay = static_cast<T>(h.lr * h.weight_decay), eps = static_cast<T>(h.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<T> p = params_[k];
      auto theta = p.mutable_values();
      const auto g = p.grad();
      auto& m = state_.first_moment[k];
      auto& v = state_.second_moment[k];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= decay * theta[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }

  const ParameterSet<T>& params() const { return params_; }
  const OptimizerState<T>& state() const { return state_; }
  OptimizerState<T>& state() { return state_; }

 private:
  ParameterSet<T> params_;
  OptimizerState<T> state_;
};

namespace io {

template <class T>
void write_optimizer_state(Writer& w, const OptimizerState<T>& s) {
  w.put(s.hyper.lr);
  w.put(s.hyper.beta1);
  w.put(s.hyper.beta2);
  w.put(s.hyper.weight_decay);
  w.put(s.hyper.eps);
  w.put(s.step);
  w.put(static_cast<std::uint32_t>(s.first_moment.size()));
  for (std::size_t k = 0; k < s.first_moment.size(); ++k) {
    w.put(static_cast<std::uint64_t>(s.first_moment[k].size()));
    w.put_span(std::span<const T>(s.first_moment[k]));
    w.put_span(std::span<const T>(s.second_moment[k]));
  }
}

template <class T>
void read_optimizer_state(Reader& r, OptimizerState<T>& s) {
  s.hyper.lr = r.get<double>();
  s.hyper.beta1 = r.get<double>();
  s.hyper.beta2 = r.get<double>();
  s.hyper.weight_decay = r.get<double>();
  s.hyper.eps = r.get<double>();
  s.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  if (n != s.first_moment.size())
    throw FormatError(FormatError::Code::shape_mismatch, "optimizer state covers " + std::to_string(n) + " parameters, expected " +
                                                             std::to_string(s.first_moment.size()));
  for (std::size_t k = 0; k < n; ++k) {
    const auto len = r.get<std::uint64_t>();
    if (len != s.first_moment[k].size()) throw FormatError(FormatError::Code::shape_mismatch, "optimizer moment size mismatch");
    r.get_span(std::span<T>(s.first_moment[k]));
    r.get_span(std::span<T>(s.second_moment[k]));
  }
}

}  // namespace io
}  // namespace cigmae
