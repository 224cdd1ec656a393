// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cigmae/core/error.hpp"

#if defined(__AVX__)
#include <immintrin.h>
#endif

namespace cigmae {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

/// Drops dirty upper vector state left behind by wide GEMM kernels. Scalar
/// libm routines (exp, log, erf) otherwise pay a transition stall per call,
/// which was measured at 20x on AVX-512 hosts.
inline void clean_vector_state() {
#if defined(__AVX__)
  _mm256_zeroupper();
#endif
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  std::string name;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline bool& grad_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
  ~NoGradGuard() { detail::grad_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle participating in reverse-mode differentiation.
///
/// Copies share the underlying node; `detach()` produces an independent leaf.
/// Results of operations on tensors that require gradients record their
/// parents and a backward closure; `backward()` on a scalar result walks the
/// recorded graph in reverse topological order and accumulates into leaf
/// gradients.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;
  using BackwardFn = std::function<void(NodeT&)>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<NodeT>()) {
    node_->value.assign(cigmae::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<NodeT>()) {
    if (values.size() != cigmae::numel(shape)) {
      throw DimensionError("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor parameter(Shape shape, std::vector<T> values, std::string name) {
    Tensor t(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->name = std::move(name);
    return t;
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access; intended for leaves (parameters, data buffers).
  std::span<T> mutable_values() { return node_->value; }
  T at(std::size_t i) const { return node_->value.at(i); }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::string& name() const { return node_->name; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; untouched tensors report an all-zero gradient.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values, disconnected from any graph.
  Tensor detach() const { return Tensor(shape(), node_->value); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> v(node_->value.begin(), node_->value.end());
    return Tensor<U>(shape(), std::move(v));
  }

  /// Seeds d(self)/d(self) = 1 and propagates. Requires a single-element tensor.
  void backward() const {
    if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + to_string(shape()));
    if (!node_->requires_grad) return;
    const auto order = topological_order();
    for (NodeT* n : order) {
      if (n->backward) n->grad.clear();
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

  /// Builds an op result. The graph edge is recorded only when recording is
  /// enabled and at least one parent requires a gradient.
  static Tensor make_result(Shape shape, std::vector<T> values, std::initializer_list<Tensor> parents,
                            BackwardFn backward) {
    Tensor out(std::move(shape), std::move(values));
    if (detail::grad_disabled()) return out;
    const bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::vector<NodeT*> topological_order() const {
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        NodeT* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<NodeT> node_;
};

namespace detail {

/// Gradient buffer of parent `i` if that parent takes part in differentiation.
template <class T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents.at(i);
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

template <class T>
const std::vector<T>& parent_value(const Node<T>& self, std::size_t i) {
  return self.parents.at(i)->value;
}

}  // namespace detail

template <class T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace cigmae
