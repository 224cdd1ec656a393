// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cigmae/core/binary_io.hpp"
#include "cigmae/core/rng.hpp"
#include "cigmae/core/tensor.hpp"

namespace cigmae {

/// Ordered collection of named trainable tensors. Names are unique.
template <class T>
class ParameterSet {
 public:
  void add(const Tensor<T>& p) {
    if (!p.requires_grad()) throw ConfigError("parameter '" + p.name() + "' does not require grad");
    for (const auto& q : params_)
      if (q.name() == p.name()) throw ConfigError("duplicate parameter name '" + p.name() + "'");
    params_.push_back(p);
  }

  void extend(const ParameterSet& other) {
    for (const auto& p : other) add(p);
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  const Tensor<T>& operator[](std::size_t i) const { return params_[i]; }

  const Tensor<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name() == name) return &p;
    return nullptr;
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  void zero_grad() {
    for (auto p : params_) p.zero_grad();
  }

  /// Flat copy of every parameter value, for bitwise comparisons.
  std::vector<T> snapshot() const {
    std::vector<T> out;
    out.reserve(total_values());
    for (const auto& p : params_) out.insert(out.end(), p.values().begin(), p.values().end());
    return out;
  }

 private:
  std::vector<Tensor<T>> params_;
};

/// Parameter filled from U(-bound, bound).
template <class T>
Tensor<T> uniform_parameter(Rng& rng, Shape shape, double bound, std::string name) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::parameter(std::move(shape), std::move(v), std::move(name));
}

template <class T>
Tensor<T> constant_parameter(Shape shape, T value, std::string name) {
  std::vector<T> v(numel(shape), value);
  return Tensor<T>::parameter(std::move(shape), std::move(v), std::move(name));
}

namespace io {

template <class T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 4 : 8;
}

/// Named-parameter table: count, then per entry name, rank, dims, dtype tag
/// and the raw little-endian payload.
template <class T>
void write_parameter_table(Writer& w, const ParameterSet<T>& params) {
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put_string(p.name());
    w.put(static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put(dtype_tag<T>());
    w.put_span(p.values());
  }
}

/// Reads a table written by write_parameter_table into `params`, which must
/// hold the same names, order and shapes.
template <class T>
void read_parameter_table(Reader& r, const ParameterSet<T>& params) {
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    throw FormatError(FormatError::Code::shape_mismatch, "parameter count " + std::to_string(count) + " vs model " +
                                                             std::to_string(params.size()));
  for (auto p : params) {
    const auto name = r.get_string();
    if (name != p.name()) throw FormatError(FormatError::Code::shape_mismatch, "expected parameter '" + p.name() + "', found '" + name + "'");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(FormatError::Code::integrity, "implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != p.shape())
      throw FormatError(FormatError::Code::shape_mismatch,
                        "parameter '" + name + "' has shape " + to_string(shape) + ", model expects " + to_string(p.shape()));
    if (r.get<std::uint8_t>() != dtype_tag<T>())
      throw FormatError(FormatError::Code::shape_mismatch, "parameter '" + name + "' has a different scalar type");
    r.get_span(p.mutable_values());
  }
}

}  // namespace io
}  // namespace cigmae
