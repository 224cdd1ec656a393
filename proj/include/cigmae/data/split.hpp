// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cigmae/core/error.hpp"
#include "cigmae/core/rng.hpp"

namespace cigmae::data {

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  double ratio = 0.8;
  bool operator==(const SplitSpec&) const = default;
};

namespace detail {
inline std::map<int, std::vector<std::size_t>> group_by_class(std::span<const int> labels,
                                                              std::span<const std::size_t> pool) {
  std::map<int, std::vector<std::size_t>> groups;
  for (auto i : pool) groups[labels[i]].push_back(i);
  return groups;
}
}  // namespace detail

/// Per-class seeded shuffle, then floor(ratio * n_c) to train (clamped so
/// that both sides keep at least one sample of every class).
inline SplitSpec stratified_split(std::span<const int> labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DataError("stratified_split: ratio must lie in (0, 1)");
  std::vector<std::size_t> all(labels.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto groups = detail::group_by_class(labels, all);
  SplitSpec out;
  out.seed = seed;
  out.ratio = ratio;
  const Rng base(seed);
  for (const auto& [cls, members] : groups) {
    if (members.size() < 2)
      throw DataError("stratified_split: class " + std::to_string(cls) + " has fewer than 2 samples");
    auto shuffled = members;
    Rng rng = base.fork(static_cast<std::uint64_t>(cls));
    rng.shuffle(std::span<std::size_t>(shuffled));
    auto n_train = static_cast<std::size_t>(std::floor(ratio * double(shuffled.size()) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, shuffled.size() - 1);
    out.train.insert(out.train.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

/// Exactly k members of every class 0..classes-1 drawn from `pool`.
inline std::vector<std::size_t> kshot_sample(std::span<const int> labels, std::span<const std::size_t> pool,
                                             std::size_t k, std::size_t classes, std::uint64_t seed) {
  if (k == 0) throw DataError("kshot_sample: k must be >= 1");
  auto groups = detail::group_by_class(labels, pool);
  std::string deficient;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto have = groups.count(int(c)) ? groups[int(c)].size() : 0;
    if (have < k) deficient += (deficient.empty() ? "" : ", ") + std::to_string(c) + " (" + std::to_string(have) + ")";
  }
  if (!deficient.empty())
    throw DataError("kshot_sample: fewer than " + std::to_string(k) + " samples for classes " + deficient);
  std::vector<std::size_t> out;
  const Rng base(seed);
  for (std::size_t c = 0; c < classes; ++c) {
    auto members = groups[int(c)];
    Rng rng = base.fork(std::uint64_t(c) + 0x5a5a);
    rng.shuffle(std::span<std::size_t>(members));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

}  // namespace cigmae::data
