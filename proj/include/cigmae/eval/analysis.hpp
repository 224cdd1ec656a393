// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "cigmae/data/synth.hpp"
#include "cigmae/train/trainer.hpp"

namespace cigmae::eval {

/// Cross-modal correlation C of the projected, batch-normalised latents of
/// the given samples, taken as one batch. Needs a model with BT heads.
template <class T>
Tensor<T> cross_modal_correlation(const train::CigMaeModel<T>& m, const data::Dataset& ds, std::span<const std::size_t> indices) {
  if (!m.head_amplitude) throw ConfigError("cross_modal_correlation: model has no projection heads");
  NoGradGuard guard;
  auto [pa, pp] = model::project_and_normalize(
      model::encode(ds.gather<T>(indices, data::Modality::amplitude), m.amplitude.encoder, m.geometry),
      model::encode(ds.gather<T>(indices, data::Modality::phase), m.phase->encoder, m.geometry), *m.head_amplitude,
      *m.head_phase);
  return model::cross_correlation(pa, pp);
}

struct VisibilityContrast {
  double region_mean = 0;      ///< mean visibility probability on activity patches
  double background_mean = 0;  ///< mean on all other patches
  double ratio() const { return region_mean / background_mean; }
};

/// Policy visibility on labelled activity regions versus background. A patch
/// belongs to the region when its centre pixel lies inside it.
template <class T>
VisibilityContrast visibility_contrast(const train::Trainer<T>& t, const data::Dataset& ds, std::span<const std::size_t> indices,
                                       const std::function<data::ActivityRegion(int)>& region_of, data::Modality m,
                                       std::size_t batch = 64) {
  const auto& g = t.grid();
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t lo = 0; lo < indices.size(); lo += batch) {
    const auto part = indices.subspan(lo, std::min(batch, indices.size() - lo));
    const auto p = t.visibility(ds.gather<T>(part, m), m);
    const auto labels = ds.labels_of(part);
    for (std::size_t b = 0; b < part.size(); ++b) {
      const auto reg = region_of(labels[b]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t s = g.row_of(i) * g.patch.h + g.patch.h / 2, tc = g.col_of(i) * g.patch.w + g.patch.w / 2;
        const double v = p.at(b * g.size() + i);
        if (reg.contains(s, tc)) in += v, ++n_in;
        else out += v, ++n_out;
      }
    }
  }
  if (n_in == 0 || n_out == 0) throw DataError("visibility_contrast: region or background is empty");
  return {in / double(n_in), out / double(n_out)};
}

}  // namespace cigmae::eval
