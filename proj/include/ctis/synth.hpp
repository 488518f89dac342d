#pragma once

#include <cstdint>

#include "ctis/error.hpp"
#include "ctis/features.hpp"
#include "ctis/rng.hpp"

namespace ctis {

// Ground-truth mode of a synthetic patch: modes are assigned round-robin.
inline std::size_t synth_mode_of(std::size_t patch_index, std::size_t n_modes) {
  return patch_index % n_modes;
}

inline constexpr double kSynthModeStd = 1.0;
inline constexpr double kSynthModeSeparation = 10.0; // 10x component std, pairwise

// Gaussian-mixture test slide. Mode j is centered at
// (j+1)*kSynthModeSeparation on axis (j mod dim), unit std, so mode means are
// pairwise separated by at least 10x the component std. Pure function of its
// arguments.
inline PatchFeatureMatrix synth_slide(std::uint64_t seed, std::size_t n_patches,
                                      std::size_t dim, std::size_t n_modes) {
  require(n_patches >= 1 && dim >= 1 && n_modes >= 1, Errc::invalid_shape,
          "n_patches, dim and n_modes must be positive");
  require(n_modes <= n_patches, Errc::invalid_shape,
          "n_modes (" + std::to_string(n_modes) + ") exceeds n_patches (" +
              std::to_string(n_patches) + ")");

  rng::Stream stream(rng::mix(seed, 0x5c1de5ee));
  PatchFeatureMatrix m;
  m.slide_id = "synth-" + std::to_string(seed);
  m.n_patches = n_patches;
  m.dim = dim;
  m.data.resize(n_patches * dim);
  m.coords.resize(n_patches * 2);
  for (std::size_t i = 0; i < n_patches; ++i) {
    const std::size_t mode = synth_mode_of(i, n_modes);
    const std::size_t axis = mode % dim;
    const double mean_on_axis = kSynthModeSeparation * static_cast<double>(mode + 1);
    for (std::size_t j = 0; j < dim; ++j) {
      const double mean = (j == axis) ? mean_on_axis : 0.0;
      m.at(i, j) = static_cast<float>(mean + kSynthModeStd * stream.next_normal());
    }
    m.coords[2 * i] = static_cast<std::int32_t>(i % 64);
    m.coords[2 * i + 1] = static_cast<std::int32_t>(i / 64);
  }
  return m;
}

} // namespace ctis
