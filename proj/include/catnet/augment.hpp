#pragma once

#include <cstdint>

#include "catnet/errors.hpp"
#include "catnet/tensor.hpp"

namespace catnet {

struct AugmentationConfig {
  double rotation_max = 0.25;  // fraction of a full turn, drawn from [-max, max]
  double zoom_max = 0.25;      // scale drawn from [1-max, 1+max]
  double contrast_lo = 0.9;
  double contrast_hi = 1.1;
  double brightness_lo = 0.9;
  double brightness_hi = 1.1;
  double saturation_lo = 0.9;
  double saturation_hi = 1.1;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on out-of-range settings
};

struct AugmentationDraw {
  double zoom = 1.0;
  double rotation = 0.0;  // turns
  double contrast = 1.0;
  double brightness = 1.0;
  double saturation = 1.0;
};

// The parameter sample for (config.seed, sample_index); pure and stateless.
AugmentationDraw draw_augmentation(const AugmentationConfig& config, std::uint64_t sample_index);

// One bilinear resample of a [3,H,W] map about its center: scale by zoom, then
// rotate by rotation_turns, zero fill outside. The building block of augment.
Tensor resample_about_center(const Tensor& sample, double zoom, double rotation_turns);

// Applies zoom, rotation, contrast, brightness, saturation, in that order, to a
// [3,H,W] map in [0,1]. Geometric passes resample bilinearly about the center
// with zero fill; the result is clipped back to [0,1].
Tensor augment(const Tensor& sample, const AugmentationConfig& config,
               std::uint64_t sample_index);

}  // namespace catnet
