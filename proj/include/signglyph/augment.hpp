#pragma once

#include <random>

#include "signglyph/tensor.hpp"

namespace signglyph {

// Random geometric jitter: rotation about the image center, independent x/y
// translation, and a horizontal mirror (either hand may sign).
struct AugmentPolicy {
  double max_rotation_deg = 20.0;
  double max_translate_frac = 0.20;
  double hflip_prob = 0.5;
  bool enabled = true;

  void validate() const;

  static AugmentPolicy disabled() {
    AugmentPolicy p;
    p.enabled = false;
    return p;
  }
};

// One concrete draw from a policy.
struct AugmentDraw {
  double angle_deg = 0.0;
  double shift_x = 0.0;  // pixels, positive moves content right
  double shift_y = 0.0;  // pixels, positive moves content down
  bool flip = false;
};

// angle ~ U[-max, max], shift ~ U[-frac, frac] * side per axis,
// flip ~ Bernoulli(hflip_prob). A disabled policy yields the identity draw
// without consuming randomness.
AugmentDraw sample_augment(const AugmentPolicy& policy, std::size_t side, std::mt19937_64& rng);

// Applies flip, then rotation, then translation to a [c, h, w] image using
// bilinear sampling; content leaving the frame is filled with black.
Tensor apply_augment(const Tensor& image, const AugmentDraw& draw);

// sample_augment followed by apply_augment; returns the input unchanged when
// the policy is disabled.
Tensor augment(const Tensor& image, const AugmentPolicy& policy, std::mt19937_64& rng);

}  // namespace signglyph
