#include "signglyph/augment.hpp"

#include <cmath>
#include <numbers>

namespace signglyph {

void AugmentPolicy::validate() const {
  if (!(max_rotation_deg >= 0.0)) throw ParameterError("max rotation must be non-negative");
  if (!(max_translate_frac >= 0.0 && max_translate_frac < 1.0)) {
    throw ParameterError("max translation fraction must lie in [0, 1)");
  }
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) {
    throw ParameterError("flip probability must lie in [0, 1]");
  }
}

AugmentDraw sample_augment(const AugmentPolicy& policy, std::size_t side, std::mt19937_64& rng) {
  policy.validate();
  AugmentDraw draw;
  if (!policy.enabled) return draw;
  const double max_shift = policy.max_translate_frac * static_cast<double>(side);
  std::uniform_real_distribution<double> angle(-policy.max_rotation_deg, policy.max_rotation_deg);
  std::uniform_real_distribution<double> shift(-max_shift, max_shift);
  std::bernoulli_distribution flip(policy.hflip_prob);
  draw.angle_deg = angle(rng);
  draw.shift_x = shift(rng);
  draw.shift_y = shift(rng);
  draw.flip = flip(rng);
  return draw;
}

Tensor apply_augment(const Tensor& image, const AugmentDraw& draw) {
  if (image.rank() != 3) {
    throw ShapeError("augment expects a [c,h,w] image, got " + shape_to_string(image.shape()));
  }
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double theta = draw.angle_deg * std::numbers::pi / 180.0;
  // Inverse rotation maps output coordinates back to source coordinates.
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);

  Tensor out(image.shape());
  auto tap = [&](const float* plane, long x, long y) -> float {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return 0.0f;
    return plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double rx = static_cast<double>(x) - draw.shift_x - cx;
      const double ry = static_cast<double>(y) - draw.shift_y - cy;
      double sx = cos_t * rx + sin_t * ry + cx;
      const double sy = -sin_t * rx + cos_t * ry + cy;
      if (draw.flip) sx = static_cast<double>(w) - 1.0 - sx;

      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const auto ax = static_cast<float>(sx - fx0), ay = static_cast<float>(sy - fy0);
      for (std::size_t c = 0; c < channels; ++c) {
        const float* plane = image.raw() + c * h * w;
        const float top = tap(plane, x0, y0) * (1.0f - ax) + tap(plane, x0 + 1, y0) * ax;
        const float bottom = tap(plane, x0, y0 + 1) * (1.0f - ax) + tap(plane, x0 + 1, y0 + 1) * ax;
        out[(c * h + y) * w + x] = top * (1.0f - ay) + bottom * ay;
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, const AugmentPolicy& policy, std::mt19937_64& rng) {
  if (!policy.enabled) return image;
  const std::size_t side = image.rank() == 3 ? image.dim(2) : 0;
  return apply_augment(image, sample_augment(policy, side, rng));
}

}  // namespace signglyph
