#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "signglyph/tensor.hpp"

namespace signglyph {

// 8-bit interleaved RGB, row-major.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RawImage() = default;
  RawImage(std::size_t width, std::size_t height, std::uint8_t fill = 0);

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t channel) {
    return pixels[(y * width + x) * 3 + channel];
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t channel) const {
    return pixels[(y * width + x) * 3 + channel];
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

class ImageNotFoundError : public IoError {
 public:
  using IoError::IoError;
};
class UnsupportedImageError : public FormatError {
 public:
  using FormatError::FormatError;
};
class CorruptImageError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Decodes PNG or baseline JPEG by content sniffing. Grayscale expands to
// three equal channels; alpha is discarded; 16-bit PNG is reduced to 8 bits.
RawImage load_image(const std::filesystem::path& path);
RawImage decode_image(std::span<const std::uint8_t> bytes, const std::string& origin);

void save_png(const RawImage& image, const std::filesystem::path& path);

// Blacks out every pixel whose largest per-channel absolute difference from
// the reference background is at most `threshold`; others are kept as is.
RawImage subtract_background(const RawImage& image, const RawImage& background, int threshold);

inline constexpr int kDefaultBackgroundThreshold = 30;
inline constexpr std::size_t kDefaultInputSide = 200;

// Pads the short axis with black to a square (odd remainder goes to the
// bottom/right), bilinearly resamples to side x side with half-pixel centers,
// and returns [3, side, side] floats in [0, 1].
Tensor pad_and_resize(const RawImage& image, std::size_t side = kDefaultInputSide);

// Rounds [c, h, w] floats in [0, 1] back to 8-bit RGB.
RawImage to_raw_image(const Tensor& pixels);

struct PreprocessOptions {
  std::size_t side = kDefaultInputSide;
  std::optional<RawImage> background;
  int threshold = kDefaultBackgroundThreshold;
};

// The preparation path shared by dataset preparation and single-image
// prediction: optional background subtraction, then pad/resize, quantized to
// 8 bits exactly as it is stored on disk.
RawImage preprocess_image(const RawImage& image, const PreprocessOptions& options);

}  // namespace signglyph
