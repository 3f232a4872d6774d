#include "signglyph/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>

// jpeglib.h relies on FILE and size_t being declared first.
#include <jpeglib.h>

namespace signglyph {

RawImage::RawImage(std::size_t w, std::size_t h, std::uint8_t fill)
    : width(w), height(h), pixels(w * h * 3, fill) {
  if (w == 0 || h == 0) throw ShapeError("image dimensions must be positive");
}

// ---------------------------------------------------------------- decoding

namespace {

bool is_png(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff;
}

RawImage decode_png(std::span<const std::uint8_t> bytes, const std::string& origin) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string why = image.message;
    png_image_free(&image);
    throw CorruptImageError("corrupt PNG " + origin + ": " + why);
  }
  // Composite any alpha onto black, which is also the background-subtraction
  // fill colour.
  image.format = PNG_FORMAT_RGB;
  png_color black{0, 0, 0};
  RawImage out;
  out.width = image.width;
  out.height = image.height;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, &black, out.pixels.data(), 0, nullptr)) {
    const std::string why = image.message;
    png_image_free(&image);
    throw CorruptImageError("corrupt PNG " + origin + ": " + why);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silent(j_common_ptr) {}

// Everything with a destructor lives outside the setjmp frame: the caller
// owns `out` and the error text.
bool decode_jpeg_into(std::span<const std::uint8_t> bytes, RawImage& out, std::string& error) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.base.output_message = jpeg_silent;
  if (setjmp(err.jump)) {
    error = err.message;
    jpeg_destroy_decompress(&cinfo);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  // libjpeg only warns on premature end of data; treat it as corruption.
  const bool truncated = err.base.num_warnings > 0;
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  if (truncated) {
    error = "premature end of JPEG data";
    return false;
  }
  return true;
}

}  // namespace

RawImage decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (is_png(bytes)) return decode_png(bytes, origin);
  if (is_jpeg(bytes)) {
    RawImage out;
    std::string error;
    if (!decode_jpeg_into(bytes, out, error)) {
      throw CorruptImageError("corrupt JPEG " + origin + ": " + error);
    }
    return out;
  }
  throw UnsupportedImageError("unsupported image format (expected PNG or JPEG): " + origin);
}

RawImage load_image(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw ImageNotFoundError("image not found: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_image(bytes, path.string());
}

void save_png(const RawImage& image, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string why = png.message;
    png_image_free(&png);
    throw IoError("cannot write PNG " + path.string() + ": " + why);
  }
}

// ---------------------------------------------------------------- preprocessing

RawImage subtract_background(const RawImage& image, const RawImage& background, int threshold) {
  if (image.width != background.width || image.height != background.height) {
    throw ShapeError("background is " + std::to_string(background.width) + "x" +
                     std::to_string(background.height) + ", image is " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  if (threshold < 0 || threshold > 255) {
    throw ParameterError("background threshold must be in 0..255, got " + std::to_string(threshold));
  }
  RawImage out = image;
  for (std::size_t p = 0; p < image.width * image.height; ++p) {
    int diff = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      diff = std::max(diff, std::abs(int(image.pixels[3 * p + c]) - int(background.pixels[3 * p + c])));
    }
    if (diff <= threshold) {
      out.pixels[3 * p] = out.pixels[3 * p + 1] = out.pixels[3 * p + 2] = 0;
    }
  }
  return out;
}

namespace {

RawImage pad_to_square(const RawImage& image) {
  const std::size_t side = std::max(image.width, image.height);
  if (image.width == side && image.height == side) return image;
  RawImage out(side, side, 0);
  const std::size_t left = (side - image.width) / 2;
  const std::size_t top = (side - image.height) / 2;
  for (std::size_t y = 0; y < image.height; ++y) {
    std::copy_n(image.pixels.data() + y * image.width * 3, image.width * 3,
                out.pixels.data() + ((top + y) * side + left) * 3);
  }
  return out;
}

struct Tap {
  std::size_t lo;
  std::size_t hi;
  float frac;
};

// Half-pixel-center source taps for resampling `in` samples onto `out`.
std::vector<Tap> resample_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[i] = {lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace

Tensor pad_and_resize(const RawImage& image, std::size_t side) {
  if (image.width == 0 || image.height == 0) throw ShapeError("cannot resize an empty image");
  if (side == 0) throw ParameterError("target side must be positive");
  const RawImage square = pad_to_square(image);
  const std::size_t in = square.width;
  const auto taps = resample_taps(in, side);
  Tensor out({3, side, side});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      const Tap ty = taps[y];
      for (std::size_t x = 0; x < side; ++x) {
        const Tap tx = taps[x];
        const float p00 = square.at(tx.lo, ty.lo, c), p01 = square.at(tx.hi, ty.lo, c);
        const float p10 = square.at(tx.lo, ty.hi, c), p11 = square.at(tx.hi, ty.hi, c);
        const float top = p00 * (1.0f - tx.frac) + p01 * tx.frac;
        const float bottom = p10 * (1.0f - tx.frac) + p11 * tx.frac;
        const float v = top * (1.0f - ty.frac) + bottom * ty.frac;
        out[(c * side + y) * side + x] = v / 255.0f;
      }
    }
  }
  return out;
}

RawImage to_raw_image(const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw ShapeError("expected [3,h,w] pixels, got " + shape_to_string(pixels.shape()));
  }
  const std::size_t h = pixels.dim(1), w = pixels.dim(2);
  RawImage out(w, h);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const float v = std::clamp(pixels[(c * h + y) * w + x], 0.0f, 1.0f);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return out;
}

RawImage preprocess_image(const RawImage& image, const PreprocessOptions& options) {
  const RawImage cleaned = options.background
                               ? subtract_background(image, *options.background, options.threshold)
                               : image;
  return to_raw_image(pad_and_resize(cleaned, options.side));
}

}  // namespace signglyph
