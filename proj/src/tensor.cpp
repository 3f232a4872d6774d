#include "signglyph/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

namespace signglyph {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  BasicTensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  validate_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

Shape4::Shape4(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_)
    : n(n_), c(c_), h(h_), w(w_) {
  if (n == 0 || c == 0 || h == 0 || w == 0) {
    throw ShapeError("Shape4 dimensions must be positive, got " + shape_to_string(dims()));
  }
}

std::size_t window_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                                 std::size_t pad) {
  if (kernel == 0 || stride == 0) throw ShapeError("kernel and stride must be positive");
  const std::size_t padded = extent + 2 * pad;
  if (padded < kernel) {
    throw ShapeError("window " + std::to_string(kernel) + " larger than padded extent " +
                     std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ShapeError("extent " + std::to_string(extent) + " with kernel " + std::to_string(kernel) +
                     ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad) +
                     " gives a non-integral output size");
  }
  return (padded - kernel) / stride + 1;
}

namespace {

// Register tile of the row-major kernel: kTileRows rows of C by kTileVecs
// vectors of columns stay in accumulators for the whole k loop.
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileVecs = 4;
constexpr std::size_t kVecBytes = 16;

template <typename T>
struct Lanes {
  typedef T Vec __attribute__((vector_size(kVecBytes)));
  static constexpr std::size_t width = kVecBytes / sizeof(T);

  static Vec load(const T* p) {
    Vec v;
    std::memcpy(&v, p, sizeof v);
    return v;
  }
  static void store(T* p, Vec v) { std::memcpy(p, &v, sizeof v); }
};

// C (+)= op(A) * B with B row-major k x n. Every C element is the sum over
// t = 0..k-1 in ascending order, started from zero and then added to the
// existing value when accumulating.
template <typename T>
void gemm_rows(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
               T* c, bool accumulate) {
  using L = Lanes<T>;
  using Vec = typename L::Vec;
  constexpr std::size_t w = L::width;
  constexpr std::size_t cols = kTileVecs * w;

  std::vector<T> packed;
  if (trans_a) {
    packed.resize(m * k);
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t i = 0; i < m; ++i) packed[i * k + t] = a[t * m + i];
    }
    a = packed.data();
  }
  auto put = [&](T* dst, Vec v) { L::store(dst, accumulate ? L::load(dst) + v : v); };

  std::size_t j0 = 0;
  for (; j0 + cols <= n; j0 += cols) {
    std::size_t i0 = 0;
    for (; i0 + kTileRows <= m; i0 += kTileRows) {
      const T* a0 = a + i0 * k;
      Vec acc[kTileRows][kTileVecs] = {};
      for (std::size_t t = 0; t < k; ++t) {
        Vec bv[kTileVecs];
        for (std::size_t v = 0; v < kTileVecs; ++v) bv[v] = L::load(b + t * n + j0 + v * w);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const T av = a0[r * k + t];
          for (std::size_t v = 0; v < kTileVecs; ++v) acc[r][v] += av * bv[v];
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r) {
        for (std::size_t v = 0; v < kTileVecs; ++v) put(c + (i0 + r) * n + j0 + v * w, acc[r][v]);
      }
    }
    for (; i0 < m; ++i0) {
      Vec acc[kTileVecs] = {};
      for (std::size_t t = 0; t < k; ++t) {
        const T av = a[i0 * k + t];
        for (std::size_t v = 0; v < kTileVecs; ++v) acc[v] += av * L::load(b + t * n + j0 + v * w);
      }
      for (std::size_t v = 0; v < kTileVecs; ++v) put(c + i0 * n + j0 + v * w, acc[v]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = j0; j < n; ++j) {
      T acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

// C (+)= op(A) * B^T with B stored row-major n x k. Element t feeds partial
// sum t % (2 * width); the partials are combined in lane order, so the result
// is still fixed.
constexpr std::size_t kDotBlock = 1024;

template <typename T>
void gemm_dot(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
              T* c, bool accumulate) {
  using L = Lanes<T>;
  using Vec = typename L::Vec;
  constexpr std::size_t w = L::width;
  constexpr std::size_t step = 2 * w;

  std::vector<T> a_rows;
  if (trans_a) {
    a_rows.resize(m * k);
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t i = 0; i < m; ++i) a_rows[i * k + t] = a[t * m + i];
    }
    a = a_rows.data();
  }
  // Partials persist across k blocks, so blocking only changes cache reuse.
  std::vector<Vec> partials(m * n * 2, Vec{});
  const std::size_t body = k - k % step;
  for (std::size_t t0 = 0; t0 < body; t0 += kDotBlock) {
    const std::size_t t1 = std::min(body, t0 + kDotBlock);
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        Vec p0 = partials[(i * n + j) * 2];
        Vec p1 = partials[(i * n + j) * 2 + 1];
        for (std::size_t t = t0; t < t1; t += step) {
          p0 += L::load(arow + t) * L::load(brow + t);
          p1 += L::load(arow + t + w) * L::load(brow + t + w);
        }
        partials[(i * n + j) * 2] = p0;
        partials[(i * n + j) * 2 + 1] = p1;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T part[step];
      L::store(part, partials[(i * n + j) * 2]);
      L::store(part + w, partials[(i * n + j) * 2 + 1]);
      for (std::size_t t = body, l = 0; t < k; ++t, ++l) part[l] += a[i * k + t] * b[j * k + t];
      T sum = 0;
      for (std::size_t l = 0; l < step; ++l) sum += part[l];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (trans_b) {
    gemm_dot(trans_a, m, n, k, a, b, c, accumulate);
  } else {
    gemm_rows(trans_a, m, n, k, a, b, c, accumulate);
  }
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  BasicTensor<T> out({m, n});
  gemm(false, false, m, n, k, a.raw(), b.raw(), out.raw(), false);
  return out;
}

template <typename T>
void im2col_image(const T* image, std::size_t channels, std::size_t height, std::size_t width,
                  const Window& win, T* cols) {
  const std::size_t oh = window_output_extent(height, win.kh, win.stride, win.pad);
  const std::size_t ow = window_output_extent(width, win.kw, win.stride, win.pad);
  const std::size_t positions = oh * ow;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const T* plane = image + ch * height * width;
    for (std::size_t ki = 0; ki < win.kh; ++ki) {
      for (std::size_t kj = 0; kj < win.kw; ++kj) {
        T* row = cols + ((ch * win.kh + ki) * win.kw + kj) * positions;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          // Signed arithmetic: padding makes the top-left taps negative.
          const long y = static_cast<long>(oy * win.stride + ki) - static_cast<long>(win.pad);
          T* dst = row + oy * ow;
          if (y < 0 || y >= static_cast<long>(height)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * width;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long x = static_cast<long>(ox * win.stride + kj) - static_cast<long>(win.pad);
            dst[ox] = (x < 0 || x >= static_cast<long>(width)) ? T{0} : src[x];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_image(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                  const Window& win, T* image) {
  const std::size_t oh = window_output_extent(height, win.kh, win.stride, win.pad);
  const std::size_t ow = window_output_extent(width, win.kw, win.stride, win.pad);
  const std::size_t positions = oh * ow;
  std::fill(image, image + channels * height * width, T{0});
  for (std::size_t ch = 0; ch < channels; ++ch) {
    T* plane = image + ch * height * width;
    for (std::size_t ki = 0; ki < win.kh; ++ki) {
      for (std::size_t kj = 0; kj < win.kw; ++kj) {
        const T* row = cols + ((ch * win.kh + ki) * win.kw + kj) * positions;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long y = static_cast<long>(oy * win.stride + ki) - static_cast<long>(win.pad);
          if (y < 0 || y >= static_cast<long>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * width;
          const T* src = row + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long x = static_cast<long>(ox * win.stride + kj) - static_cast<long>(win.pad);
            if (x >= 0 && x < static_cast<long>(width)) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& x, const Window& win) {
  const Shape4 s = Shape4::of(x);
  const std::size_t oh = window_output_extent(s.h, win.kh, win.stride, win.pad);
  const std::size_t ow = window_output_extent(s.w, win.kw, win.stride, win.pad);
  const std::size_t rows = s.c * win.kh * win.kw;
  const std::size_t per_image = oh * ow;
  BasicTensor<T> out({rows, s.n * per_image});
  std::vector<T> scratch(rows * per_image);
  for (std::size_t n = 0; n < s.n; ++n) {
    im2col_image(x.raw() + n * s.c * s.h * s.w, s.c, s.h, s.w, win, scratch.data());
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(scratch.data() + r * per_image, per_image,
                  out.raw() + r * s.n * per_image + n * per_image);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, const Shape4& s, const Window& win) {
  const std::size_t oh = window_output_extent(s.h, win.kh, win.stride, win.pad);
  const std::size_t ow = window_output_extent(s.w, win.kw, win.stride, win.pad);
  const std::size_t rows = s.c * win.kh * win.kw;
  const std::size_t per_image = oh * ow;
  if (cols.rank() != 2 || cols.dim(0) != rows || cols.dim(1) != s.n * per_image) {
    throw ShapeError("col2im: columns " + shape_to_string(cols.shape()) +
                     " inconsistent with image " + shape_to_string(s.dims()) + " and kernel " +
                     std::to_string(win.kh) + "x" + std::to_string(win.kw));
  }
  BasicTensor<T> out(s.dims());
  std::vector<T> scratch(rows * per_image);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(cols.raw() + r * s.n * per_image + n * per_image, per_image,
                  scratch.data() + r * per_image);
    }
    col2im_image(scratch.data(), s.c, s.h, s.w, win, out.raw() + n * s.c * s.h * s.w);
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("argmax_rows expects rank 2, got " + shape_to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = x.raw() + i * cols;
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

#define SIGNGLYPH_INSTANTIATE(T)                                                                  \
  template class BasicTensor<T>;                                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, \
                        bool);                                                                    \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> im2col<T>(const BasicTensor<T>&, const Window&);                        \
  template BasicTensor<T> col2im<T>(const BasicTensor<T>&, const Shape4&, const Window&);         \
  template void im2col_image<T>(const T*, std::size_t, std::size_t, std::size_t, const Window&,   \
                                T*);                                                              \
  template void col2im_image<T>(const T*, std::size_t, std::size_t, std::size_t, const Window&,   \
                                T*);                                                              \
  template std::vector<int> argmax_rows<T>(const BasicTensor<T>&);

SIGNGLYPH_INSTANTIATE(float)
SIGNGLYPH_INSTANTIATE(double)

#undef SIGNGLYPH_INSTANTIATE

}  // namespace signglyph
