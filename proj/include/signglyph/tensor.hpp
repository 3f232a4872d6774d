#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "signglyph/errors.hpp"

namespace signglyph {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array (last axis fastest). Every dimension is strictly
// positive and data().size() == product(shape()). A default-constructed
// tensor is the empty placeholder: rank 0, no elements.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // Same data, new shape with an equal element count.
  BasicTensor reshaped(Shape shape) const&;
  BasicTensor reshaped(Shape shape) &&;

  void fill(T value);

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Batch geometry of an NCHW activation.
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  Shape4() = default;
  Shape4(std::size_t n, std::size_t c, std::size_t h, std::size_t w);

  template <typename T>
  static Shape4 of(const BasicTensor<T>& t) {
    if (t.rank() != 4) {
      throw ShapeError("expected a rank-4 [n,c,h,w] tensor, got " + shape_to_string(t.shape()));
    }
    return Shape4(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
  }

  Shape dims() const { return {n, c, h, w}; }
  std::size_t numel() const { return n * c * h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Convolution window geometry shared by im2col, col2im and conv2d.
struct Window {
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Output extent of a window sweep along one axis. Throws ShapeError unless
// (extent + 2 pad - kernel) is a non-negative multiple of stride.
std::size_t window_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride,
                                 std::size_t pad);

// out = a [m x k] * b [k x n]. Each output element accumulates t = 0..k-1 in
// ascending order, so results are bitwise reproducible.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// General kernel behind matmul and the layer backward passes. Computes
// C (+)= op(A) * op(B) where op(X) is X or its transpose, with row-major
// storage: op(A) is m x k, op(B) is k x n, C is m x n. With B untransposed
// every element sums over k in ascending order; with B transposed the sum is
// split across interleaved partial sums combined in a fixed order.
// Either way the result is bitwise reproducible.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate);

// Receptive-field patches of x as columns: row index (c, i, j) with j fastest,
// column index (n, oy, ox) with ox fastest. Out-of-bounds taps read zero.
template <typename T>
BasicTensor<T> im2col(const BasicTensor<T>& x, const Window& window);

// Linear adjoint of im2col: sums each column entry back into its source
// pixel. Taps that fell in the zero padding are dropped.
template <typename T>
BasicTensor<T> col2im(const BasicTensor<T>& cols, const Shape4& out_shape, const Window& window);

// Single-image variants operating on raw [c,h,w] buffers; the layers use
// these to avoid materializing whole-batch patch matrices.
template <typename T>
void im2col_image(const T* image, std::size_t channels, std::size_t height, std::size_t width,
                  const Window& window, T* cols);
template <typename T>
void col2im_image(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                  const Window& window, T* image);

// Per-row index of the maximum; ties resolve to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& x);

}  // namespace signglyph
