#include "signglyph/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "signglyph/hash.hpp"

namespace signglyph {

namespace {

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
  if (!t.all_finite()) throw ParameterError(std::string(what) + " contains non-finite values");
}

}  // namespace

template <typename T>
void ConvParams<T>::validate() const {
  if (weights.rank() != 4) {
    throw ShapeError("conv weights must be [outC,inC,kh,kw], got " +
                     shape_to_string(weights.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(0)) {
    throw ShapeError("conv bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(0)) + " output channels");
  }
  if (stride == 0) throw ParameterError("conv stride must be at least 1");
  require_finite(weights, "conv weights");
  require_finite(bias, "conv bias");
}

template <typename T>
void DenseParams<T>::validate() const {
  if (weights.rank() != 2) {
    throw ShapeError("dense weights must be [in,out], got " + shape_to_string(weights.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != weights.dim(1)) {
    throw ShapeError("dense bias " + shape_to_string(bias.shape()) + " does not match " +
                     std::to_string(weights.dim(1)) + " outputs");
  }
  require_finite(weights, "dense weights");
  require_finite(bias, "dense bias");
}

// ---------------------------------------------------------------- conv

namespace {

template <typename T>
Shape conv_output_shape(const ConvParams<T>& p, std::size_t channels, std::size_t h,
                        std::size_t w) {
  if (channels != p.weights.dim(1)) {
    throw ShapeError("conv expects " + std::to_string(p.weights.dim(1)) +
                     " input channels, got " + std::to_string(channels));
  }
  const Window win = p.window();
  return {p.weights.dim(0), window_output_extent(h, win.kh, win.stride, win.pad),
          window_output_extent(w, win.kw, win.stride, win.pad)};
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p) {
  const Shape4 in = Shape4::of(x);
  const Shape out_chw = conv_output_shape(p, in.c, in.h, in.w);
  const Window win = p.window();
  const std::size_t out_c = out_chw[0];
  const std::size_t positions = out_chw[1] * out_chw[2];
  const std::size_t patch = in.c * win.kh * win.kw;

  BasicTensor<T> out({in.n, out_c, out_chw[1], out_chw[2]});
  std::vector<T> cols(patch * positions);
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col_image(x.raw() + n * in.c * in.h * in.w, in.c, in.h, in.w, win, cols.data());
    T* dst = out.raw() + n * out_c * positions;
    gemm(false, false, out_c, positions, patch, p.weights.raw(), cols.data(), dst, false);
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      const T b = p.bias[oc];
      T* plane = dst + oc * positions;
      for (std::size_t i = 0; i < positions; ++i) plane[i] += b;
    }
  }
  return out;
}

template <typename T>
Conv2d<T>::Conv2d(ConvParams<T> params) : params_(std::move(params)) {
  params_.validate();
  weight_grad_ = BasicTensor<T>(params_.weights.shape());
  bias_grad_ = BasicTensor<T>(params_.bias.shape());
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& input) const {
  if (input.size() != 3) throw ShapeError("conv expects [c,h,w] samples, got " + shape_to_string(input));
  return conv_output_shape(params_, input[0], input[1], input[2]);
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = conv2d(x, params_);
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> Conv2d<T>::backward(const BasicTensor<T>& grad_out) {
  const Shape4 in = Shape4::of(input_);
  const Shape out_chw = conv_output_shape(params_, in.c, in.h, in.w);
  const Shape expected{in.n, out_chw[0], out_chw[1], out_chw[2]};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv backward expects gradient " + shape_to_string(expected) + ", got " +
                     shape_to_string(grad_out.shape()));
  }
  const Window win = params_.window();
  const std::size_t out_c = out_chw[0];
  const std::size_t positions = out_chw[1] * out_chw[2];
  const std::size_t patch = in.c * win.kh * win.kw;
  const std::size_t image = in.c * in.h * in.w;

  BasicTensor<T> grad_in(input_.shape());
  std::vector<T> cols(patch * positions);
  std::vector<T> grad_cols(patch * positions);
  for (std::size_t n = 0; n < in.n; ++n) {
    const T* g = grad_out.raw() + n * out_c * positions;
    im2col_image(input_.raw() + n * image, in.c, in.h, in.w, win, cols.data());
    // dW += dY * cols^T
    gemm(false, true, out_c, patch, positions, g, cols.data(), weight_grad_.raw(), true);
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      T sum = 0;
      const T* plane = g + oc * positions;
      for (std::size_t i = 0; i < positions; ++i) sum += plane[i];
      bias_grad_[oc] += sum;
    }
    // dcols = W^T * dY, folded back onto the image grid.
    gemm(true, false, patch, positions, out_c, params_.weights.raw(), g, grad_cols.data(), false);
    col2im_image(grad_cols.data(), in.c, in.h, in.w, win, grad_in.raw() + n * image);
  }
  return grad_in;
}

template <typename T>
std::vector<ParamRef<T>> Conv2d<T>::parameters() {
  return {{"weights", &params_.weights, &weight_grad_}, {"bias", &params_.bias, &bias_grad_}};
}

template <typename T>
void Conv2d<T>::zero_grad() {
  weight_grad_.fill(T{0});
  bias_grad_.fill(T{0});
}

// ---------------------------------------------------------------- max-pool

namespace {

Shape pool_output_shape(const Shape& in, std::size_t size, std::size_t stride) {
  if (in.size() != 3) throw ShapeError("maxpool expects [c,h,w] samples, got " + shape_to_string(in));
  if (in[1] < size || in[2] < size) {
    throw ShapeError("maxpool window " + std::to_string(size) + " larger than input " +
                     shape_to_string(in));
  }
  return {in[0], window_output_extent(in[1], size, stride, 0),
          window_output_extent(in[2], size, stride, 0)};
}

// Writes pooled values and, when `winners` is non-null, the flat input index
// of each window's maximum (first in row-major scan on ties).
template <typename T>
BasicTensor<T> pool_forward(const BasicTensor<T>& x, std::size_t size, std::size_t stride,
                            std::vector<std::size_t>* winners) {
  const Shape4 in = Shape4::of(x);
  const Shape out_chw = pool_output_shape({in.c, in.h, in.w}, size, stride);
  const std::size_t oh = out_chw[1], ow = out_chw[2];
  BasicTensor<T> out({in.n, in.c, oh, ow});
  if (winners) winners->resize(out.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < in.n * in.c; ++plane) {
    const std::size_t base = plane * in.h * in.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * stride * in.w + ox * stride;
        for (std::size_t dy = 0; dy < size; ++dy) {
          const std::size_t row = base + (oy * stride + dy) * in.w + ox * stride;
          for (std::size_t dx = 0; dx < size; ++dx) {
            if (x[row + dx] > x[best]) best = row + dx;
          }
        }
        out[o] = x[best];
        if (winners) (*winners)[o] = best;
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, std::size_t size, std::size_t stride) {
  return pool_forward(x, size, stride, nullptr);
}

template <typename T>
MaxPool2d<T>::MaxPool2d(std::size_t size, std::size_t stride) : size_(size), stride_(stride) {
  if (size == 0 || stride == 0) throw ParameterError("maxpool size and stride must be at least 1");
}

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& input) const {
  return pool_output_shape(input, size_, stride_);
}

template <typename T>
BasicTensor<T> MaxPool2d<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = pool_forward(x, size_, stride_, &winners_);
  input_shape_ = x.shape();
  return out;
}

template <typename T>
BasicTensor<T> MaxPool2d<T>::backward(const BasicTensor<T>& grad_out) {
  if (grad_out.size() != winners_.size()) {
    throw ShapeError("maxpool backward gradient " + shape_to_string(grad_out.shape()) +
                     " does not match last forward");
  }
  BasicTensor<T> grad_in(input_shape_);
  for (std::size_t o = 0; o < winners_.size(); ++o) grad_in[winners_[o]] += grad_out[o];
  return grad_in;
}

template <typename T>
std::uint64_t MaxPool2d<T>::branch_hash() const {
  return fnv1a(std::as_bytes(std::span<const std::size_t>(winners_)));
}

// ---------------------------------------------------------------- relu

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> Relu<T>::forward(const BasicTensor<T>& x, Mode) {
  shape_ = x.shape();
  active_.resize(x.size());
  BasicTensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    active_[i] = out[i] > T{0};
    if (!active_[i]) out[i] = T{0};
  }
  return out;
}

template <typename T>
BasicTensor<T> Relu<T>::backward(const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != shape_) {
    throw ShapeError("relu backward gradient " + shape_to_string(grad_out.shape()) +
                     " does not match input " + shape_to_string(shape_));
  }
  BasicTensor<T> grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.size(); ++i) {
    if (!active_[i]) grad_in[i] = T{0};
  }
  return grad_in;
}

template <typename T>
std::uint64_t Relu<T>::branch_hash() const {
  return fnv1a(std::as_bytes(std::span<const std::uint8_t>(active_)));
}

// ---------------------------------------------------------------- dropout

template <typename T>
Dropout<T>::Dropout(double rate, std::uint64_t seed) : rate_(0.0), rng_(seed) {
  set_rate(rate);
}

template <typename T>
void Dropout<T>::set_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  rate_ = rate;
}

template <typename T>
BasicTensor<T> Dropout<T>::forward(const BasicTensor<T>& x, Mode mode) {
  last_mode_ = mode;
  if (mode == Mode::eval || rate_ == 0.0) {
    mask_ = BasicTensor<T>();
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  mask_ = BasicTensor<T>(x.shape());
  BasicTensor<T> out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask_[i] = uniform(rng_) < rate_ ? T{0} : keep_scale;
    out[i] *= mask_[i];
  }
  return out;
}

template <typename T>
BasicTensor<T> Dropout<T>::backward(const BasicTensor<T>& grad_out) {
  if (mask_.empty()) return grad_out;
  if (grad_out.shape() != mask_.shape()) {
    throw ShapeError("dropout backward gradient " + shape_to_string(grad_out.shape()) +
                     " does not match mask " + shape_to_string(mask_.shape()));
  }
  BasicTensor<T> grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] *= mask_[i];
  return grad_in;
}

// ---------------------------------------------------------------- dense

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const DenseParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.weights.dim(0)) {
    throw ShapeError("dense expects [n," + std::to_string(p.weights.dim(0)) + "] input, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), in = p.weights.dim(0), out_dim = p.weights.dim(1);
  BasicTensor<T> out({n, out_dim});
  gemm(false, false, n, out_dim, in, x.raw(), p.weights.raw(), out.raw(), false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) out.at(i, j) += p.bias[j];
  }
  return out;
}

template <typename T>
Dense<T>::Dense(DenseParams<T> params) : params_(std::move(params)) {
  params_.validate();
  weight_grad_ = BasicTensor<T>(params_.weights.shape());
  bias_grad_ = BasicTensor<T>(params_.bias.shape());
}

template <typename T>
Shape Dense<T>::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != params_.weights.dim(0)) {
    throw ShapeError("dense expects [" + std::to_string(params_.weights.dim(0)) +
                     "] samples, got " + shape_to_string(input));
  }
  return {params_.weights.dim(1)};
}

template <typename T>
BasicTensor<T> Dense<T>::forward(const BasicTensor<T>& x, Mode) {
  BasicTensor<T> out = dense(x, params_);
  input_ = x;
  return out;
}

template <typename T>
BasicTensor<T> Dense<T>::backward(const BasicTensor<T>& grad_out) {
  const std::size_t n = input_.dim(0), in = params_.weights.dim(0),
                    out_dim = params_.weights.dim(1);
  if (grad_out.shape() != Shape{n, out_dim}) {
    throw ShapeError("dense backward expects gradient [" + std::to_string(n) + "," +
                     std::to_string(out_dim) + "], got " + shape_to_string(grad_out.shape()));
  }
  // dW += x^T dY ; db += column sums of dY ; dx = dY W^T
  gemm(true, false, in, out_dim, n, input_.raw(), grad_out.raw(), weight_grad_.raw(), true);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) bias_grad_[j] += grad_out.at(i, j);
  }
  BasicTensor<T> grad_in({n, in});
  gemm(false, true, n, in, out_dim, grad_out.raw(), params_.weights.raw(), grad_in.raw(), false);
  return grad_in;
}

template <typename T>
std::vector<ParamRef<T>> Dense<T>::parameters() {
  return {{"weights", &params_.weights, &weight_grad_}, {"bias", &params_.bias, &bias_grad_}};
}

template <typename T>
void Dense<T>::zero_grad() {
  weight_grad_.fill(T{0});
  bias_grad_.fill(T{0});
}

// ---------------------------------------------------------------- flatten

template <typename T>
Shape Flatten<T>::output_shape(const Shape& input) const {
  return {shape_numel(input)};
}

template <typename T>
BasicTensor<T> Flatten<T>::forward(const BasicTensor<T>& x, Mode) {
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

template <typename T>
BasicTensor<T> Flatten<T>::backward(const BasicTensor<T>& grad_out) {
  return grad_out.reshaped(input_shape_);
}

// ---------------------------------------------------------------- softmax

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2) {
    throw ShapeError("softmax expects [n,c] with c >= 2, got " + shape_to_string(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  BasicTensor<T> out(logits.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* in = logits.raw() + i * cols;
    T* row = out.raw() + i * cols;
    const T peak = *std::max_element(in, in + cols);
    T total = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(in[j] - peak);
      total += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= total;
  }
  return out;
}

template <typename T>
Shape Softmax<T>::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] < 2) {
    throw ShapeError("softmax expects [c] samples with c >= 2, got " + shape_to_string(input));
  }
  return input;
}

template <typename T>
BasicTensor<T> Softmax<T>::forward(const BasicTensor<T>& x, Mode) {
  output_ = softmax(x);
  return output_;
}

template <typename T>
BasicTensor<T> Softmax<T>::backward(const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != output_.shape()) {
    throw ShapeError("softmax backward gradient " + shape_to_string(grad_out.shape()) +
                     " does not match output " + shape_to_string(output_.shape()));
  }
  const std::size_t rows = output_.dim(0), cols = output_.dim(1);
  BasicTensor<T> grad_in(output_.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    T dot = 0;
    for (std::size_t j = 0; j < cols; ++j) dot += grad_out.at(i, j) * output_.at(i, j);
    for (std::size_t j = 0; j < cols; ++j) {
      grad_in.at(i, j) = output_.at(i, j) * (grad_out.at(i, j) - dot);
    }
  }
  return grad_in;
}

#define SIGNGLYPH_INSTANTIATE(T)                                                          \
  template struct ConvParams<T>;                                                          \
  template struct DenseParams<T>;                                                         \
  template class Conv2d<T>;                                                               \
  template class MaxPool2d<T>;                                                            \
  template class Relu<T>;                                                                 \
  template class Dropout<T>;                                                              \
  template class Dense<T>;                                                                \
  template class Flatten<T>;                                                              \
  template class Softmax<T>;                                                              \
  template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const ConvParams<T>&);         \
  template BasicTensor<T> maxpool2d<T>(const BasicTensor<T>&, std::size_t, std::size_t); \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                 \
  template BasicTensor<T> dense<T>(const BasicTensor<T>&, const DenseParams<T>&);         \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&);

SIGNGLYPH_INSTANTIATE(float)
SIGNGLYPH_INSTANTIATE(double)

#undef SIGNGLYPH_INSTANTIATE

}  // namespace signglyph
