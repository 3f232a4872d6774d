#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "signglyph/tensor.hpp"

namespace signglyph {

enum class Mode { train, eval };

// Handle on one trainable tensor and the gradient accumulated for it.
template <typename T>
struct ParamRef {
  std::string name;
  BasicTensor<T>* value = nullptr;
  BasicTensor<T>* grad = nullptr;
};

// A layer caches whatever its most recent forward needs, so backward must be
// called with the gradient of that same forward's output. Parametric layers
// add into their gradient tensors; zero_grad() clears them.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  // Per-sample output shape for a per-sample input shape (no batch axis).
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out) = 0;

  virtual std::vector<ParamRef<T>> parameters() { return {}; }
  virtual void zero_grad() {}
  // Fingerprint of the piecewise-linear branch taken by the last forward
  // (ReLU signs, pooling winners); zero for smooth layers.
  virtual std::uint64_t branch_hash() const { return 0; }
};

template <typename T>
struct ConvParams {
  BasicTensor<T> weights;  // [outC, inC, kh, kw]
  BasicTensor<T> bias;     // [outC]
  std::size_t stride = 1;
  std::size_t pad = 0;

  Window window() const { return {weights.dim(2), weights.dim(3), stride, pad}; }
  void validate() const;
};

template <typename T>
struct DenseParams {
  BasicTensor<T> weights;  // [inDim, outDim]
  BasicTensor<T> bias;     // [outDim]

  void validate() const;
};

// Cross-correlation (no kernel flip) plus per-channel bias.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvParams<T>& p);

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, std::size_t size, std::size_t stride);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const DenseParams<T>& p);

// Row-wise softmax with max subtraction. Requires at least two columns.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  explicit Conv2d(ConvParams<T> params);

  std::string kind() const override { return "conv"; }
  Shape output_shape(const Shape& input) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::vector<ParamRef<T>> parameters() override;
  void zero_grad() override;

  ConvParams<T>& params() { return params_; }
  const ConvParams<T>& params() const { return params_; }
  const BasicTensor<T>& weight_grad() const { return weight_grad_; }
  const BasicTensor<T>& bias_grad() const { return bias_grad_; }

 private:
  ConvParams<T> params_;
  BasicTensor<T> weight_grad_;
  BasicTensor<T> bias_grad_;
  BasicTensor<T> input_;
};

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::size_t size, std::size_t stride);

  std::string kind() const override { return "maxpool"; }
  Shape output_shape(const Shape& input) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  // Routes each output gradient to the winning input of its window.
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::uint64_t branch_hash() const override;

 private:
  std::size_t size_;
  std::size_t stride_;
  Shape input_shape_;
  std::vector<std::size_t> winners_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(const Shape& input) const override { return input; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  // Gradient at exactly zero is zero.
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::uint64_t branch_hash() const override;

 private:
  Shape shape_;
  std::vector<std::uint8_t> active_;
};

// Inverted dropout: in train mode each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(double rate, std::uint64_t seed);

  std::string kind() const override { return "dropout"; }
  Shape output_shape(const Shape& input) const override { return input; }
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

  double rate() const { return rate_; }
  void set_rate(double rate);
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  // Mask applied by the last forward; empty after an eval-mode call.
  const BasicTensor<T>& mask() const { return mask_; }

 private:
  double rate_;
  std::mt19937_64 rng_;
  Mode last_mode_ = Mode::eval;
  BasicTensor<T> mask_;
};

template <typename T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(DenseParams<T> params);

  std::string kind() const override { return "dense"; }
  Shape output_shape(const Shape& input) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;
  std::vector<ParamRef<T>> parameters() override;
  void zero_grad() override;

  DenseParams<T>& params() { return params_; }
  const DenseParams<T>& params() const { return params_; }
  const BasicTensor<T>& weight_grad() const { return weight_grad_; }
  const BasicTensor<T>& bias_grad() const { return bias_grad_; }

 private:
  DenseParams<T> params_;
  BasicTensor<T> weight_grad_;
  BasicTensor<T> bias_grad_;
  BasicTensor<T> input_;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& input) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  Shape input_shape_;
};

// Standalone softmax layer with the full Jacobian-vector backward. Training
// bypasses its backward and feeds the fused softmax/cross-entropy gradient
// straight to the logits.
template <typename T>
class Softmax final : public Layer<T> {
 public:
  std::string kind() const override { return "softmax"; }
  Shape output_shape(const Shape& input) const override;
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override;
  BasicTensor<T> backward(const BasicTensor<T>& grad_out) override;

 private:
  BasicTensor<T> output_;
};

}  // namespace signglyph
