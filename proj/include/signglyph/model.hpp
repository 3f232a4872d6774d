#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "signglyph/layers.hpp"
#include "signglyph/tensor.hpp"

namespace signglyph {

// Hyperparameters of the three-block convolutional classifier:
//   3 x [conv, relu, conv, relu, maxpool, dropout] -> flatten
//   -> 2 x [dense, relu, dropout] -> dense(num_classes) -> softmax
// Convolutions use stride 1 and same padding (kernel_side / 2).
struct ModelConfig {
  std::size_t input_side = 200;
  std::size_t input_channels = 3;
  std::array<std::size_t, 3> conv_filters{32, 64, 128};
  std::size_t kernel_side = 3;
  std::size_t pool_side = 2;
  double conv_dropout = 0.25;
  double dense_dropout = 0.5;
  std::array<std::size_t, 2> dense_widths{512, 256};
  std::size_t num_classes = 26;
  std::uint64_t seed = 0;
  // Optional display names, one per class.
  std::vector<std::string> class_names;

  void validate() const;

  // Canonical `key=value` lines, fixed key order; stored in checkpoints.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerTrace {
  std::string name;
  std::string kind;
  Shape output;  // per sample, no batch axis
};

template <typename T>
struct NamedParam {
  std::string name;
  const BasicTensor<T>* value = nullptr;
};

template <typename T>
class Model {
 public:
  // Builds the layer stack and draws initial weights from config.seed:
  // He-scaled normal weights (std = sqrt(2 / fan_in)), zero biases.
  explicit Model(ModelConfig config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }

  // Class probabilities [n, num_classes] for a [n, c, side, side] batch.
  BasicTensor<T> forward(const BasicTensor<T>& batch, Mode mode);
  // Pre-softmax scores from the most recent forward.
  const BasicTensor<T>& logits() const { return logits_; }
  // Backpropagates d(loss)/d(logits) through every layer, adding into the
  // parameter gradients.
  void backward_from_logits(const BasicTensor<T>& grad_logits);

  void zero_grad();
  std::vector<ParamRef<T>> parameters();
  std::vector<NamedParam<T>> parameters() const;
  std::size_t parameter_count() const;

  const std::vector<LayerTrace>& trace() const { return trace_; }
  std::size_t flatten_dim() const;
  std::uint64_t branch_hash() const;

  // Copies every parameter into a model of another scalar type.
  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].value = src[i].value->template cast<U>();
    return out;
  }

  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const std::string& layer_name(std::size_t i) const { return trace_[i].name; }

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<LayerTrace> trace_;
  BasicTensor<T> logits_;
};

// Per-sample shapes after every layer, computed from the config alone.
// Throws ConfigError naming the first layer whose geometry does not fit.
std::vector<LayerTrace> trace_shapes(const ModelConfig& config);

// Closed-form trainable parameter count for a config.
std::size_t count_parameters(const ModelConfig& config);

Model<float> build_model(const ModelConfig& config);

struct Prediction {
  int class_index = 0;
  std::vector<float> probs;
};

// Eval-mode classification of one [c, side, side] image.
Prediction predict(Model<float>& model, const Tensor& image);

// ---------------------------------------------------------------- checkpoint
//
// Layout, little-endian:
//   "SGLY" | u16 version (1) | u32 config length | config text
//   per parameter: u8 rank | u32 dims[rank] | f32 payload[numel]
//   u64 FNV-1a over all f32 payload bytes

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

std::vector<std::byte> encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

// Byte size of a checkpoint for `config`, from the config alone.
std::size_t checkpoint_size(const ModelConfig& config);

}  // namespace signglyph
