#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signglyph/augment.hpp"
#include "signglyph/dataset.hpp"
#include "signglyph/model.hpp"

namespace signglyph {

inline constexpr double kLogClamp = 1e-12;

template <typename T>
struct LossOutput {
  double value = 0.0;          // mean cross-entropy over the batch, nats
  BasicTensor<T> grad_logits;  // (probs - onehot) / n
};

// H(p, q) = -sum_x p(x) log q(x) with p the one-hot truth and q the predicted
// row, averaged over rows. Probabilities are clamped to [1e-12, 1] before the
// log. The gradient is taken with respect to the pre-softmax logits.
template <typename T>
LossOutput<T> cross_entropy(const BasicTensor<T>& probs, std::span<const int> labels);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  double lr_decay = 1.0;  // multiplicative, applied once per epoch

  void validate() const;
};

// Velocity buffers for momentum SGD, one per parameter, created lazily.
template <typename T>
struct SgdState {
  std::vector<BasicTensor<T>> velocity;
};

// momentum == 0:  w <- w - lr * g
// momentum == mu: v <- mu * v + g ; w <- w - lr * v
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, double learning_rate, double momentum,
              SgdState<T>& state);

struct EpochResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(int truth, int predicted);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t classes() const { return classes_; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_total(std::size_t truth) const;
  double accuracy() const;

  // Header `class,<names...>` then one row per true class.
  std::string to_csv(const std::vector<std::string>& names) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

struct Evaluation {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion{2};
};

// One optimizer pass over `batches` in train mode: forward, loss, backward,
// step, per batch. Loss and accuracy are averaged over samples.
EpochResult train_epoch(Model<float>& model, BatchIterator& batches, double learning_rate,
                        double momentum, SgdState<float>& state);
EpochResult train_epoch(Model<float>& model, BatchIterator& batches, const SgdConfig& config);

// Eval-mode pass; parameters are not touched.
Evaluation evaluate(Model<float>& model, BatchIterator& batches);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const EpochMetrics& row) = 0;
};

// Append-only CSV: `epoch,train_loss,train_acc,val_loss,val_acc,seconds`.
// Every row is flushed as soon as it is written.
class CsvMetricsSink final : public MetricsSink {
 public:
  explicit CsvMetricsSink(const std::filesystem::path& path);
  void write(const EpochMetrics& row) override;

  static std::string header();
  static std::string format_row(const EpochMetrics& row);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct FitOptions {
  AugmentPolicy augment = AugmentPolicy::disabled();
  // When set, the model is written here whenever validation accuracy improves.
  std::optional<std::filesystem::path> best_checkpoint;
  // Wall-clock seconds are recorded per epoch only when true; otherwise the
  // column is 0 so repeated runs produce identical metrics.
  bool record_time = false;
  std::size_t eval_batch_size = 32;
  std::function<void(const EpochMetrics&)> on_epoch;
  // Early stop: checked after each epoch's row is recorded.
  std::function<bool(const EpochMetrics&)> stop_when;
};

// Per epoch e (1-based): a shuffled, augmented training pass at
// lr * lr_decay^(e-1), then clean eval-mode passes over both splits. The
// shuffle/augmentation stream is seeded by (config.seed, e).
std::vector<EpochMetrics> fit(Model<float>& model, const Dataset& train, const Dataset& val,
                              const SgdConfig& config, const FitOptions& options,
                              MetricsSink* sink = nullptr);

}  // namespace signglyph
