#include "signglyph/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <set>

namespace signglyph {

template <typename T>
LossOutput<T> cross_entropy(const BasicTensor<T>& probs, std::span<const int> labels) {
  if (probs.rank() != 2) {
    throw ShapeError("cross_entropy expects [n,c] probabilities, got " + shape_to_string(probs.shape()));
  }
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  LossOutput<T> out;
  out.grad_logits = probs;
  double total = 0.0;
  const T inv_n = T{1} / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const double q = std::clamp(static_cast<double>(probs.at(i, y)), kLogClamp, 1.0);
    total -= std::log(q);
    out.grad_logits.at(i, y) -= T{1};
  }
  for (T& g : out.grad_logits.data()) g *= inv_n;
  out.value = total / static_cast<double>(n);
  return out;
}

template LossOutput<float> cross_entropy<float>(const Tensor&, std::span<const int>);
template LossOutput<double> cross_entropy<double>(const Tensor64&, std::span<const int>);

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(lr_decay > 0.0)) throw ConfigError("learning-rate decay must be positive");
}

template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, double learning_rate, double momentum,
              SgdState<T>& state) {
  if (momentum != 0.0 && state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.value->shape());
  }
  if (momentum != 0.0 && state.velocity.size() != params.size()) {
    throw ShapeError("optimizer state holds " + std::to_string(state.velocity.size()) +
                     " buffers for " + std::to_string(params.size()) + " parameters");
  }
  const T lr = static_cast<T>(learning_rate);
  const T mu = static_cast<T>(momentum);
  for (std::size_t i = 0; i < params.size(); ++i) {
    BasicTensor<T>& w = *params[i].value;
    const BasicTensor<T>& g = *params[i].grad;
    if (w.shape() != g.shape()) {
      throw ShapeError("parameter " + params[i].name + " " + shape_to_string(w.shape()) +
                       " has gradient " + shape_to_string(g.shape()));
    }
    if (momentum == 0.0) {
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
      continue;
    }
    BasicTensor<T>& v = state.velocity[i];
    if (v.shape() != w.shape()) {
      throw ShapeError("velocity for " + params[i].name + " has shape " + shape_to_string(v.shape()));
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mu * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

template void sgd_step<float>(std::span<const ParamRef<float>>, double, double, SgdState<float>&);
template void sgd_step<double>(std::span<const ParamRef<double>>, double, double, SgdState<double>&);

// ---------------------------------------------------------------- confusion

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes) {}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
      static_cast<std::size_t>(predicted) >= classes_) {
    throw IndexError("confusion entry (" + std::to_string(truth) + "," + std::to_string(predicted) +
                     ") outside " + std::to_string(classes_) + " classes");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * classes_ + predicted);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts_) sum += c;
  return sum;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < classes_; ++i) sum += at(i, i);
  return sum;
}

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::uint64_t sum = 0;
  for (std::size_t j = 0; j < classes_; ++j) sum += at(truth, j);
  return sum;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& names) const {
  auto name = [&](std::size_t i) { return i < names.size() ? names[i] : std::to_string(i); };
  std::string out = "class";
  for (std::size_t j = 0; j < classes_; ++j) out += "," + name(j);
  out += '\n';
  for (std::size_t i = 0; i < classes_; ++i) {
    out += name(i);
    for (std::size_t j = 0; j < classes_; ++j) out += "," + std::to_string(at(i, j));
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- loops

EpochResult train_epoch(Model<float>& model, BatchIterator& batches, double learning_rate,
                        double momentum, SgdState<float>& state) {
  if (batches.sample_count() == 0) throw ConfigError("training set is empty");
  auto params = model.parameters();
  double loss_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  while (auto batch = batches.next()) {
    model.zero_grad();
    const Tensor probs = model.forward(batch->images, Mode::train);
    const auto loss = cross_entropy(probs, std::span<const int>(batch->labels));
    model.backward_from_logits(loss.grad_logits);
    sgd_step(std::span<const ParamRef<float>>(params), learning_rate, momentum, state);

    const std::size_t n = batch->labels.size();
    loss_sum += loss.value * static_cast<double>(n);
    const auto predicted = argmax_rows(probs);
    for (std::size_t i = 0; i < n; ++i) correct += predicted[i] == batch->labels[i];
    seen += n;
  }
  return {loss_sum / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(seen)};
}

EpochResult train_epoch(Model<float>& model, BatchIterator& batches, const SgdConfig& config) {
  config.validate();
  SgdState<float> state;
  return train_epoch(model, batches, config.learning_rate, config.momentum, state);
}

Evaluation evaluate(Model<float>& model, BatchIterator& batches) {
  if (batches.sample_count() == 0) throw ConfigError("evaluation set is empty");
  Evaluation out;
  out.confusion = ConfusionMatrix(model.config().num_classes);
  double loss_sum = 0.0;
  std::size_t seen = 0;
  while (auto batch = batches.next()) {
    const Tensor probs = model.forward(batch->images, Mode::eval);
    const auto loss = cross_entropy(probs, std::span<const int>(batch->labels));
    const std::size_t n = batch->labels.size();
    loss_sum += loss.value * static_cast<double>(n);
    const auto predicted = argmax_rows(probs);
    for (std::size_t i = 0; i < n; ++i) out.confusion.add(batch->labels[i], predicted[i]);
    seen += n;
  }
  out.mean_loss = loss_sum / static_cast<double>(seen);
  out.accuracy = out.confusion.accuracy();
  return out;
}

// ---------------------------------------------------------------- metrics csv

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string CsvMetricsSink::header() { return "epoch,train_loss,train_acc,val_loss,val_acc,seconds"; }

std::string CsvMetricsSink::format_row(const EpochMetrics& r) {
  return std::to_string(r.epoch) + "," + fixed(r.train_loss, 6) + "," + fixed(r.train_acc, 6) + "," +
         fixed(r.val_loss, 6) + "," + fixed(r.val_acc, 6) + "," + fixed(r.seconds, 3);
}

CsvMetricsSink::CsvMetricsSink(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open metrics file: " + path.string());
  out_ << header() << '\n' << std::flush;
  if (!out_) throw IoError("failed writing metrics header: " + path.string());
}

void CsvMetricsSink::write(const EpochMetrics& row) {
  out_ << format_row(row) << '\n' << std::flush;
  if (!out_) throw IoError("failed writing metrics row to " + path_.string());
}

// ---------------------------------------------------------------- fit

std::vector<EpochMetrics> fit(Model<float>& model, const Dataset& train, const Dataset& val,
                              const SgdConfig& config, const FitOptions& options, MetricsSink* sink) {
  config.validate();
  options.augment.validate();
  if (train.size() == 0) throw ConfigError("training split is empty");
  if (val.size() == 0) throw ConfigError("validation split is empty; fitting needs both splits");
  const std::size_t classes = model.config().num_classes;
  if (train.num_classes() != classes || val.num_classes() != classes) {
    throw ConfigError("dataset has " + std::to_string(train.num_classes()) + " classes, model has " +
                      std::to_string(classes));
  }
  std::set<std::string> train_sources;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (auto s = train.source(i); !s.empty()) train_sources.insert(std::move(s));
  }
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (train_sources.count(val.source(i))) {
      throw ConfigError("sample " + val.source(i) + " appears in both training and validation");
    }
  }

  std::vector<EpochMetrics> history;
  SgdState<float> state;
  double best_val = -1.0;
  double lr = config.learning_rate;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    BatchOptions batch_options;
    batch_options.batch_size = config.batch_size;
    batch_options.shuffle_seed = epoch_seed(config.seed, epoch);
    batch_options.augment = options.augment;
    BatchIterator train_batches = make_batches(train, batch_options);
    train_epoch(model, train_batches, lr, config.momentum, state);

    BatchIterator train_eval = make_eval_batches(train, options.eval_batch_size);
    BatchIterator val_eval = make_eval_batches(val, options.eval_batch_size);
    const Evaluation on_train = evaluate(model, train_eval);
    const Evaluation on_val = evaluate(model, val_eval);

    EpochMetrics row;
    row.epoch = epoch;
    row.train_loss = on_train.mean_loss;
    row.train_acc = on_train.accuracy;
    row.val_loss = on_val.mean_loss;
    row.val_acc = on_val.accuracy;
    if (options.record_time) {
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    history.push_back(row);
    if (sink) sink->write(row);
    if (options.on_epoch) options.on_epoch(row);
    if (options.best_checkpoint && row.val_acc > best_val) {
      best_val = row.val_acc;
      save_checkpoint(model, *options.best_checkpoint);
    }
    if (options.stop_when && options.stop_when(row)) break;
    lr *= config.lr_decay;
  }
  return history;
}

}  // namespace signglyph
