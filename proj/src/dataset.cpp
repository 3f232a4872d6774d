#include "signglyph/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace signglyph {

namespace {

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kShuffleTag = 0x5eed0001u;
constexpr std::uint32_t kAugmentTag = 0x5eed0002u;
constexpr std::uint32_t kEpochTag = 0x5eed0003u;

}  // namespace

Sample augment(const Sample& sample, const AugmentPolicy& policy, std::mt19937_64& rng) {
  Sample out = sample;
  out.pixels = augment(sample.pixels, policy, rng);
  return out;
}

MemoryDataset::MemoryDataset(std::vector<Sample> samples, std::size_t num_classes)
    : samples_(std::move(samples)), num_classes_(num_classes) {
  for (const auto& s : samples_) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes_) {
      throw IndexError("sample label " + std::to_string(s.label) + " outside " +
                       std::to_string(num_classes_) + " classes");
    }
  }
}

ManifestDataset::ManifestDataset(const DatasetManifest& manifest, std::filesystem::path root,
                                 Split split, std::size_t side, bool cache)
    : root_(std::move(root)), side_(side), num_classes_(manifest.labels.size()), cache_(cache) {
  for (const auto& e : manifest.entries) {
    if (e.split == split) entries_.push_back({e.path, manifest.label_index(e.label)});
  }
  decoded_.resize(entries_.size());
}

Sample ManifestDataset::get(std::size_t index) const {
  const Entry& e = entries_.at(index);
  if (cache_ && decoded_[index]) return {*decoded_[index], e.label, e.path};
  // Any decode failure propagates with the offending path in its message.
  Tensor pixels = pad_and_resize(load_image(root_ / e.path), side_);
  if (cache_) decoded_[index] = pixels;
  return {std::move(pixels), e.label, e.path};
}

BatchIterator::BatchIterator(std::vector<std::size_t> order, std::size_t batch_size, Loader loader)
    : order_(std::move(order)), batch_size_(batch_size), loader_(std::move(loader)) {
  if (batch_size_ == 0) throw ConfigError("batch size must be at least 1");
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  Batch batch;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s = loader_(order_[cursor_ + i]);
    if (i == 0) {
      Shape shape = s.pixels.shape();
      shape.insert(shape.begin(), count);
      batch.images = Tensor(shape);
    }
    const std::size_t stride = s.pixels.size();
    if (stride * count != batch.images.size()) {
      throw ShapeError("sample " + s.source + " has shape " + shape_to_string(s.pixels.shape()) +
                       ", inconsistent with the rest of its batch");
    }
    std::copy(s.pixels.data().begin(), s.pixels.data().end(), batch.images.raw() + i * stride);
    batch.labels.push_back(s.label);
    batch.sources.push_back(std::move(s.source));
  }
  cursor_ += count;
  return batch;
}

namespace {

// `owner` optionally keeps the dataset alive for the iterator's lifetime.
BatchIterator batches_over(std::shared_ptr<const Dataset> owner, const Dataset& data,
                           const BatchOptions& options) {
  options.augment.validate();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (options.shuffle) {
    auto rng = seeded(options.shuffle_seed, 0, kShuffleTag);
    std::shuffle(order.begin(), order.end(), rng);
  }
  auto loader = [owner = std::move(owner), &data, policy = options.augment,
                 seed = options.shuffle_seed](std::size_t index) {
    Sample s = data.get(index);
    if (!policy.enabled) return s;
    auto rng = seeded(seed, index, kAugmentTag);
    return augment(s, policy, rng);
  };
  return BatchIterator(std::move(order), options.batch_size, std::move(loader));
}

}  // namespace

BatchIterator make_batches(const Dataset& data, const BatchOptions& options) {
  return batches_over(nullptr, data, options);
}

BatchIterator make_eval_batches(const Dataset& data, std::size_t batch_size) {
  BatchOptions options;
  options.batch_size = batch_size;
  options.shuffle = false;
  return make_batches(data, options);
}

BatchIterator make_batches(const DatasetManifest& manifest, const std::filesystem::path& root,
                           Split split, const BatchOptions& options, std::size_t side) {
  auto data = std::make_shared<const ManifestDataset>(manifest, root, split, side, false);
  if (data->size() == 0) throw ConfigError("split '" + to_string(split) + "' is empty");
  BatchOptions effective = options;
  if (split == Split::val) {
    effective.shuffle = false;
    effective.augment = AugmentPolicy::disabled();
  }
  const Dataset& ref = *data;
  return batches_over(std::move(data), ref, effective);
}

std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch) {
  auto rng = seeded(run_seed, epoch, kEpochTag);
  return rng();
}

}  // namespace signglyph
