#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "signglyph/augment.hpp"
#include "signglyph/image.hpp"
#include "signglyph/manifest.hpp"
#include "signglyph/tensor.hpp"

namespace signglyph {

struct Sample {
  Tensor pixels;  // [3, side, side], values in [0, 1]
  int label = 0;
  std::string source;
};

// Same sample with geometric jitter applied to the pixels; label and source
// are untouched.
Sample augment(const Sample& sample, const AugmentPolicy& policy, std::mt19937_64& rng);

// Random-access collection of unaugmented samples.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Sample get(std::size_t index) const = 0;
  virtual std::string source(std::size_t index) const = 0;
};

class MemoryDataset final : public Dataset {
 public:
  MemoryDataset(std::vector<Sample> samples, std::size_t num_classes);

  std::size_t size() const override { return samples_.size(); }
  std::size_t num_classes() const override { return num_classes_; }
  Sample get(std::size_t index) const override { return samples_.at(index); }
  std::string source(std::size_t index) const override { return samples_.at(index).source; }

 private:
  std::vector<Sample> samples_;
  std::size_t num_classes_;
};

// One split of a manifest, decoded from disk on demand and optionally kept in
// memory after the first read.
class ManifestDataset final : public Dataset {
 public:
  ManifestDataset(const DatasetManifest& manifest, std::filesystem::path root, Split split,
                  std::size_t side = kDefaultInputSide, bool cache = true);

  std::size_t size() const override { return entries_.size(); }
  std::size_t num_classes() const override { return num_classes_; }
  Sample get(std::size_t index) const override;
  std::string source(std::size_t index) const override { return entries_.at(index).path; }

 private:
  struct Entry {
    std::string path;
    int label;
  };
  std::vector<Entry> entries_;
  std::filesystem::path root_;
  std::size_t side_;
  std::size_t num_classes_;
  bool cache_;
  mutable std::vector<std::optional<Tensor>> decoded_;
};

struct Batch {
  Tensor images;  // [b, 3, side, side]
  std::vector<int> labels;
  std::vector<std::string> sources;
};

// Walks a fixed sample order in consecutive chunks; the last batch may be
// short. Samples are produced by a loader keyed on dataset index.
class BatchIterator {
 public:
  using Loader = std::function<Sample(std::size_t index)>;

  BatchIterator(std::vector<std::size_t> order, std::size_t batch_size, Loader loader);

  std::optional<Batch> next();
  void reset() { cursor_ = 0; }

  std::size_t sample_count() const { return order_.size(); }
  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  Loader loader_;
  std::size_t cursor_ = 0;
};

struct BatchOptions {
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  bool shuffle = true;
  AugmentPolicy augment = AugmentPolicy::disabled();
};

// Training pass: order is a permutation drawn from shuffle_seed (identity
// when shuffle is false) and each sample is augmented with a generator
// seeded from (shuffle_seed, sample index), so the output does not depend on
// evaluation order. The dataset must outlive the iterator.
BatchIterator make_batches(const Dataset& data, const BatchOptions& options);

// Fixed-order, never augmented pass used for evaluation.
BatchIterator make_eval_batches(const Dataset& data, std::size_t batch_size);

// Manifest convenience form. Validation splits are always emitted in manifest
// order without augmentation, whatever the options say.
BatchIterator make_batches(const DatasetManifest& manifest, const std::filesystem::path& root,
                           Split split, const BatchOptions& options,
                           std::size_t side = kDefaultInputSide);

// Seed for the shuffle/augmentation stream of a given training epoch.
std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch);

}  // namespace signglyph
