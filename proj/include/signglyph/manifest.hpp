#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "signglyph/errors.hpp"

namespace signglyph {

enum class Split { train, val };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::string path;  // relative to the manifest's root directory
  std::string label;
  Split split = Split::train;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// On disk:
//   #signglyph-manifest v1
//   labels: A,B,C
//   <path>\t<class>\t<train|val>
struct DatasetManifest {
  static constexpr int kFormatVersion = 1;

  std::vector<std::string> labels;
  std::vector<ManifestEntry> entries;
  int format_version = kFormatVersion;

  // Label index of `name`; throws IndexError when absent.
  int label_index(const std::string& name) const;
  std::vector<ManifestEntry> entries_for(Split split) const;
  std::size_t count(Split split) const;

  // Labels known, non-empty and unique; paths unique; every entry's class in
  // the label space.
  void validate() const;

  std::string to_text() const;
  static DatasetManifest parse(const std::string& text);

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct ClassCount {
  std::size_t train = 0;
  std::size_t val = 0;
};

struct ManifestBuild {
  DatasetManifest manifest;
  std::map<std::string, ClassCount> counts;
  std::vector<std::string> warnings;  // unknown subdirectories, skipped files
};

// Scans root/<class>/ for PNG and JPEG files and assigns a seeded, stratified
// split: within each class the files (sorted by name) are shuffled and the
// first ceil(n * (1 - val_fraction)) go to train, the rest to val.
// Throws ConfigError when a labelled class has no images.
ManifestBuild prepare_manifest(const std::filesystem::path& root,
                               const std::vector<std::string>& labels, double val_fraction,
                               std::uint64_t seed);

// Class subdirectories of root, sorted.
std::vector<std::string> discover_labels(const std::filesystem::path& root);

// Named label spaces: "letters" (A-Z), "digits" (1-9), "digits0" (0-9),
// "letters+digits" (A-Z then 1-9). Anything else is read as a
// comma-separated list.
std::vector<std::string> resolve_label_space(const std::string& space);

bool is_image_file(const std::filesystem::path& path);

}  // namespace signglyph
