#include "signglyph/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace signglyph {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeader = "#signglyph-manifest v1";
constexpr const char* kLabelsPrefix = "labels: ";

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "val"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  throw FormatError("unknown split '" + text + "' (expected train or val)");
}

int DatasetManifest::label_index(const std::string& name) const {
  const auto it = std::find(labels.begin(), labels.end(), name);
  if (it == labels.end()) throw IndexError("class '" + name + "' is not in the label space");
  return static_cast<int>(it - labels.begin());
}

std::vector<ManifestEntry> DatasetManifest::entries_for(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [split](const ManifestEntry& e) { return e.split == split; }));
}

void DatasetManifest::validate() const {
  if (labels.size() < 2) throw FormatError("manifest label space needs at least two classes");
  std::set<std::string> seen_labels;
  for (const auto& label : labels) {
    if (label.empty() || label.find_first_of(",\t\n\r") != std::string::npos) {
      throw FormatError("invalid class name '" + label + "'");
    }
    if (!seen_labels.insert(label).second) throw FormatError("duplicate class '" + label + "'");
  }
  std::set<std::string> seen_paths;
  for (const auto& e : entries) {
    if (!seen_labels.count(e.label)) {
      throw FormatError("entry " + e.path + " has class '" + e.label + "' outside the label space");
    }
    if (e.path.empty() || e.path.find_first_of("\t\n\r") != std::string::npos) {
      throw FormatError("invalid entry path '" + e.path + "'");
    }
    if (!seen_paths.insert(e.path).second) throw FormatError("duplicate entry path " + e.path);
  }
}

std::string DatasetManifest::to_text() const {
  std::ostringstream out;
  out << kHeader << '\n' << kLabelsPrefix;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out << ',';
    out << labels[i];
  }
  out << '\n';
  for (const auto& e : entries) out << e.path << '\t' << e.label << '\t' << to_string(e.split) << '\n';
  return out.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) -> void {
    throw FormatError("manifest line " + std::to_string(line_no) + ": " + why);
  };

  DatasetManifest m;
  if (!std::getline(in, line) || (++line_no, line != kHeader)) {
    line_no = 1;
    fail("expected header '" + std::string(kHeader) + "'");
  }
  if (!std::getline(in, line) || (++line_no, line.rfind(kLabelsPrefix, 0) != 0)) {
    line_no = 2;
    fail("expected 'labels: <names>'");
  }
  m.labels = split_commas(line.substr(std::string(kLabelsPrefix).size()));
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream row(line);
    while (std::getline(row, field, '\t')) fields.push_back(field);
    if (fields.size() != 3) fail("expected path<TAB>class<TAB>split");
    try {
      m.entries.push_back({fields[0], fields[1], parse_split(fields[2])});
    } catch (const FormatError& e) {
      fail(e.what());
    }
  }
  m.validate();
  return m;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return DatasetManifest::parse(text.str());
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << manifest.to_text();
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> discover_labels(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root is not a directory: " + root.string());
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) out.push_back(entry.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> resolve_label_space(const std::string& space) {
  std::vector<std::string> letters, digits;
  for (char c = 'A'; c <= 'Z'; ++c) letters.emplace_back(1, c);
  for (char c = '1'; c <= '9'; ++c) digits.emplace_back(1, c);
  if (space == "letters") return letters;
  if (space == "digits") return digits;
  if (space == "digits0") {
    digits.insert(digits.begin(), "0");
    return digits;
  }
  if (space == "letters+digits") {
    letters.insert(letters.end(), digits.begin(), digits.end());
    return letters;
  }
  auto out = split_commas(space);
  if (out.size() < 2) throw ConfigError("label space '" + space + "' needs at least two classes");
  return out;
}

ManifestBuild prepare_manifest(const fs::path& root, const std::vector<std::string>& labels,
                               double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction <= 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1]");
  }
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("dataset root is not a directory: " + root.string());

  ManifestBuild build;
  build.manifest.labels = labels;
  const std::set<std::string> known(labels.begin(), labels.end());
  for (const auto& dir : discover_labels(root)) {
    if (!known.count(dir)) build.warnings.push_back("ignoring unknown class directory '" + dir + "'");
  }

  for (std::size_t li = 0; li < labels.size(); ++li) {
    const std::string& label = labels[li];
    const fs::path class_dir = root / label;
    std::vector<std::string> files;
    if (fs::is_directory(class_dir, ec)) {
      for (const auto& entry : fs::directory_iterator(class_dir)) {
        if (!entry.is_regular_file()) continue;
        if (is_image_file(entry.path())) {
          files.push_back(entry.path().filename().string());
        } else {
          build.warnings.push_back("skipping non-image file " + (fs::path(label) / entry.path().filename()).string());
        }
      }
    }
    if (files.empty()) throw ConfigError("class '" + label + "' has no images under " + class_dir.string());
    std::sort(files.begin(), files.end());

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(li)};
    std::mt19937_64 rng(seq);
    std::shuffle(files.begin(), files.end(), rng);

    const std::size_t n = files.size();
    const auto n_train = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 - val_fraction) - 1e-9));
    ClassCount& counts = build.counts[label];
    for (std::size_t i = 0; i < n; ++i) {
      const Split split = i < n_train ? Split::train : Split::val;
      build.manifest.entries.push_back({(fs::path(label) / files[i]).generic_string(), label, split});
      (split == Split::train ? counts.train : counts.val) += 1;
    }
  }
  build.manifest.validate();
  return build;
}

}  // namespace signglyph
