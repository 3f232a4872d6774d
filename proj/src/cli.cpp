#include "signglyph/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "signglyph/dataset.hpp"
#include "signglyph/image.hpp"
#include "signglyph/manifest.hpp"
#include "signglyph/model.hpp"
#include "signglyph/report.hpp"
#include "signglyph/training.hpp"

namespace signglyph {

namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
  std::uint64_t seed = 0;
  bool quiet = false;
};

struct PrepareFlags {
  fs::path raw_dir;
  fs::path out_dir;
  std::optional<fs::path> background;
  int threshold = kDefaultBackgroundThreshold;
  std::size_t side = kDefaultInputSide;
  std::string labels;  // empty: one class per subdirectory
  double val_fraction = 0.5;
};

struct TrainFlags {
  fs::path manifest;
  std::optional<fs::path> root;
  fs::path out;
  fs::path metrics;
  std::optional<fs::path> best;
  std::optional<fs::path> initial;
  ModelConfig model;
  std::vector<std::size_t> filters{32, 64, 128};
  std::vector<std::size_t> dense{512, 256};
  SgdConfig sgd;
  AugmentPolicy augment;
  bool no_augment = false;
  bool record_time = false;
};

struct EvalFlags {
  fs::path checkpoint;
  fs::path manifest;
  std::optional<fs::path> root;
  std::string split = "val";
  std::optional<fs::path> confusion;
  std::size_t batch_size = 32;
};

struct PredictFlags {
  fs::path checkpoint;
  fs::path image;
  std::optional<fs::path> background;
  int threshold = kDefaultBackgroundThreshold;
  std::size_t topk = 3;
};

struct ReportFlags {
  std::vector<fs::path> metrics;
  fs::path out_dir = ".";
  bool svg = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

// Output files may name directories that do not exist yet.
void make_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

fs::path manifest_root(const fs::path& manifest, const std::optional<fs::path>& root) {
  if (root) return *root;
  const fs::path parent = manifest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

class Command {
 public:
  Command(std::ostream& out, std::ostream& err, const GlobalFlags& global)
      : out_(out), err_(err), global_(global) {}

  void log(const std::string& line) {
    if (!global_.quiet) err_ << line << '\n';
  }

  int prepare(const PrepareFlags& f) {
    std::error_code ec;
    if (!fs::is_directory(f.raw_dir, ec)) throw IoError("raw image directory not found: " + f.raw_dir.string());
    const auto labels = f.labels.empty() ? discover_labels(f.raw_dir) : resolve_label_space(f.labels);
    if (labels.size() < 2) throw ConfigError("need at least two classes under " + f.raw_dir.string());
    ManifestBuild build = prepare_manifest(f.raw_dir, labels, f.val_fraction, global_.seed);
    for (const auto& w : build.warnings) log("warning: " + w);

    PreprocessOptions pre;
    pre.side = f.side;
    pre.threshold = f.threshold;
    if (f.background) pre.background = load_image(*f.background);

    fs::create_directories(f.out_dir);
    DatasetManifest processed;
    processed.labels = build.manifest.labels;
    for (const auto& entry : build.manifest.entries) {
      const fs::path source = f.raw_dir / entry.path;
      const fs::path rel = fs::path(entry.label) / (fs::path(entry.path).stem().string() + ".png");
      fs::create_directories(f.out_dir / entry.label);
      if (std::any_of(processed.entries.begin(), processed.entries.end(),
                      [&](const ManifestEntry& e) { return e.path == rel.generic_string(); })) {
        throw DataError("two source images map to " + rel.generic_string());
      }
      save_png(preprocess_image(load_image(source), pre), f.out_dir / rel);
      processed.entries.push_back({rel.generic_string(), entry.label, entry.split});
    }
    const fs::path manifest_path = f.out_dir / "manifest.txt";
    write_manifest(processed, manifest_path);

    out_ << "class,train,val\n";
    for (const auto& label : labels) {
      const ClassCount c = build.counts[label];
      out_ << label << ',' << c.train << ',' << c.val << '\n';
    }
    out_ << "wrote " << processed.entries.size() << " images and " << manifest_path.string() << '\n';
    return kExitOk;
  }

  int train(TrainFlags f, const std::string& resolved_config) {
    const DatasetManifest manifest = read_manifest(f.manifest);
    const fs::path root = manifest_root(f.manifest, f.root);

    ModelConfig cfg = f.model;
    cfg.conv_filters = {f.filters.at(0), f.filters.at(1), f.filters.at(2)};
    cfg.dense_widths = {f.dense.at(0), f.dense.at(1)};
    cfg.num_classes = manifest.labels.size();
    cfg.class_names = manifest.labels;
    cfg.seed = global_.seed;
    f.sgd.seed = global_.seed;
    f.augment.enabled = !f.no_augment;
    f.sgd.validate();
    f.augment.validate();

    const ManifestDataset train_set(manifest, root, Split::train, cfg.input_side);
    const ManifestDataset val_set(manifest, root, Split::val, cfg.input_side);
    if (train_set.size() == 0) throw ConfigError("manifest has no training entries");
    if (val_set.size() == 0) throw ConfigError("manifest has no validation entries");

    Model<float> model = build_model(cfg);
    make_parent(f.out);
    make_parent(f.metrics);
    if (f.best) make_parent(*f.best);
    if (f.initial) {
      make_parent(*f.initial);
      save_checkpoint(model, *f.initial);
    }

    write_text(fs::path(f.out.string() + ".runlog"), resolved_config);
    log("seed: " + std::to_string(global_.seed) + " (model init, shuffling, augmentation, dropout)");
    log("model: " + std::to_string(model.parameter_count()) + " parameters, input " +
        std::to_string(cfg.input_side) + "x" + std::to_string(cfg.input_side));
    log("train: " + std::to_string(train_set.size()) + " samples, val: " + std::to_string(val_set.size()));

    FitOptions options;
    options.augment = f.augment;
    options.record_time = f.record_time;
    options.best_checkpoint = f.best ? *f.best : fs::path(f.out.string() + ".best");
    options.on_epoch = [this](const EpochMetrics& m) {
      log("epoch " + std::to_string(m.epoch) + ": train_loss " + fixed(m.train_loss, 4) + " train_acc " +
          fixed(m.train_acc, 4) + " val_loss " + fixed(m.val_loss, 4) + " val_acc " + fixed(m.val_acc, 4));
    };
    CsvMetricsSink sink(f.metrics);
    const auto history = fit(model, train_set, val_set, f.sgd, options, &sink);
    save_checkpoint(model, f.out);
    out_ << "final val_acc " << fixed(history.empty() ? 0.0 : history.back().val_acc, 4) << '\n';
    return kExitOk;
  }

  int eval(const EvalFlags& f) {
    Model<float> model = load_checkpoint(f.checkpoint);
    const DatasetManifest manifest = read_manifest(f.manifest);
    check_labels(model.config(), manifest);
    const Split split = parse_split(f.split);
    const ManifestDataset data(manifest, manifest_root(f.manifest, f.root), split,
                               model.config().input_side, false);
    BatchIterator batches = make_eval_batches(data, f.batch_size);
    const Evaluation result = evaluate(model, batches);
    out_ << "accuracy " << fixed(result.accuracy, 4) << '\n';
    out_ << "loss " << fixed(result.mean_loss, 4) << '\n';
    const fs::path confusion = f.confusion ? *f.confusion : fs::path("confusion.csv");
    write_text(confusion, result.confusion.to_csv(manifest.labels));
    log("confusion matrix written to " + confusion.string());
    return kExitOk;
  }

  int predict(const PredictFlags& f) {
    Model<float> model = load_checkpoint(f.checkpoint);
    const ModelConfig& cfg = model.config();
    PreprocessOptions pre;
    pre.side = cfg.input_side;
    pre.threshold = f.threshold;
    if (f.background) pre.background = load_image(*f.background);
    const Tensor pixels = pad_and_resize(preprocess_image(load_image(f.image), pre), cfg.input_side);
    const Prediction p = signglyph::predict(model, pixels);

    auto name = [&](std::size_t i) {
      return cfg.class_names.empty() ? std::to_string(i) : cfg.class_names[i];
    };
    std::vector<std::size_t> order(p.probs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p.probs[a] > p.probs[b]; });
    out_ << "predicted " << name(static_cast<std::size_t>(p.class_index)) << '\n';
    const std::size_t k = std::min(f.topk, order.size());
    for (std::size_t i = 0; i < k; ++i) {
      out_ << name(order[i]) << ' ' << fixed(p.probs[order[i]], 6) << '\n';
    }
    return kExitOk;
  }

  int report(const ReportFlags& f) {
    fs::create_directories(f.out_dir);
    std::vector<ComparisonRow> rows = reference_rows();
    for (const auto& path : f.metrics) {
      const auto history = read_metrics_csv(path);
      const std::string run = path.stem().string();
      write_text(f.out_dir / (run + "_loss.csv"), loss_curve_csv(history));
      write_text(f.out_dir / (run + "_accuracy.csv"), accuracy_curve_csv(history));
      if (f.svg) {
        write_text(f.out_dir / (run + "_loss.svg"), curve_svg(history, false, run + " loss"));
        write_text(f.out_dir / (run + "_accuracy.svg"), curve_svg(history, true, run + " accuracy"));
      }
      rows.push_back(run_row(f.metrics.size() == 1 ? "ours" : "ours (" + run + ")", history));
    }
    const std::string table = comparison_csv(rows);
    write_text(f.out_dir / "comparison.csv", table);
    out_ << table;
    return kExitOk;
  }

 private:
  void check_labels(const ModelConfig& cfg, const DatasetManifest& manifest) {
    if (cfg.num_classes != manifest.labels.size()) {
      throw DataError("checkpoint has " + std::to_string(cfg.num_classes) + " classes but manifest has " +
                      std::to_string(manifest.labels.size()));
    }
    if (!cfg.class_names.empty() && cfg.class_names != manifest.labels) {
      throw DataError("checkpoint class names do not match the manifest label space");
    }
  }

  std::ostream& out_;
  std::ostream& err_;
  const GlobalFlags& global_;
};

void add_model_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--input-side", f.model.input_side, "Square input side in pixels")->capture_default_str();
  cmd->add_option("--filters", f.filters, "Filters per conv block (three values)")
      ->delimiter(',')->expected(3)->capture_default_str();
  cmd->add_option("--dense", f.dense, "Hidden dense widths (two values)")
      ->delimiter(',')->expected(2)->capture_default_str();
  cmd->add_option("--kernel", f.model.kernel_side, "Convolution kernel side (odd)")->capture_default_str();
  cmd->add_option("--pool", f.model.pool_side, "Max-pool window and stride")->capture_default_str();
  cmd->add_option("--conv-dropout", f.model.conv_dropout, "Dropout after each conv block")->capture_default_str();
  cmd->add_option("--dense-dropout", f.model.dense_dropout, "Dropout after each hidden dense layer")
      ->capture_default_str();
}

void add_sgd_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--lr", f.sgd.learning_rate, "Learning rate")->capture_default_str();
  cmd->add_option("--momentum", f.sgd.momentum, "Momentum (0 = plain SGD)")->capture_default_str();
  cmd->add_option("--batch-size", f.sgd.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--epochs", f.sgd.epochs, "Number of epochs")->capture_default_str();
  cmd->add_option("--lr-decay", f.sgd.lr_decay, "Multiplicative learning-rate decay per epoch")
      ->capture_default_str();
}

void add_augment_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_flag("--no-augment", f.no_augment, "Disable augmentation of training batches");
  cmd->add_option("--max-rotation", f.augment.max_rotation_deg, "Max rotation in degrees")->capture_default_str();
  cmd->add_option("--max-translate", f.augment.max_translate_frac, "Max translation as a fraction of the side")
      ->capture_default_str();
  cmd->add_option("--hflip-prob", f.augment.hflip_prob, "Horizontal flip probability")->capture_default_str();
}

// Global flags plus the chosen subcommand's flags as config-file lines that
// --config reads back. Unset optional paths are left out.
std::string resolved_config(const CLI::App& app, const std::string& command) {
  std::istringstream in(app.config_to_str(true, false));
  std::string out;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const auto dot = key.find('.');
    if (dot != std::string::npos && key.substr(0, dot) != command) continue;
    if (line.substr(eq + 1) == "\"\"") continue;
    out += line + '\n';
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional hand-sign classifier: prepare data, train, evaluate, predict, report"};
  app.require_subcommand(1);
  GlobalFlags global;
  app.add_option("--seed", global.seed, "Seed for every random stream")->capture_default_str();
  app.set_config("--config", "", "Read flags from a TOML/INI file");
  app.add_flag("--quiet", global.quiet, "Suppress progress output");

  PrepareFlags prep;
  auto* prepare = app.add_subcommand("prepare", "Background-subtract, pad and resize raw images; write a manifest");
  prepare->add_option("raw_dir", prep.raw_dir, "Directory with one subdirectory per class")->required();
  prepare->add_option("out_dir", prep.out_dir, "Output directory for images and manifest.txt")->required();
  prepare->add_option("--background", prep.background, "Reference background frame");
  prepare->add_option("--threshold", prep.threshold, "Background difference threshold (0-255)")
      ->check(CLI::Range(0, 255))->capture_default_str();
  prepare->add_option("--side", prep.side, "Output side in pixels")->capture_default_str();
  prepare->add_option("--labels", prep.labels,
                      "Label space: letters, digits, digits0, letters+digits, or a comma list");
  prepare->add_option("--val-fraction", prep.val_fraction, "Fraction of each class held out")
      ->check(CLI::Range(0.0, 1.0))->capture_default_str();

  TrainFlags tr;
  auto* train = app.add_subcommand("train", "Train a classifier from a manifest");
  train->add_option("manifest", tr.manifest, "Dataset manifest")->required();
  train->add_option("--root", tr.root, "Image root (defaults to the manifest's directory)");
  train->add_option("--out", tr.out, "Final checkpoint path")->required();
  train->add_option("--metrics", tr.metrics, "Per-epoch metrics CSV")->required();
  train->add_option("--best", tr.best, "Best-validation checkpoint (default <out>.best)");
  train->add_option("--save-initial", tr.initial, "Also write the freshly initialized model here");
  train->add_flag("--record-time", tr.record_time, "Fill the seconds column with wall-clock time");
  add_model_flags(train, tr);
  add_sgd_flags(train, tr);
  add_augment_flags(train, tr);

  EvalFlags ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one manifest split");
  eval->add_option("checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("manifest", ev.manifest, "Dataset manifest")->required();
  eval->add_option("--root", ev.root, "Image root (defaults to the manifest's directory)");
  eval->add_option("--split", ev.split, "train or val")->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  eval->add_option("--confusion", ev.confusion, "Confusion matrix CSV (default confusion.csv)");
  eval->add_option("--batch-size", ev.batch_size, "Evaluation batch size")->capture_default_str();

  PredictFlags pr;
  auto* pred = app.add_subcommand("predict", "Classify a single image");
  pred->add_option("checkpoint", pr.checkpoint, "Checkpoint file")->required();
  pred->add_option("image", pr.image, "PNG or JPEG image")->required();
  pred->add_option("--background", pr.background, "Reference background frame");
  pred->add_option("--threshold", pr.threshold, "Background difference threshold (0-255)")
      ->check(CLI::Range(0, 255))->capture_default_str();
  pred->add_option("--topk", pr.topk, "Number of classes to list")->capture_default_str();

  ReportFlags rep;
  auto* report = app.add_subcommand("report", "Curve tables and the method comparison table");
  report->add_option("metrics", rep.metrics, "Metrics CSV files")->required();
  report->add_option("--out", rep.out_dir, "Output directory")->capture_default_str();
  report->add_flag("--svg", rep.svg, "Also draw SVG line charts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  Command command(out, err, global);
  try {
    const std::string command_name = app.get_subcommands().front()->get_name();
    const std::string config = resolved_config(app, command_name);
    if (!global.quiet) err << "# resolved configuration\n" << config;
    if (*prepare) return command.prepare(prep);
    if (*train) return command.train(tr, config);
    if (*eval) return command.eval(ev);
    if (*pred) return command.predict(pr);
    if (*report) return command.report(rep);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitConfig;
}

}  // namespace signglyph
