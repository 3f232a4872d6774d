// Acceptance harness: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "glyphs.hpp"
#include "gradcheck.hpp"
#include "reference.hpp"
#include "signglyph/augment.hpp"
#include "signglyph/cli.hpp"
#include "signglyph/dataset.hpp"
#include "signglyph/layers.hpp"
#include "signglyph/model.hpp"
#include "signglyph/training.hpp"

using namespace signglyph;
namespace fs = std::filesystem;
namespace sgt = signglyph::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------- 1

constexpr double kGradStep = 1e-3;
constexpr double kGradTol32 = 1e-2;
constexpr double kGradTol64 = 1e-5;
// A 32-bit central difference at this step carries roughly 1e-4 of absolute
// rounding noise on an O(1) loss, so smaller gradients are compared against
// this floor rather than their own magnitude.
constexpr double kGradFloor32 = 1e-2;
constexpr double kGradFloor64 = 1e-6;

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.input_side = 8;
  cfg.conv_filters = {2, 2, 2};
  cfg.dense_widths = {8, 8};
  cfg.num_classes = 3;
  cfg.conv_dropout = 0;
  cfg.dense_dropout = 0;
  // Elements whose perturbation crosses a ReLU or pooling kink are skipped;
  // this seed leaves every parameter tensor with checkable elements.
  cfg.seed = 4;
  Model<float> model(cfg);
  std::mt19937_64 rng(17);
  const Tensor x = ref::random_tensor<float>({4, 3, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> labels{0, 1, 2, 1};

  const auto r32 = sgt::check_gradients(model, x, labels, kGradStep, kGradFloor32);
  Model<double> model64 = model.cast<double>();
  const auto r64 = sgt::check_gradients(model64, x.cast<double>(), labels, kGradStep, kGradFloor64);

  bool every_param_checked = true;
  for (const auto* r : {&r32, &r64})
    for (const auto& p : r->params) every_param_checked &= p.checked > 0;
  const double seconds = elapsed(start);
  Outcome o;
  o.pass = every_param_checked && r32.worst_element() <= kGradTol32 && r64.worst_element() <= kGradTol64 &&
           seconds < 60;
  o.detail = fmt("32-bit worst %.2e (tol %.0e), 64-bit worst %.2e (tol %.0e), %zu checked, %zu kinks skipped, %.1fs",
                 r32.worst_element(), kGradTol32, r64.worst_element(), kGradTol64, r32.checked() + r64.checked(),
                 r32.skipped() + r64.skipped(), seconds);
  return o;
}

// ---------------------------------------------------------------- 2

template <typename T>
double loss_oracle_delta(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> classes(2, 12), rows(1, 6);
  std::uniform_real_distribution<double> logit(-6.0, 6.0);
  const int c = classes(rng), n = rows(rng);
  std::vector<std::vector<double>> q(n);
  std::vector<int> labels(n);
  BasicTensor<T> probs({std::size_t(n), std::size_t(c)});
  for (int i = 0; i < n; ++i) {
    std::vector<double> z(c);
    for (auto& v : z) v = logit(rng);
    q[i] = ref::softmax_row(z);
    labels[i] = std::uniform_int_distribution<int>(0, c - 1)(rng);
    for (int j = 0; j < c; ++j) {
      probs.at(i, j) = static_cast<T>(q[i][j]);
      q[i][j] = probs.at(i, j);  // the oracle sees exactly the stored value
    }
  }
  const double got = cross_entropy(probs, std::span<const int>(labels)).value;
  return std::abs(got - ref::cross_entropy(q, labels));
}

Outcome loss_oracle() {
  std::mt19937_64 rng(2);
  double worst64 = 0, worst32 = 0;
  for (int i = 0; i < 1000; ++i) worst64 = std::max(worst64, loss_oracle_delta<double>(rng));
  for (int i = 0; i < 1000; ++i) worst32 = std::max(worst32, loss_oracle_delta<float>(rng));
  return {worst64 <= 1e-6 && worst32 <= 1e-6,
          fmt("1000 cases each: 64-bit max |delta| %.2e, 32-bit max |delta| %.2e (tol 1e-6)", worst64, worst32)};
}

// ---------------------------------------------------------------- 3, 4 and 5 share one model

constexpr std::size_t kDeskSide = 200;

ModelConfig desk_model() {
  ModelConfig cfg;
  cfg.input_side = kDeskSide;
  cfg.conv_filters = {4, 8, 8};
  cfg.dense_widths = {64, 32};
  cfg.num_classes = 10;
  cfg.conv_dropout = 0;
  cfg.dense_dropout = 0;
  cfg.seed = 1;
  return cfg;
}

SgdConfig desk_sgd(std::size_t epochs) {
  SgdConfig sgd;
  sgd.learning_rate = 0.005;
  sgd.momentum = 0.9;
  sgd.batch_size = 16;
  sgd.epochs = epochs;
  sgd.seed = 3;
  return sgd;
}

// ---------------------------------------------------------------- 3

Outcome overfit() {
  const auto start = std::chrono::steady_clock::now();
  const auto train = sgt::glyph_dataset(10, 2, kDeskSide, 31, 0);
  const auto val = sgt::glyph_dataset(10, 1, kDeskSide, 31, 100);
  Model<float> model(desk_model());
  // Plain SGD: with momentum and batches this small the narrow net can
  // collapse to a constant output.
  SgdConfig sgd = desk_sgd(200);
  sgd.batch_size = 4;
  sgd.momentum = 0.0;
  FitOptions opts;
  opts.stop_when = [](const EpochMetrics& m) { return m.train_acc == 1.0 && m.train_loss < 0.01; };
  const auto history = fit(model, train, val, sgd, opts);
  const auto& last = history.back();
  const double seconds = elapsed(start);
  return {last.train_acc == 1.0 && last.train_loss < 0.01 && seconds < 300,
          fmt("side %zu, epoch %zu: train acc %.3f, train loss %.5f, %.1fs", kDeskSide, last.epoch,
              last.train_acc, last.train_loss, seconds)};
}

// ---------------------------------------------------------------- 4

Outcome desk_scale() {
  const auto start = std::chrono::steady_clock::now();
  const auto train = sgt::glyph_dataset(10, 50, kDeskSide, 7, 0);
  const auto val = sgt::glyph_dataset(10, 20, kDeskSide, 7, 1000);
  Model<float> model(desk_model());
  FitOptions opts;
  opts.augment = AugmentPolicy{};
  opts.stop_when = [](const EpochMetrics& m) { return m.val_acc >= 0.95; };
  opts.on_epoch = [&](const EpochMetrics& m) {
    std::fprintf(stderr, "  desk epoch %zu: train %.3f val %.3f (%.0fs)\n", m.epoch, m.train_acc, m.val_acc,
                 elapsed(start));
  };
  const auto history = fit(model, train, val, desk_sgd(30), opts);
  const double seconds = elapsed(start);
  const auto& last = history.back();
  return {last.val_acc >= 0.95 && seconds < 1800,
          fmt("10 classes, 50 train / 20 val each, %zux%zu, augmented: val acc %.3f at epoch %zu, %.0fs", kDeskSide,
              kDeskSide, last.val_acc, last.epoch, seconds)};
}

// ---------------------------------------------------------------- 5

constexpr std::size_t kShrunkEpochs = 15;

Outcome augmentation_effect() {
  const auto start = std::chrono::steady_clock::now();
  const auto train = sgt::glyph_dataset(10, 10, kDeskSide, 7, 0);
  const auto val = sgt::glyph_dataset(10, 20, kDeskSide, 7, 1000);
  auto run = [&](bool augment) {
    Model<float> model(desk_model());
    FitOptions opts;
    opts.augment = augment ? AugmentPolicy{} : AugmentPolicy::disabled();
    return fit(model, train, val, desk_sgd(kShrunkEpochs), opts).back().val_acc;
  };
  const double without = run(false);
  const double with = run(true);
  return {true, fmt("10 train/class, %zu epochs: val acc %.3f without, %.3f with, delta %+.3f (reported only), %.0fs",
                    kShrunkEpochs, without, with, with - without, elapsed(start))};
}

// ---------------------------------------------------------------- 6

Outcome augmentation_bounds() {
  const AugmentPolicy policy;
  std::mt19937_64 rng(6);
  double max_angle = 0, max_shift = 0;
  std::size_t flips = 0;
  constexpr int kDraws = 10000;
  for (int i = 0; i < kDraws; ++i) {
    const AugmentDraw d = sample_augment(policy, kDeskSide, rng);
    max_angle = std::max(max_angle, std::abs(d.angle_deg));
    max_shift = std::max({max_shift, std::abs(d.shift_x), std::abs(d.shift_y)});
    flips += d.flip;
  }
  const double shift_frac = max_shift / kDeskSide;
  const double flip_rate = double(flips) / kDraws;
  return {max_angle <= 20.0 && shift_frac <= 0.20 && flip_rate >= 0.48 && flip_rate <= 0.52,
          fmt("10^4 draws: max |rotation| %.3f deg, max |translation| %.4f of side, flip rate %.4f", max_angle,
              shift_frac, flip_rate)};
}

// ---------------------------------------------------------------- 7

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "signglyph");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "%s", err.str().c_str());
  return code;
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "signglyph_acceptance_determinism";
  fs::remove_all(dir);
  sgt::write_glyph_tree(dir / "raw", 3, 6, 32, 4);
  if (cli({"--quiet", "--seed", "8", "prepare", (dir / "raw").string(), (dir / "data").string(), "--side", "32"}) !=
      0) {
    return {false, "prepare failed"};
  }
  for (const char* run : {"a", "b"}) {
    const int code = cli({"--quiet", "--seed", "8", "train", (dir / "data" / "manifest.txt").string(), "--out",
                          (dir / run / "model.ckpt").string(), "--metrics", (dir / run / "metrics.csv").string(),
                          "--input-side", "32", "--filters", "4", "4", "4", "--dense", "16", "16", "--epochs", "3",
                          "--batch-size", "4"});
    if (code != 0) return {false, "train failed"};
  }
  const std::string csv_a = slurp(dir / "a" / "metrics.csv");
  const bool same_csv = !csv_a.empty() && csv_a == slurp(dir / "b" / "metrics.csv");
  const bool same_ckpt = slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt");

  Model<float> model = load_checkpoint(dir / "a" / "model.ckpt");
  std::mt19937_64 rng(1);
  const Tensor batch = ref::random_tensor<float>({5, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor before = model.forward(batch, Mode::eval);
  save_checkpoint(model, dir / "roundtrip.ckpt");
  Model<float> reloaded = load_checkpoint(dir / "roundtrip.ckpt");
  const bool same_eval = reloaded.forward(batch, Mode::eval) == before;
  return {same_csv && same_ckpt && same_eval,
          fmt("metrics CSV identical: %s, checkpoints identical: %s, round-trip eval bitwise equal: %s",
              same_csv ? "yes" : "no", same_ckpt ? "yes" : "no", same_eval ? "yes" : "no")};
}

// ---------------------------------------------------------------- 8

Outcome invariants() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> failures;

  const auto trace = trace_shapes(ModelConfig{});
  std::size_t flatten = 0;
  for (const auto& t : trace)
    if (t.kind == "flatten") flatten = t.output.at(0);
  if (flatten != 128u * 25 * 25) failures.push_back("flatten dim " + std::to_string(flatten));

  std::mt19937_64 rng(8);
  double softmax_worst = 0, grad_worst = 0, mass_worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + trial % 7, cols = 2 + trial % 34;
    const double scale = trial % 2 ? 30.0 : 3.0;
    Softmax<float> softmax;
    const Tensor probs = softmax.forward(ref::random_tensor<float>({rows, cols}, rng, -scale, scale), Mode::eval);
    std::vector<int> labels(rows);
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, int(cols) - 1)(rng);
    const Tensor grad = cross_entropy(probs, std::span<const int>(labels)).grad_logits;
    for (std::size_t r = 0; r < rows; ++r) {
      double p = 0, g = 0;
      for (std::size_t c = 0; c < cols; ++c) {
        p += probs.at(r, c);
        g += grad.at(r, c);
      }
      softmax_worst = std::max(softmax_worst, std::abs(p - 1.0));
      grad_worst = std::max(grad_worst, std::abs(g));
    }

    const std::size_t side = 2 * (2 + trial % 5);
    MaxPool2d<float> pool(2, 2);
    const Tensor x = ref::random_tensor<float>({2, 3, side, side}, rng);
    const Tensor y = pool.forward(x, Mode::train);
    const Tensor gy = ref::random_tensor<float>(y.shape(), rng);
    const Tensor gx = pool.backward(gy);
    double in = 0, out = 0;
    for (float v : gx.data()) in += v;
    for (float v : gy.data()) out += v;
    mass_worst = std::max(mass_worst, std::abs(in - out));
  }
  if (softmax_worst > 1e-6) failures.push_back(fmt("softmax row sum off by %.2e", softmax_worst));
  if (grad_worst > 1e-6) failures.push_back(fmt("gradient row sum off by %.2e", grad_worst));
  if (mass_worst > 1e-4) failures.push_back(fmt("pool gradient mass off by %.2e", mass_worst));

  const auto data = sgt::glyph_dataset(4, 9, 8, 5);
  std::multiset<std::string> expect;
  for (std::size_t i = 0; i < data.size(); ++i) expect.insert(data.source(i));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    BatchOptions opts{1 + seed % 11, seed, true, AugmentPolicy{}};
    BatchIterator it = make_batches(data, opts);
    std::multiset<std::string> seen;
    while (auto b = it.next()) seen.insert(b->sources.begin(), b->sources.end());
    if (seen != expect) failures.push_back("epoch coverage broken for seed " + std::to_string(seed));
  }

  const double seconds = elapsed(start);
  if (seconds >= 120) failures.push_back(fmt("took %.0fs", seconds));
  std::string detail = fmt("flatten %zu, softmax sum err %.1e, grad sum err %.1e, pool mass err %.1e, %.1fs", flatten,
                           softmax_worst, grad_worst, mass_worst, seconds);
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient check", gradients}},
      {2, {"cross-entropy oracle", loss_oracle}},
      {3, {"overfit sanity", overfit}},
      {4, {"desk-scale learning", desk_scale}},
      {5, {"augmentation effect", augmentation_effect}},
      {6, {"augmentation bounds", augmentation_bounds}},
      {7, {"determinism", determinism}},
      {8, {"pipeline invariants", invariants}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, entry.first, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
