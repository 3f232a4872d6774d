#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "reference.hpp"
#include "signglyph/model.hpp"

using namespace signglyph;

namespace {

ModelConfig tiny_config(std::size_t classes = 3) {
  ModelConfig cfg;
  cfg.input_side = 8;
  cfg.conv_filters = {2, 3, 2};
  cfg.dense_widths = {5, 4};
  cfg.num_classes = classes;
  cfg.seed = 17;
  return cfg;
}

// Nonzero biases so the oracle exercises every term.
void randomize_biases(Model<float>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& p : model.parameters()) {
    if (p.value->rank() == 1) *p.value = ref::random_tensor<float>(p.value->shape(), rng, -0.2, 0.2);
  }
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "signglyph_model_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ModelShapes, DefaultConfigFlattensToEightyThousand) {
  ModelConfig cfg;
  const auto trace = trace_shapes(cfg);
  std::vector<std::size_t> sides;
  for (const auto& t : trace) {
    if (t.kind == "conv" || t.kind == "maxpool") sides.push_back(t.output[1]);
  }
  EXPECT_EQ(sides, (std::vector<std::size_t>{200, 200, 100, 100, 100, 50, 50, 50, 25}));
  // Oracle: each same-padded conv keeps the side, each pool halves it.
  std::size_t side = cfg.input_side;
  for (int b = 0; b < 3; ++b) side /= cfg.pool_side;
  std::size_t flatten = 0;
  for (const auto& t : trace)
    if (t.kind == "flatten") flatten = t.output[0];
  EXPECT_EQ(flatten, 128u * side * side);
  EXPECT_EQ(flatten, 80000u);
  EXPECT_EQ(trace.back().output, (Shape{26}));
}

TEST(ModelShapes, LayerSequenceIsExact) {
  std::vector<std::string> kinds;
  for (const auto& t : trace_shapes(ModelConfig{})) kinds.push_back(t.kind);
  std::vector<std::string> expect;
  for (int b = 0; b < 3; ++b) {
    for (const char* k : {"conv", "relu", "conv", "relu", "maxpool", "dropout"}) expect.push_back(k);
  }
  expect.push_back("flatten");
  for (int d = 0; d < 2; ++d) {
    for (const char* k : {"dense", "relu", "dropout"}) expect.push_back(k);
  }
  expect.push_back("dense");
  expect.push_back("softmax");
  EXPECT_EQ(kinds, expect);
}

TEST(ModelShapes, ChainingHoldsAcrossConfigs) {
  for (std::size_t side : {8u, 16u, 40u, 64u}) {
    for (std::size_t f3 : {1u, 7u}) {
      ModelConfig cfg = tiny_config();
      cfg.input_side = side;
      cfg.conv_filters[2] = f3;
      Model<float> model(cfg);
      const std::size_t reduced = side / 8;
      EXPECT_EQ(model.flatten_dim(), f3 * reduced * reduced);
      EXPECT_EQ(model.parameter_count(), count_parameters(cfg));
    }
  }
}

TEST(ModelShapes, BadGeometryNamesFailingLayer) {
  ModelConfig cfg = tiny_config();
  cfg.input_side = 12;  // 12 -> 6 -> 3, the third pool cannot halve 3
  try {
    trace_shapes(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pool3"), std::string::npos) << e.what();
  }
}

TEST(ModelConfigValidation, RejectsInvalidValues) {
  auto bad = [](auto mutate) {
    ModelConfig cfg;
    mutate(cfg);
    EXPECT_THROW(cfg.validate(), ConfigError);
  };
  bad([](ModelConfig& c) { c.num_classes = 1; });
  bad([](ModelConfig& c) { c.conv_dropout = 1.0; });
  bad([](ModelConfig& c) { c.dense_dropout = -0.1; });
  bad([](ModelConfig& c) { c.kernel_side = 4; });
  bad([](ModelConfig& c) { c.conv_filters[1] = 0; });
  bad([](ModelConfig& c) { c.class_names = {"a", "b"}; });
}

TEST(ModelConfigText, RoundTrips) {
  ModelConfig cfg = tiny_config(4);
  cfg.conv_dropout = 0.1;
  cfg.class_names = {"w", "x", "y", "z"};
  EXPECT_EQ(ModelConfig::from_text(cfg.to_text()), cfg);
}

TEST(ModelParameterCount, MatchesHandFormula) {
  ModelConfig cfg;
  const std::size_t k2 = 9;
  const std::size_t conv = (3 * k2 + 1) * 32 + (32 * k2 + 1) * 32 + (32 * k2 + 1) * 64 +
                           (64 * k2 + 1) * 64 + (64 * k2 + 1) * 128 + (128 * k2 + 1) * 128;
  const std::size_t fc = (80000 + 1) * 512 + (512 + 1) * 256 + (256 + 1) * 26;
  EXPECT_EQ(count_parameters(cfg), conv + fc);
}

TEST(ModelBuild, ZeroInputGivesUniformOutput) {
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.input_side = 8;
  cfg.conv_filters = {1, 1, 1};
  cfg.dense_widths = {4, 4};
  Model<float> model(cfg);
  Tensor p = model.forward(Tensor({3, 3, 8, 8}), Mode::eval);
  for (float v : p.data()) EXPECT_NEAR(v, 0.5, 1e-6);
}

TEST(ModelBuild, EqualSeedsGiveBitwiseEqualParameters) {
  Model<float> a(tiny_config()), b(tiny_config());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].value, *pb[i].value) << pa[i].name;
  ModelConfig other = tiny_config();
  other.seed = 18;
  Model<float> c(other);
  EXPECT_NE(*c.parameters()[0].value, *pa[0].value);
}

TEST(ModelForward, RowsAreProbabilitiesAndEvalIsDeterministic) {
  Model<float> model(tiny_config(5));
  std::mt19937_64 rng(1);
  Tensor x = ref::random_tensor<float>({4, 3, 8, 8}, rng, 0, 1);
  Tensor p = model.forward(x, Mode::eval);
  ASSERT_EQ(p.shape(), (Shape{4, 5}));
  for (std::size_t i = 0; i < 4; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GE(p.at(i, j), 0.0f);
      EXPECT_LE(p.at(i, j), 1.0f);
      sum += p.at(i, j);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  EXPECT_EQ(model.forward(x, Mode::eval), p);
}

TEST(ModelForward, WrongGeometryIsShapeError) {
  Model<float> model(tiny_config());
  EXPECT_THROW(model.forward(Tensor({1, 3, 16, 16}), Mode::eval), ShapeError);
  EXPECT_THROW(model.forward(Tensor({1, 1, 8, 8}), Mode::eval), ShapeError);
  EXPECT_THROW(model.forward(Tensor({3, 8, 8}), Mode::eval), ShapeError);
}

TEST(ModelForward, MatchesIndependentRecomputation) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ModelConfig cfg = tiny_config(4);
    cfg.seed = seed;
    Model<float> model(cfg);
    randomize_biases(model, seed);
    std::mt19937_64 rng(seed);
    Tensor x = ref::random_tensor<float>({3, 3, 8, 8}, rng, 0, 1);
    Tensor got = model.forward(x, Mode::eval);
    auto expect = ref::model_forward(model, x);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got.at(i, j), expect[i][j], 1e-5);
  }
}

TEST(ModelPredict, DominantLogitWins) {
  Model<float> model(tiny_config(5));
  auto params = model.parameters();
  params.back().value->data()[3] = 1000.0f;  // output bias
  std::mt19937_64 rng(2);
  Prediction p = predict(model, ref::random_tensor<float>({3, 8, 8}, rng, 0, 1));
  EXPECT_EQ(p.class_index, 3);
  double sum = 0;
  for (float v : p.probs) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-6);
}

TEST(ModelPredict, AgreesWithBatchForward) {
  Model<float> model(tiny_config(4));
  randomize_biases(model, 9);
  std::mt19937_64 rng(3);
  Tensor batch = ref::random_tensor<float>({5, 3, 8, 8}, rng, 0, 1);
  Tensor probs = model.forward(batch, Mode::eval);
  auto classes = argmax_rows(probs);
  for (std::size_t i = 0; i < 5; ++i) {
    Tensor image({3, 8, 8}, std::vector<float>(batch.data().begin() + i * 192, batch.data().begin() + (i + 1) * 192));
    Prediction p = predict(model, image);
    EXPECT_EQ(p.class_index, classes[i]);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(p.probs[j], probs.at(i, j), 1e-6);
  }
  EXPECT_THROW(predict(model, Tensor({3, 9, 9})), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitwiseAndGivesIdenticalOutputs) {
  ModelConfig cfg = tiny_config(3);
  cfg.class_names = {"a", "b", "c"};
  Model<float> model(cfg);
  randomize_biases(model, 4);
  const auto path = temp_file("roundtrip.sgly");
  save_checkpoint(model, path);
  Model<float> loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config(), cfg);
  auto pa = model.parameters(), pb = loaded.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].value, *pb[i].value);
  std::mt19937_64 rng(5);
  Tensor x = ref::random_tensor<float>({4, 3, 8, 8}, rng, 0, 1);
  EXPECT_EQ(model.forward(x, Mode::eval), loaded.forward(x, Mode::eval));
}

TEST(Checkpoint, SizeMatchesLayoutArithmetic) {
  for (ModelConfig cfg : {ModelConfig{}, tiny_config()}) {
    // magic + version + config length, config text, 6 conv records (rank 4
    // weights, rank 1 bias), 3 dense records (rank 2, rank 1), checksum.
    const std::size_t records = 6 * ((1 + 4 * 4) + (1 + 4 * 1)) + 3 * ((1 + 4 * 2) + (1 + 4 * 1));
    const std::size_t expect = 4 + 2 + 4 + cfg.to_text().size() + records + 4 * count_parameters(cfg) + 8;
    EXPECT_EQ(checkpoint_size(cfg), expect);
  }
  Model<float> model(tiny_config());
  EXPECT_EQ(encode_checkpoint(model).size(), checkpoint_size(tiny_config()));
}

TEST(Checkpoint, PayloadByteFlipIsChecksumError) {
  Model<float> model(tiny_config());
  auto bytes = encode_checkpoint(model);
  bytes[bytes.size() - 20] ^= std::byte{0x01};
  EXPECT_THROW(decode_checkpoint(bytes), ChecksumError);
}

TEST(Checkpoint, CorruptionsAreDistinctErrors) {
  Model<float> model(tiny_config());
  const auto good = encode_checkpoint(model);

  auto magic = good;
  magic[0] = std::byte{'X'};
  EXPECT_THROW(decode_checkpoint(magic), BadMagicError);

  auto version = good;
  version[4] = std::byte{2};
  EXPECT_THROW(decode_checkpoint(version), VersionMismatchError);

  for (std::size_t keep : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::span(good).first(keep)), TruncatedError) << keep;
  }

  auto trailing = good;
  trailing.push_back(std::byte{0});
  EXPECT_THROW(decode_checkpoint(trailing), CheckpointError);

  EXPECT_THROW(load_checkpoint(temp_file("missing.sgly")), IoError);
}
