#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "reference.hpp"
#include "signglyph/layers.hpp"

using namespace signglyph;
using signglyph::testing::check_layer;

namespace {

// Tolerances for central differences with step 1e-3. The floor keeps the
// relative error meaningful for gradients that vanish up to rounding.
constexpr double kStep = 1e-3;
constexpr double kTol32 = 1e-2, kFloor32 = 1e-3;
constexpr double kTol64 = 1e-5, kFloor64 = 1e-6;

template <typename T>
ConvParams<T> random_conv(std::size_t out_c, std::size_t in_c, std::size_t k, std::size_t stride,
                          std::size_t pad, std::mt19937_64& rng) {
  ConvParams<T> p;
  p.weights = ref::random_tensor<T>({out_c, in_c, k, k}, rng);
  p.bias = ref::random_tensor<T>({out_c}, rng);
  p.stride = stride;
  p.pad = pad;
  return p;
}

template <typename T>
void expect_gradients(const signglyph::testing::GradCheck& r, double tol) {
  for (const auto& p : r.params) {
    EXPECT_GT(p.checked, 0u) << p.name;
    EXPECT_LE(p.worst_element, tol) << p.name;
  }
}

}  // namespace

TEST(Conv2d, OnesKernelSumsWindow) {
  ConvParams<float> p{Tensor({1, 1, 2, 2}, 1.0f), Tensor({1}), 1, 0};
  EXPECT_EQ(conv2d(Tensor({1, 1, 3, 3}, 1.0f), p), Tensor({1, 1, 2, 2}, 4.0f));
}

TEST(Conv2d, CentreTapKernelIsIdentity) {
  std::mt19937_64 rng(1);
  Tensor k({1, 1, 3, 3});
  k.at(0, 0, 1, 1) = 1.0f;
  Tensor x = ref::random_tensor<float>({2, 1, 5, 4}, rng);
  EXPECT_EQ(conv2d(x, ConvParams<float>{k, Tensor({1}), 1, 1}), x);
}

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 rng(2);
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
    auto p = random_conv<float>(4, 3, 3, stride, pad, rng);
    Tensor x = ref::random_tensor<float>({2, 3, 7, 7}, rng);
    std::size_t oh = 0, ow = 0;
    auto expect = ref::conv2d(x, p.weights, p.bias, stride, pad, oh, ow);
    Tensor got = conv2d(x, p);
    ASSERT_EQ(got.shape(), (Shape{2, 4, oh, ow}));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-5);
  }
}

TEST(Conv2d, ChannelOrGeometryMismatchIsShapeError) {
  std::mt19937_64 rng(3);
  auto p = random_conv<float>(2, 3, 3, 1, 0, rng);
  EXPECT_THROW(conv2d(Tensor({1, 2, 5, 5}), p), ShapeError);
  p.stride = 2;
  EXPECT_THROW(conv2d(Tensor({1, 3, 6, 6}), p), ShapeError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences32) {
  std::mt19937_64 rng(4);
  Conv2d<float> layer(random_conv<float>(3, 2, 3, 1, 1, rng));
  Tensor x = ref::random_tensor<float>({1, 2, 5, 5}, rng);
  Tensor w = ref::random_tensor<float>({1, 3, 5, 5}, rng);
  expect_gradients<float>(check_layer(layer, x, w, kStep, kFloor32), kTol32);
}

TEST(Conv2d, GradientsMatchFiniteDifferences64) {
  std::mt19937_64 rng(4);
  Conv2d<double> layer(random_conv<double>(3, 2, 3, 2, 1, rng));
  Tensor64 x = ref::random_tensor<double>({2, 2, 5, 5}, rng);
  Tensor64 w = ref::random_tensor<double>({2, 3, 3, 3}, rng);
  expect_gradients<double>(check_layer(layer, x, w, kStep, kFloor64), kTol64);
}

TEST(Conv2d, BackwardAccumulatesUntilZeroGrad) {
  std::mt19937_64 rng(5);
  Conv2d<float> layer(random_conv<float>(2, 1, 3, 1, 1, rng));
  Tensor x = ref::random_tensor<float>({1, 1, 4, 4}, rng);
  Tensor g = ref::random_tensor<float>({1, 2, 4, 4}, rng);
  layer.forward(x, Mode::train);
  layer.backward(g);
  const Tensor once = layer.weight_grad();
  layer.forward(x, Mode::train);
  layer.backward(g);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_FLOAT_EQ(layer.weight_grad()[i], 2 * once[i]);
  layer.zero_grad();
  EXPECT_EQ(layer.weight_grad(), Tensor(once.shape()));
}

TEST(MaxPool, TakesWindowMaximum) {
  EXPECT_EQ(maxpool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2), Tensor({1, 1, 1, 1}, {4}));
}

TEST(MaxPool, ConstantInputRoutesGradientToFirstElement) {
  MaxPool2d<float> pool(2, 2);
  EXPECT_EQ(pool.forward(Tensor({1, 1, 4, 4}, 3.0f), Mode::train), Tensor({1, 1, 2, 2}, 3.0f));
  Tensor g = pool.backward(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(g, Tensor({1, 1, 4, 4}, {1, 0, 2, 0, 0, 0, 0, 0, 3, 0, 4, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, WindowLargerThanInputIsShapeError) {
  EXPECT_THROW(maxpool2d(Tensor({1, 1, 2, 2}), 3, 1), ShapeError);
  EXPECT_THROW(maxpool2d(Tensor({1, 1, 5, 5}), 2, 2), ShapeError);
}

TEST(MaxPool, GradientMatchesFiniteDifferencesAwayFromTies) {
  std::mt19937_64 rng(6);
  MaxPool2d<float> pool(2, 2);
  auto r32 = check_layer(pool, ref::random_tensor<float>({1, 1, 4, 4}, rng),
                         ref::random_tensor<float>({1, 1, 2, 2}, rng), kStep, kFloor32);
  expect_gradients<float>(r32, kTol32);
  MaxPool2d<double> pool64(3, 1);
  auto r64 = check_layer(pool64, ref::random_tensor<double>({2, 2, 5, 5}, rng),
                         ref::random_tensor<double>({2, 2, 3, 3}, rng), kStep, kFloor64);
  expect_gradients<double>(r64, kTol64);
}

TEST(MaxPool, BackwardConservesGradientMass) {
  std::mt19937_64 rng(7);
  for (auto [size, stride] : {std::pair{2, 2}, {3, 1}, {2, 1}}) {
    MaxPool2d<double> pool(size, stride);
    const auto out = pool.forward(ref::random_tensor<double>({3, 2, 8, 8}, rng), Mode::train);
    const auto g = ref::random_tensor<double>(out.shape(), rng);
    const auto back = pool.backward(g);
    const double in_mass = std::accumulate(back.data().begin(), back.data().end(), 0.0);
    const double out_mass = std::accumulate(g.data().begin(), g.data().end(), 0.0);
    EXPECT_NEAR(in_mass, out_mass, 1e-9);
  }
}

TEST(Relu, ClampsNegativesAndZero) {
  EXPECT_EQ(relu(Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
  Relu<float> layer;
  layer.forward(Tensor({3}, {-1, 0, 2}), Mode::train);
  EXPECT_EQ(layer.backward(Tensor({3}, {5, 5, 5})), Tensor({3}, {0, 0, 5}));
}

TEST(Relu, AllNegativeGivesZerosBothWays) {
  Relu<float> layer;
  EXPECT_EQ(layer.forward(Tensor({2, 3}, -0.5f), Mode::train), Tensor({2, 3}));
  EXPECT_EQ(layer.backward(Tensor({2, 3}, 1.0f)), Tensor({2, 3}));
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromZero) {
  std::mt19937_64 rng(8);
  Relu<float> layer;
  expect_gradients<float>(check_layer(layer, ref::random_tensor<float>({4, 7}, rng),
                                      ref::random_tensor<float>({4, 7}, rng), kStep, kFloor32),
                          kTol32);
}

TEST(Dropout, EvalModeIsExactIdentity) {
  std::mt19937_64 rng(9);
  Dropout<float> layer(0.5, 1);
  Tensor x = ref::random_tensor<float>({3, 40}, rng);
  EXPECT_EQ(layer.forward(x, Mode::eval), x);
  EXPECT_EQ(layer.backward(x), x);
}

TEST(Dropout, RateZeroTrainModeIsExactIdentity) {
  std::mt19937_64 rng(10);
  Dropout<float> layer(0.0, 1);
  Tensor x = ref::random_tensor<float>({3, 40}, rng);
  EXPECT_EQ(layer.forward(x, Mode::train), x);
}

TEST(Dropout, InvalidRateIsParameterError) {
  EXPECT_THROW(Dropout<float>(1.0, 0), ParameterError);
  EXPECT_THROW(Dropout<float>(-0.1, 0), ParameterError);
  Dropout<float> layer(0.2, 0);
  EXPECT_THROW(layer.set_rate(1.5), ParameterError);
}

TEST(Dropout, MaskTakesTwoValuesAndBackwardReusesIt) {
  std::mt19937_64 rng(11);
  Dropout<float> layer(0.25, 3);
  Tensor x = ref::random_tensor<float>({5, 50}, rng);
  Tensor y = layer.forward(x, Mode::train);
  const Tensor& mask = layer.mask();
  const float keep = 1.0f / 0.75f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_TRUE(mask[i] == 0.0f || mask[i] == keep);
    EXPECT_EQ(y[i], x[i] * mask[i]);
  }
  Tensor g = ref::random_tensor<float>({5, 50}, rng);
  Tensor back = layer.backward(g);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(back[i], g[i] * mask[i]);
}

TEST(Dropout, MillionElementStatistics) {
  Dropout<float> layer(0.5, 2024);
  Tensor y = layer.forward(Tensor({1000, 1000}, 1.0f), Mode::train);
  double sum = 0;
  std::size_t zeros = 0;
  for (float v : y.data()) {
    sum += v;
    zeros += v == 0.0f;
  }
  EXPECT_GE(sum / 1e6, 0.99);
  EXPECT_LE(sum / 1e6, 1.01);
  EXPECT_GE(zeros / 1e6, 0.498);
  EXPECT_LE(zeros / 1e6, 0.502);
}

TEST(Dense, IdentityWeightsPassInputThrough) {
  std::mt19937_64 rng(12);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0f;
  Tensor x = ref::random_tensor<float>({3, 4}, rng);
  EXPECT_EQ(dense(x, DenseParams<float>{eye, Tensor({4})}), x);
}

TEST(Dense, HandSum) {
  EXPECT_EQ(dense(Tensor({1, 2}, {1, 2}), DenseParams<float>{Tensor({2, 1}, 1.0f), Tensor({1}, 3.0f)}),
            Tensor({1, 1}, {6}));
}

TEST(Dense, MismatchIsShapeError) {
  EXPECT_THROW(dense(Tensor({1, 3}), DenseParams<float>{Tensor({2, 1}), Tensor({1})}), ShapeError);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  Dense<float> layer(DenseParams<float>{ref::random_tensor<float>({4, 6}, rng), ref::random_tensor<float>({6}, rng)});
  expect_gradients<float>(check_layer(layer, ref::random_tensor<float>({3, 4}, rng),
                                      ref::random_tensor<float>({3, 6}, rng), kStep, kFloor32),
                          kTol32);
  Dense<double> layer64(DenseParams<double>{ref::random_tensor<double>({4, 6}, rng), ref::random_tensor<double>({6}, rng)});
  expect_gradients<double>(check_layer(layer64, ref::random_tensor<double>({3, 4}, rng),
                                       ref::random_tensor<double>({3, 6}, rng), kStep, kFloor64),
                           kTol64);
}

TEST(Softmax, UniformForEqualLogits) {
  Tensor p = softmax(Tensor({1, 3}));
  for (float v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Tensor p = softmax(Tensor({1, 2}, {1000, 0}));
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0], 1.0, 1e-7);
  EXPECT_NEAR(p[1], 0.0, 1e-7);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(14);
  Tensor z = ref::random_tensor<float>({3, 5}, rng, -3, 3);
  Tensor shifted = z;
  for (auto& v : shifted.data()) v += 7.0f;
  Tensor p = softmax(z), q = softmax(shifted);
  for (std::size_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      sum += p.at(i, j);
      EXPECT_NEAR(p.at(i, j), q.at(i, j), 1e-6);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, SingleColumnIsShapeError) {
  EXPECT_THROW(softmax(Tensor({2, 1})), ShapeError);
}

TEST(Softmax, JacobianBackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  Softmax<double> layer;
  expect_gradients<double>(check_layer(layer, ref::random_tensor<double>({3, 5}, rng),
                                       ref::random_tensor<double>({3, 5}, rng), kStep, kFloor64),
                           kTol64);
}

TEST(Flatten, RoundTripsShape) {
  Flatten<float> layer;
  std::mt19937_64 rng(16);
  Tensor x = ref::random_tensor<float>({2, 3, 2, 2}, rng);
  Tensor y = layer.forward(x, Mode::train);
  EXPECT_EQ(y.shape(), (Shape{2, 12}));
  EXPECT_EQ(layer.backward(y), x);
}
