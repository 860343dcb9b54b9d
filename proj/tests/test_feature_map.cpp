#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "geoquery/error.hpp"
#include "geoquery/feature_map.hpp"
#include "geoquery/gradcheck.hpp"
#include "test_util.hpp"

using namespace geoquery;
using gqtest::random_linear;
using gqtest::random_map;

TEST(FeatureMap, LayoutAndShape) {
  FeatureMap m(2, 3, 4);
  EXPECT_EQ(m.size(), 24u);
  EXPECT_EQ(m.index(1, 2, 3), 23u);
  m(1, 0, 2) = 5.0f;
  EXPECT_EQ(m.pixel(1, 0)[2], 5.0f);
  EXPECT_EQ(m.pixel(std::size_t{3})[2], 5.0f);
  EXPECT_THROW(FeatureMap(2, 2, 0), ShapeError);
  EXPECT_THROW(FeatureMap(-1, 2, 1), ShapeError);
  EXPECT_TRUE(FeatureMap(0, 0, 3).empty());
}

TEST(BilinearSample, ExactAtIntegerCoordinates) {
  Rng rng(1);
  const auto m = random_map(rng, 5, 5, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      float out[3];
      sample_point(m, float(x), float(y), std::span<float>(out));
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out[c], m(y, x, c));
    }
}

TEST(BilinearSample, MatchesNaiveOracle) {
  Rng rng(2);
  const auto m = random_map<double>(rng, 6, 7, 2);
  std::vector<Coord2<double>> coords;
  for (int i = 0; i < 200; ++i) coords.push_back({rng.uniform(-1.5, 7.5), rng.uniform(-1.5, 6.5)});
  const auto out = bilinear_sample<double>(m, coords);
  ASSERT_EQ(out.height(), 1);
  ASSERT_EQ(out.width(), 200);
  for (int i = 0; i < 200; ++i)
    for (int c = 0; c < 2; ++c) ASSERT_NEAR(out(0, i, c), gqtest::naive_bilinear(m, coords[i].u, coords[i].v, c), 1e-12);
}

TEST(BilinearSample, ZeroPaddingOutside) {
  FeatureMap m(3, 3, 1, 1.0f);
  float v = -1;
  sample_point(m, -1.0f, 1.0f, std::span<float>(&v, 1));
  EXPECT_EQ(v, 0.0f);
  sample_point(m, -0.5f, 1.0f, std::span<float>(&v, 1));
  EXPECT_FLOAT_EQ(v, 0.5f);
  sample_point(m, 10.0f, -10.0f, std::span<float>(&v, 1));
  EXPECT_EQ(v, 0.0f);
}

TEST(BilinearSample, ContinuousAcrossCellBoundaries) {
  Rng rng(3);
  const auto m = random_map<double>(rng, 5, 5, 3);
  for (double b : {1.0, 2.0, 3.0}) {
    double lo[3], hi[3];
    sample_point<double>(m, b - 1e-6, 2.3, std::span<double>(lo));
    sample_point<double>(m, b + 1e-6, 2.3, std::span<double>(hi));
    for (int c = 0; c < 3; ++c) EXPECT_LT(std::abs(lo[c] - hi[c]), 1e-5);
  }
}

TEST(BilinearSample, GradientAgainstFiniteDifferences) {
  // 5x5x3 map, 7 interior coordinates, eps 1e-3.
  Rng rng(4);
  auto m = random_map<double>(rng, 5, 5, 3);
  std::vector<double> flat;
  for (int i = 0; i < 7; ++i) {
    flat.push_back(rng.uniform_int(0, 3) + rng.uniform(0.1, 0.9));
    flat.push_back(rng.uniform_int(0, 3) + rng.uniform(0.1, 0.9));
  }
  const auto up = random_map<double>(rng, 1, 7, 3);
  auto coords = [&] {
    std::vector<Coord2<double>> c;
    for (int i = 0; i < 7; ++i) c.push_back({flat[2 * i], flat[2 * i + 1]});
    return c;
  };
  const auto g = bilinear_sample_grad<double>(m, coords(), up);
  std::vector<double> gc;
  for (auto p : g.grad_coords) {
    gc.push_back(p.u);
    gc.push_back(p.v);
  }
  auto f = [&] {
    const auto out = bilinear_sample<double>(m, coords());
    return std::inner_product(out.values().begin(), out.values().end(), up.values().begin(), 0.0);
  };
  const auto r = finite_difference_check(f, {m.values(), std::span<double>(flat)},
                                         {g.grad_map.values(), std::span<const double>(gc)}, 1e-3);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.checked, 75u + 14u);
}

TEST(Linear, AppliesAffineMap) {
  LinearWeights<float> w(2, 3);
  w.matrix = {1, 2, 3, -1, 0, 1};
  w.bias = {0.5f, -0.5f};
  float x[3] = {1, 1, 2}, y[2];
  linear_vec<float>(w, std::span<const float>(x), std::span<float>(y));
  EXPECT_FLOAT_EQ(y[0], 9.5f);
  EXPECT_FLOAT_EQ(y[1], 0.5f);
  EXPECT_EQ(LinearWeights<float>::identity(3).matrix, (std::vector<float>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST(Linear, ShapeChecks) {
  EXPECT_THROW(linear_apply(FeatureMap(2, 2, 3), LinearWeights<float>(2, 4)), ShapeError);
  LinearWeights<float> bad(2, 2);
  bad.bias.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Softmax, SumsToOneAndPositive) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<float> logits(rng.uniform_int(1, 30));
    for (float& l : logits) l = static_cast<float>(20.0 * rng.normal());
    const auto p = softmax<float>(logits);
    double sum = 0.0;
    for (float v : p) {
      ASSERT_GE(v, 0.0f);
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, StableForLargeLogits) {
  const std::vector<double> logits{1000.0, 1000.0, -1000.0};
  const auto p = softmax<double>(logits);
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_NEAR(p[1], 0.5, 1e-12);
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> logits(6), w(6);
    for (auto& v : logits) v = 2 * rng.normal();
    for (auto& v : w) v = rng.normal();
    const auto p = softmax<double>(logits);
    const auto g = softmax_grad<double>(p, w);
    auto f = [&](std::span<const double> x) {
      const auto q = softmax<double>(x);
      return std::inner_product(q.begin(), q.end(), w.begin(), 0.0);
    };
    EXPECT_LT(finite_difference_check(f, logits, g, 1e-5).max_rel_error, 1e-4);
  }
}

TEST(Sigmoid, ValuesAndSymmetry) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  for (double x : {-50.0, -3.0, 0.7, 12.0, 800.0}) {
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-12);
    EXPECT_TRUE(std::isfinite(sigmoid(x)));
  }
}

TEST(Mlp, HandComputed) {
  MlpWeights<double> w{LinearWeights<double>(2, 2), LinearWeights<double>(1, 2)};
  w.first.matrix = {1, -1, 2, 1};
  w.first.bias = {0, -10};
  w.second.matrix = {3, 5};
  w.second.bias = {1};
  const std::vector<double> x{2, 1};
  MlpCache<double> cache;
  const auto y = mlp_apply<double>(w, x, &cache);
  // hidden pre = (1, -5) -> relu (1, 0) -> 3 * 1 + 1
  EXPECT_EQ(cache.hidden_pre, (std::vector<double>{1, -5}));
  EXPECT_DOUBLE_EQ(y[0], 4.0);
}

TEST(PatchLinear, CenterTapIsIdentity) {
  Rng rng(7);
  const auto m = random_map(rng, 4, 5, 2);
  LinearWeights<float> w(2, 9 * 2);
  // Center tap of a 3x3 patch is position 4 in (dy, dx) order.
  for (int c = 0; c < 2; ++c) w.at(c, 4 * 2 + c) = 1.0f;
  EXPECT_EQ(patch_linear(m, w, 3), m);
}

TEST(PatchLinear, MatchesConvolutionOracle) {
  Rng rng(8);
  const auto m = random_map<double>(rng, 5, 4, 3);
  const auto w = random_linear<double>(rng, 2, 27);
  const auto out = patch_linear(m, w, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 4; ++x)
      for (int o = 0; o < 2; ++o) {
        double acc = w.bias[o];
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            for (int c = 0; c < 3; ++c, ++k) {
              const int yy = y + dy, xx = x + dx;
              if (yy >= 0 && yy < 5 && xx >= 0 && xx < 4) acc += w.at(o, k) * m(yy, xx, c);
            }
        ASSERT_NEAR(out(y, x, o), acc, 1e-12);
      }
}

TEST(PatchLinear, RejectsBadShapes) {
  EXPECT_THROW(patch_linear(FeatureMap(3, 3, 2), LinearWeights<float>(1, 9), 3), ShapeError);
  EXPECT_THROW(patch_linear(FeatureMap(3, 3, 1), LinearWeights<float>(1, 4), 2), ShapeError);
}

TEST(Resample, PoolAndUpsample) {
  FeatureMap m(2, 2, 1);
  m.values()[0] = 1;
  m.values()[1] = 2;
  m.values()[2] = 3;
  m.values()[3] = 6;
  const auto p = avg_pool(m, 2);
  EXPECT_FLOAT_EQ(p(0, 0, 0), 3.0f);
  const auto u = upsample(p, 4);
  ASSERT_EQ(u.height(), 4);
  for (float v : u.values()) EXPECT_FLOAT_EQ(v, 3.0f);
  EXPECT_THROW(avg_pool(FeatureMap(3, 4, 1), 2), ShapeError);
}

TEST(Resample, UpsampleReproducesLinearRamps) {
  // Away from the clamped border, bilinear upsampling is exact for linear ramps.
  FeatureMap m(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) m(y, x, 0) = float(x);
  const auto u = upsample(m, 2);
  for (int x = 1; x < 7; ++x) EXPECT_NEAR(u(3, x, 0), (x + 0.5) / 2.0 - 0.5, 1e-6);
}

TEST(Channels, ConcatSplitRoundTrip) {
  Rng rng(9);
  const auto a = random_map(rng, 3, 2, 2), b = random_map(rng, 3, 2, 5);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.channels(), 7);
  const auto [x, y] = split_channels(c, 2);
  EXPECT_EQ(x, a);
  EXPECT_EQ(y, b);
  EXPECT_THROW(concat_channels(a, FeatureMap(2, 2, 1)), ShapeError);
}

TEST(Relu, ForwardAndGrad) {
  FeatureMap m(1, 3, 1);
  m.values()[0] = -1;
  m.values()[1] = 0;
  m.values()[2] = 2;
  const auto r = relu(m);
  EXPECT_EQ(r.values()[0], 0.0f);
  EXPECT_EQ(r.values()[2], 2.0f);
  const auto g = relu_grad(m, FeatureMap(1, 3, 1, 1.0f));
  EXPECT_EQ(g.values()[0], 0.0f);
  EXPECT_EQ(g.values()[1], 0.0f);
  EXPECT_EQ(g.values()[2], 1.0f);
}

TEST(FiniteDifference, ExactForLinearFunctions) {
  std::vector<double> x{0.3, -2.0, 7.0};
  const std::vector<double> g{3.0, 3.0, 3.0};
  auto f = [](std::span<const double> v) { return 3.0 * (v[0] + v[1] + v[2]); };
  for (double eps : {1e-1, 1e-3, 1e-6}) EXPECT_LT(finite_difference_check(f, x, g, eps).max_rel_error, 1e-8);
}

TEST(FiniteDifference, ConstantFunctionHasZeroError) {
  const std::vector<double> zeros(4, 0.0);
  auto f = [](std::span<const double>) { return 42.0; };
  const auto r = finite_difference_check(f, {1, 2, 3, 4}, zeros, 1e-3);
  EXPECT_EQ(r.max_rel_error, 0.0);
  EXPECT_EQ(r.checked, 4u);
}

TEST(FiniteDifference, DetectsWrongGradientAndRestoresInputs) {
  std::vector<double> x{1.0, 2.0};
  std::vector<double> wrong{2.0, 5.0};  // true gradient of x0^2 + x1^2 is (2, 4)
  std::vector<std::span<double>> params{std::span<double>(x)};
  auto f = [&] { return x[0] * x[0] + x[1] * x[1]; };
  const auto r = finite_difference_check(f, params, {std::span<const double>(wrong)}, 1e-4);
  EXPECT_NEAR(r.max_rel_error, 0.25, 1e-6);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_EQ(x, (std::vector<double>{1.0, 2.0}));
}
