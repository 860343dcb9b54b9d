#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "geoquery/error.hpp"
#include "geoquery/gradcheck.hpp"
#include "geoquery/losses.hpp"
#include "test_util.hpp"

using namespace geoquery;
using gqtest::random_map;

namespace {

FeatureMap64 random_image(Rng& rng, int h, int w) {
  FeatureMap64 m(h, w, 3);
  for (double& v : m.values()) v = rng.uniform();
  return m;
}

}  // namespace

TEST(ReconLoss, HandExample) {
  FeatureMap64 a(1, 2, 1), b(1, 2, 1);
  a(0, 0, 0) = 1.0;
  a(0, 1, 0) = 0.5;
  b(0, 1, 0) = 0.25;
  const auto l = recon_loss(a, b);
  EXPECT_DOUBLE_EQ(l.value, (1.0 + 0.0625) / 2);
  EXPECT_DOUBLE_EQ(l.grad(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(l.grad(0, 1, 0), 0.25);
}

TEST(ReconLoss, GradientIsScaledResidual) {
  Rng rng(1);
  const auto p = random_image(rng, 4, 5), g = random_image(rng, 4, 5);
  const auto l = recon_loss(p, g);
  for (std::size_t i = 0; i < p.size(); ++i)
    EXPECT_NEAR(l.grad.values()[i], 2.0 * (p.values()[i] - g.values()[i]) / double(p.size()), 1e-15);
  EXPECT_THROW(recon_loss(p, random_image(rng, 4, 4)), ShapeError);
}

TEST(GramMatrix, ConstantSingleChannel) {
  FeatureMap64 m(3, 4, 1, 0.7);
  const auto g = gram_matrix(m);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0], 0.49, 1e-15);
}

TEST(GramMatrix, OrthogonalChannels) {
  FeatureMap64 m(2, 2, 2);
  m(0, 0, 0) = 1;
  m(0, 1, 1) = 2;
  m(1, 0, 0) = -3;
  m(1, 1, 1) = 0.5;
  const auto g = gram_matrix(m);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_NEAR(g[0], 10.0 / 4, 1e-15);
  EXPECT_NEAR(g[3], 4.25 / 4, 1e-15);
}

TEST(GramMatrix, MatchesDoubleLoop) {
  Rng rng(2);
  const auto m = random_map<double>(rng, 3, 3, 2);
  const auto g = gram_matrix(m);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) s += m(y, x, i) * m(y, x, j);
      EXPECT_NEAR(g[i * 2 + j], s / 9, 1e-6);
    }
}

TEST(GramMatrix, SymmetricPositiveSemidefinite) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const int d = rng.uniform_int(1, 6);
    const auto g = gram_matrix(random_map<double>(rng, 5, 4, d));
    Eigen::MatrixXd G(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) G(i, j) = g[i * d + j];
    EXPECT_LT((G - G.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G).eigenvalues().minCoeff(), -1e-6);
  }
}

TEST(GramLoss, ZeroCases) {
  Rng rng(4);
  const auto ex = FeatureExtractor<double>::make(9);
  const auto p = random_image(rng, 8, 8), g = random_image(rng, 8, 8);
  EXPECT_EQ(gram_loss(p, p, ex, {1.0, 1.0}).value, 0.0);
  EXPECT_EQ(gram_loss(p, g, ex, {0.0, 0.0}).value, 0.0);
  EXPECT_GT(gram_loss(p, g, ex, {1.0, 1.0}).value, 0.0);
  EXPECT_THROW(gram_loss(p, random_image(rng, 8, 6), ex, {1.0, 1.0}), ShapeError);
}

TEST(GramLoss, GradientThroughExtractor) {
  Rng rng(5);
  const auto ex = FeatureExtractor<double>::make(10);
  auto p = random_image(rng, 6, 6);
  const auto g = random_image(rng, 6, 6);
  const auto analytic = gram_loss(p, g, ex, {1.0, 0.7}).grad;
  const auto r = finite_difference_check(
      [&] { return gram_loss(p, g, ex, {1.0, 0.7}).value; }, {std::span<double>(p.values())},
      {std::span<const double>(analytic.values())}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(PerceptualLoss, ZeroAtEqualityAndGradient) {
  Rng rng(6);
  const auto ex = FeatureExtractor<double>::make(11);
  auto p = random_image(rng, 6, 6);
  const auto g = random_image(rng, 6, 6);
  EXPECT_EQ(perceptual_loss(g, g, ex).value, 0.0);
  const auto analytic = perceptual_loss(p, g, ex).grad;
  const auto r = finite_difference_check([&] { return perceptual_loss(p, g, ex).value; },
                                         {std::span<double>(p.values())}, {std::span<const double>(analytic.values())}, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TotalLoss, WeightedSumStructure) {
  Rng rng(7);
  const auto ex = FeatureExtractor<double>::make(12);
  const auto p = random_image(rng, 8, 8), g = random_image(rng, 8, 8);

  LossWeights zero{0.0, 0.0, 0.0};
  EXPECT_EQ(total_loss(p, g, zero, ex).total, 0.0);

  LossWeights recon_only{1.0, 0.0, 0.0};
  EXPECT_EQ(total_loss(p, g, recon_only, ex).total, recon_loss(p, g).value);

  LossWeights w;
  LossWeights w2{2 * w.recon, 2 * w.lpips, 2 * w.gram, w.beta};
  const auto a = total_loss(p, g, w, ex), b = total_loss(p, g, w2, ex);
  EXPECT_NEAR(b.total, 2 * a.total, 1e-12);
  EXPECT_NEAR(a.total, w.recon * a.recon + w.lpips * a.lpips + w.gram * a.gram, 1e-12);
  EXPECT_NEAR(b.recon, a.recon, 1e-15);
}

TEST(TotalLoss, NonNegativeAndZeroAtEquality) {
  Rng rng(8);
  const auto ex = FeatureExtractor<double>::make(13);
  for (int t = 0; t < 10; ++t) {
    const auto p = random_image(rng, 8, 8), g = random_image(rng, 8, 8);
    EXPECT_GE(total_loss(p, g, LossWeights{}, ex).total, 0.0);
    EXPECT_EQ(total_loss(g, g, LossWeights{}, ex).total, 0.0);
  }
}

TEST(LossWeights, Validation) {
  LossWeights w;
  EXPECT_NO_THROW(w.validate());
  w.gram = -1;
  EXPECT_THROW(w.validate(), ParameterError);
  LossWeights b;
  b.beta = {1.0, -0.5};
  EXPECT_THROW(b.validate(), ParameterError);
}
