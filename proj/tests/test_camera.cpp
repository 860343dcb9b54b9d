#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "geoquery/camera.hpp"
#include "geoquery/error.hpp"
#include "geoquery/random.hpp"

using namespace geoquery;

namespace {

CameraIntrinsics make_K(double fx, double fy, double cx, double cy, int w = 320, int h = 240) {
  return {fx, fy, cx, cy, w, h};
}

CameraPose random_pose(Rng& rng) {
  const Eigen::Vector3d axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
  CameraPose p;
  p.rotation = Eigen::AngleAxisd(rng.uniform(-3.0, 3.0), axis).toRotationMatrix();
  p.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  return p;
}

}  // namespace

TEST(Unproject, PrincipalPointIsOpticalAxis) {
  const auto K = make_K(123.0, 77.0, 150.5, 99.25);
  const Point3 p = unproject({K.cx, K.cy}, 2.0, K);
  EXPECT_EQ(p, Point3(0, 0, 2.0));
}

TEST(Unproject, UnitSlopeRay) {
  const auto K = make_K(200.0, 200.0, 160.0, 120.0);
  const Point3 p = unproject({K.cx + K.fx, K.cy}, 1.0, K);
  EXPECT_NEAR(p.x(), 1.0, 1e-12);
  EXPECT_NEAR(p.y(), 0.0, 1e-12);
  EXPECT_NEAR(p.z(), 1.0, 1e-12);
}

TEST(Unproject, HandEvaluatedExample) {
  const auto K = make_K(200.0, 200.0, 160.0, 120.0);
  const Point3 p = unproject({100.0, 50.0}, 3.0, K);
  // (100 - 160) * 3 / 200 = -0.9, (50 - 120) * 3 / 200 = -1.05
  EXPECT_NEAR(p.x(), -0.9, 1e-12);
  EXPECT_NEAR(p.y(), -1.05, 1e-12);
  EXPECT_NEAR(p.z(), 3.0, 1e-12);
}

TEST(Unproject, RejectsInvalidDepth) {
  const auto K = make_K(100, 100, 50, 50);
  EXPECT_THROW(unproject({1, 1}, 0.0, K), InvalidDepthError);
  EXPECT_THROW(unproject({1, 1}, -1.0, K), InvalidDepthError);
  EXPECT_THROW(unproject({1, 1}, std::nan(""), K), InvalidDepthError);
  EXPECT_THROW(unproject({1, 1}, INFINITY, K), InvalidDepthError);
}

TEST(Project, OpticalAxisPoint) {
  const auto K = make_K(90, 80, 31.5, 20.5);
  const auto pr = project({0, 0, 2}, K);
  EXPECT_EQ(pr.pixel.u, K.cx);
  EXPECT_EQ(pr.pixel.v, K.cy);
  EXPECT_EQ(pr.depth, 2.0);
}

TEST(Project, ClosedFormExample) {
  const auto K = make_K(100, 100, 50, 50);
  const auto pr = project({1, 2, 4}, K);
  EXPECT_NEAR(pr.pixel.u, 75.0, 1e-12);
  EXPECT_NEAR(pr.pixel.v, 100.0, 1e-12);
  EXPECT_NEAR(pr.depth, 4.0, 1e-12);
}

TEST(Project, BehindCameraThrows) {
  const auto K = make_K(100, 100, 50, 50);
  EXPECT_THROW(project({0, 0, 0}, K), BehindCameraError);
  EXPECT_THROW(project({1, 1, -2}, K), BehindCameraError);
}

TEST(Project, RoundTripExample) {
  const auto K = make_K(211.0, 187.0, 160.0, 120.0);
  const auto pr = project(unproject({37.5, 81.25}, 4.2, K), K);
  EXPECT_NEAR(pr.pixel.u, 37.5, 1e-9);
  EXPECT_NEAR(pr.pixel.v, 81.25, 1e-9);
  EXPECT_NEAR(pr.depth, 4.2, 1e-9);
}

TEST(Project, RoundTripProperty) {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const auto K = make_K(rng.uniform(10, 1000), rng.uniform(10, 1000), rng.uniform(0, 319), rng.uniform(0, 239));
    const Pixel2 u{rng.uniform(-50, 370), rng.uniform(-50, 290)};
    const double d = rng.uniform(0.01, 100.0);
    const auto pr = project(unproject(u, d, K), K);
    ASSERT_NEAR(pr.pixel.u, u.u, 1e-9);
    ASSERT_NEAR(pr.pixel.v, u.v, 1e-9);
    ASSERT_NEAR(pr.depth, d, 1e-9);
  }
}

TEST(Intrinsics, Validation) {
  EXPECT_NO_THROW(make_K(1, 1, 0, 0).validate());
  EXPECT_THROW(make_K(0, 1, 0, 0).validate(), ParameterError);
  EXPECT_THROW(make_K(1, -1, 0, 0).validate(), ParameterError);
  EXPECT_THROW(make_K(1, 1, 320, 0).validate(), ParameterError);
  EXPECT_THROW(make_K(1, 1, 0, -0.5).validate(), ParameterError);
}

TEST(Pose, Validation) {
  CameraPose p;
  EXPECT_NO_THROW(p.validate());
  p.rotation(0, 0) = -1;  // reflection
  EXPECT_THROW(p.validate(), ParameterError);
  CameraPose q;
  q.rotation *= 1.001;
  EXPECT_THROW(q.validate(), ParameterError);
}

TEST(Pose, MatrixRoundTrip) {
  Rng rng(3);
  const CameraPose p = random_pose(rng);
  const CameraPose q = CameraPose::from_matrix(p.matrix());
  EXPECT_EQ(p.rotation, q.rotation);
  EXPECT_EQ(p.translation, q.translation);
}

TEST(RelativeTransform, IdenticalPosesGiveIdentity) {
  Rng rng(11);
  const CameraPose p = random_pose(rng);
  const CameraPose r = relative_transform(p, p);
  EXPECT_LT((r.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(r.translation.norm(), 1e-12);
}

TEST(RelativeTransform, IdentityReferenceGivesTarget) {
  Rng rng(12);
  const CameraPose t = random_pose(rng);
  const CameraPose r = relative_transform(CameraPose::identity(), t);
  EXPECT_LT((r.matrix() - t.matrix()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RelativeTransform, ComposingWithReferenceReproducesTarget) {
  Rng rng(13);
  for (int i = 0; i < 50; ++i) {
    const CameraPose a = random_pose(rng), b = random_pose(rng);
    // Matrix-product oracle: T_t = (T_t T_r^-1) T_r.
    const Eigen::Matrix4d rel = b.matrix() * a.matrix().inverse();
    const CameraPose r = relative_transform(a, b);
    ASSERT_LT((r.matrix() - rel).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_LT((r.compose(a).matrix() - b.matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Reproject, IdenticalCamerasAreIdentity) {
  Rng rng(5);
  const auto K = make_K(150, 160, 100, 80);
  const CameraPose T = random_pose(rng);
  for (int i = 0; i < 100; ++i) {
    const Pixel2 u{rng.uniform(0, 320), rng.uniform(0, 240)};
    const double d = rng.uniform(0.5, 20);
    const auto pr = reproject(u, d, K, K, T, T);
    ASSERT_TRUE(pr.has_value());
    ASSERT_NEAR(pr->pixel.u, u.u, 1e-9);
    ASSERT_NEAR(pr->pixel.v, u.v, 1e-9);
    ASSERT_NEAR(pr->depth, d, 1e-9);
  }
}

TEST(Reproject, PureBaselineDisparity) {
  const double f = 64.0, b = 0.4;
  const auto K = make_K(f, f, 31.5, 31.5, 64, 64);
  CameraPose tgt;
  tgt.translation = Eigen::Vector3d(-b, 0, 0);  // camera centre at +b
  for (double d : {1.0, 2.5, 4.0, 9.0}) {
    const auto pr = reproject({20.25, 13.5}, d, K, K, CameraPose::identity(), tgt);
    ASSERT_TRUE(pr.has_value());
    EXPECT_NEAR(pr->pixel.u, 20.25 - f * b / d, 1e-9);
    EXPECT_NEAR(pr->pixel.v, 13.5, 1e-12);
    EXPECT_NEAR(pr->depth, d, 1e-12);
  }
}

TEST(Reproject, BehindTargetIsInvisible) {
  const auto K = make_K(100, 100, 50, 50);
  CameraPose tgt;
  tgt.translation = Eigen::Vector3d(0, 0, -5.0);  // target camera 5 m ahead on the axis
  EXPECT_FALSE(reproject({50, 50}, 2.0, K, K, CameraPose::identity(), tgt).has_value());
  EXPECT_TRUE(reproject({50, 50}, 7.0, K, K, CameraPose::identity(), tgt).has_value());
}

TEST(Reproject, InvalidDepthPropagates) {
  const auto K = make_K(100, 100, 50, 50);
  EXPECT_THROW(reproject({1, 1}, 0.0, K, K, CameraPose::identity(), CameraPose::identity()), InvalidDepthError);
}

TEST(Reproject, RigidConsistency) {
  // Points recovered from corresponding pixels in both frames agree after the relative transform.
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto Kr = make_K(rng.uniform(50, 300), rng.uniform(50, 300), rng.uniform(0, 319), rng.uniform(0, 239));
    const auto Kt = make_K(rng.uniform(50, 300), rng.uniform(50, 300), rng.uniform(0, 319), rng.uniform(0, 239));
    const CameraPose Tr = random_pose(rng), Tt = random_pose(rng);
    const Pixel2 u{rng.uniform(0, 320), rng.uniform(0, 240)};
    const double d = rng.uniform(0.5, 10);
    const auto pr = reproject(u, d, Kr, Kt, Tr, Tt);
    if (!pr) continue;
    const Point3 xr = unproject(u, d, Kr);
    const Point3 xt = unproject(pr->pixel, pr->depth, Kt);
    ASSERT_LT((relative_transform(Tr, Tt).apply(xr) - xt).norm(), 1e-9);
  }
}
