#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "chiefray/geometry.hpp"

using namespace chiefray;

namespace {

RigidPose random_pose(std::mt19937& rng) {
  std::uniform_real_distribution<double> a(-0.5, 0.5), t(-50.0, 50.0);
  return RigidPose::from_axis_angle(Vec3(a(rng), a(rng), a(rng)), Vec3(t(rng), t(rng), 500.0 + t(rng)));
}

Intrinsics random_k(std::mt19937& rng) {
  std::uniform_real_distribution<double> f(500.0, 3000.0), c(-200.0, 1000.0);
  return {f(rng), f(rng), c(rng), c(rng)};
}

}  // namespace

TEST(Project, PrincipalRay) {
  const PixelPoint p = project({1, 1, 0, 0}, RigidPose::identity(), Vec3(0, 0, 1));
  EXPECT_DOUBLE_EQ(p.u, 0.0);
  EXPECT_DOUBLE_EQ(p.v, 0.0);
}

TEST(Project, DirectSubstitution) {
  const PixelPoint p = project({2, 2, 10, 20}, RigidPose::identity(), Vec3(1, 1, 2));
  EXPECT_DOUBLE_EQ(p.u, 11.0);
  EXPECT_DOUBLE_EQ(p.v, 21.0);
}

TEST(Project, BehindProjectorThrows) {
  try {
    project({1, 1, 0, 0}, RigidPose::identity(), Vec3(0, 0, -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBehindProjector);
  }
}

TEST(Project, RoundTripThroughUnproject) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> x(-100.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    const Intrinsics k = random_k(rng);
    const RigidPose pose = random_pose(rng);
    const Vec3 p = pose.inverse().apply(Vec3(x(rng), x(rng), 300.0 + std::abs(x(rng))));
    const Ray r = unproject_ray(k, pose, project(k, pose, p));
    const Vec3 to_p = p - r.origin;
    EXPECT_LT((to_p - to_p.dot(r.direction) * r.direction).norm(), 1e-9 * to_p.norm());
    EXPECT_GT(to_p.dot(r.direction), 0.0);
  }
}

TEST(Unproject, PrincipalAxis) {
  const Intrinsics k{800, 820, 320, 240};
  const Ray r = unproject_ray(k, RigidPose::identity(), {320, 240});
  EXPECT_NEAR((r.direction - Vec3::UnitZ()).norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.origin.norm(), 0.0, 1e-15);
}

TEST(Unproject, UnitTangent) {
  const Intrinsics k{800, 820, 320, 240};
  const Ray r = unproject_ray(k, RigidPose::identity(), {320 + 800, 240});
  EXPECT_NEAR((r.direction - Vec3(1, 0, 1).normalized()).norm(), 0.0, 1e-15);
}

TEST(Unproject, ConsistentWithProject) {
  std::mt19937 rng(2);
  const Intrinsics k{1500, 1480, 400, 700};
  const RigidPose pose = random_pose(rng);
  std::uniform_real_distribution<double> u(0, 800), v(0, 600), depth(100, 2000);
  for (int i = 0; i < 1000; ++i) {
    const PixelPoint px{u(rng), v(rng)};
    const Ray r = unproject_ray(k, pose, px);
    const PixelPoint back = project(k, pose, r.origin + depth(rng) * r.direction);
    EXPECT_NEAR(back.u, px.u, 1e-8);
    EXPECT_NEAR(back.v, px.v, 1e-8);
  }
}

TEST(Intrinsics, RejectsNonPositiveFocal) {
  EXPECT_THROW((Intrinsics{0, 1, 0, 0}.validate()), Error);
  EXPECT_THROW((Intrinsics{1, -1, 0, 0}.validate()), Error);
  EXPECT_NO_THROW((Intrinsics{1, 1, -5000, 1e4}.validate()));
}

TEST(Intrinsics, MatrixRoundTrip) {
  const Intrinsics k{1200, 1210, 300.5, 700.25};
  const Intrinsics back = Intrinsics::from_matrix(3.0 * k.matrix());
  EXPECT_DOUBLE_EQ(back.fx, k.fx);
  EXPECT_DOUBLE_EQ(back.cy, k.cy);
}

TEST(RigidPose, ComposeInverseIsIdentity) {
  std::mt19937 rng(3);
  for (int i = 0; i < 100; ++i) {
    const RigidPose p = random_pose(rng);
    const RigidPose id = p.compose(p.inverse());
    EXPECT_TRUE(id.is_valid());
    EXPECT_LT((id.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_LT(id.translation.norm(), 1e-9);
  }
}

TEST(RigidPose, OrthonormalityInvariant) {
  std::mt19937 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Mat3 m;
    for (int j = 0; j < 9; ++j) m(j / 3, j % 3) = n(rng);
    const Mat3 r = nearest_rotation(m);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
  }
}

TEST(RigidPose, EulerOrder) {
  const RigidPose p = RigidPose::from_euler_deg(Vec3(0, 0, 90), Vec3::Zero());
  EXPECT_LT((p.apply(Vec3::UnitX()) - Vec3::UnitY()).norm(), 1e-12);
}

TEST(Rotation, LogInvertsRodrigues) {
  const Vec3 w(0.3, -0.2, 0.7);
  EXPECT_LT((log_rotation(rodrigues(w)) - w).norm(), 1e-12);
}

TEST(PlaneFrame, LocalPointsLieOnPlane) {
  PlaneFrame f{RigidPose::from_euler_deg(Vec3(30, 10, 0), Vec3(1, 2, 300)), 100, 50};
  const Vec3 w = f.to_world(Vec2(12.5, -7.0));
  EXPECT_NEAR(f.normal().dot(w - f.origin()), 0.0, 1e-12);
  EXPECT_LT((f.to_local(w) - Vec2(12.5, -7.0)).norm(), 1e-12);
  const double t = f.intersect(Vec3::Zero(), w.normalized());
  EXPECT_NEAR(t, w.norm(), 1e-9);
}

TEST(Homography, UnitSquareIdentity) {
  const std::vector<Vec2> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const HomographyFit fit = estimate_homography(sq, sq);
  EXPECT_LT((fit.h.m - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_DOUBLE_EQ(fit.h.m(2, 2), 1.0);
}

TEST(Homography, KnownSimilarity) {
  Mat3 s;
  const double c = 2.0 * std::cos(0.4), si = 2.0 * std::sin(0.4);
  s << c, -si, 5.0, si, c, -3.0, 0, 0, 1;
  const std::vector<Vec2> a{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  std::vector<Vec2> b;
  for (const auto& p : a) b.push_back(Homography{s}.apply(p));
  const HomographyFit fit = estimate_homography(a, b);
  EXPECT_LT((fit.h.m - s).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Homography, NoisyPairsBelowNoise) {
  std::mt19937 rng(5);
  Mat3 h;
  h << 1.2, 0.1, 30, -0.05, 0.9, 12, 1e-4, -2e-4, 1;
  std::uniform_real_distribution<double> x(0, 500);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<Vec2> a, b, clean;
  for (int i = 0; i < 100; ++i) {
    a.emplace_back(x(rng), x(rng));
    clean.push_back(Homography{h}.apply(a.back()));
    b.push_back(clean.back() + Vec2(noise(rng), noise(rng)));
  }
  const HomographyFit fit = estimate_homography(a, b);
  double err = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) err += (fit.h.apply(a[i]) - clean[i]).norm();
  EXPECT_LT(err / 100.0, 0.5);
}

TEST(Homography, TooFewPairs) {
  const std::vector<Vec2> a{{0, 0}, {1, 0}, {1, 1}};
  try {
    estimate_homography(a, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateHomography);
  }
}

TEST(Homography, NormalizationRule) {
  Mat3 m = Mat3::Identity();
  m(2, 2) = 4.0;
  EXPECT_DOUBLE_EQ(Homography::normalized(m).m(2, 2), 1.0);
  m(2, 2) = 0.0;
  m(2, 0) = 1.0;
  EXPECT_NEAR(Homography::normalized(m).m.norm(), 1.0, 1e-15);
}

TEST(ErrorCode, StableNames) {
  EXPECT_EQ(error_code_name(ErrorCode::kBehindProjector), "behind-projector");
  EXPECT_EQ(error_code_name(ErrorCode::kStaleChecksum), "stale-checksum");
}
