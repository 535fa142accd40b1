#include "chiefray/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

namespace chiefray {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kBehindProjector: return "behind-projector";
    case ErrorCode::kDegenerateHomography: return "degenerate-homography";
    case ErrorCode::kStackMismatch: return "stack-mismatch";
    case ErrorCode::kMissingCode: return "missing-code";
    case ErrorCode::kEmptyField: return "empty-field";
    case ErrorCode::kOverlappingBlobs: return "overlapping-blobs";
    case ErrorCode::kOverClustered: return "over-clustered";
    case ErrorCode::kGridNotFound: return "grid-not-found";
    case ErrorCode::kNotAnEllipse: return "not-an-ellipse";
    case ErrorCode::kDegenerateCircle: return "degenerate-circle";
    case ErrorCode::kInsufficientView: return "insufficient-view";
    case ErrorCode::kClosedFormFailed: return "closed-form-failed";
    case ErrorCode::kLmFailed: return "lm-failed";
    case ErrorCode::kPnpDegenerate: return "pnp-degenerate";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kSchema: return "schema";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kStaleChecksum: return "stale-checksum";
  }
  return "unknown";
}

Mat3 Intrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Intrinsics Intrinsics::from_matrix(const Mat3& k) {
  const Mat3 n = k / k(2, 2);
  return {n(0, 0), n(1, 1), n(0, 2), n(1, 2)};
}

void Intrinsics::validate() const {
  if (!(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy)))
    throw Error(ErrorCode::kInvalidArgument, "intrinsics must be finite");
  if (!(fx > 0.0 && fy > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
}

Mat3 rodrigues(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Mat3 w;
    w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    return Mat3::Identity() + w;
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vec3 log_rotation(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

RigidPose RigidPose::from_axis_angle(const Vec3& omega, const Vec3& t) {
  return {rodrigues(omega), t};
}

RigidPose RigidPose::from_euler_deg(const Vec3& rxyz_deg, const Vec3& t) {
  const Vec3 r = rxyz_deg * (M_PI / 180.0);
  const Mat3 rot = (Eigen::AngleAxisd(r.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(r.y(), Vec3::UnitY()) *
                    Eigen::AngleAxisd(r.x(), Vec3::UnitX()))
                       .toRotationMatrix();
  return {rot, t};
}

RigidPose RigidPose::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -rt * translation};
}

RigidPose RigidPose::compose(const RigidPose& other) const {
  return RigidPose{rotation * other.rotation, rotation * other.translation + translation}.orthonormalized();
}

RigidPose RigidPose::orthonormalized() const { return {nearest_rotation(rotation), translation}; }

bool RigidPose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double orth = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  return orth <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Vec2 PlaneFrame::to_local(const Vec3& world) const {
  const Vec3 l = pose.rotation.transpose() * (world - pose.translation);
  return {l.x(), l.y()};
}

double PlaneFrame::intersect(const Vec3& o, const Vec3& d) const {
  const Vec3 n = normal();
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return -1.0;
  return n.dot(origin() - o) / denom;
}

PixelPoint project(const Intrinsics& k, const RigidPose& pose, const WorldPoint& p) {
  const Vec3 q = pose.apply(p);
  if (!(q.z() > 0.0))
    throw Error(ErrorCode::kBehindProjector, "point has non-positive depth " + std::to_string(q.z()));
  return {k.fx * q.x() / q.z() + k.cx, k.fy * q.y() / q.z() + k.cy};
}

Ray unproject_ray(const Intrinsics& k, const RigidPose& pose, const PixelPoint& px) {
  k.validate();
  const Vec3 d_local((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0);
  const Mat3 rt = pose.rotation.transpose();
  return {-rt * pose.translation, (rt * d_local).normalized()};
}

Vec2 Homography::apply(const Vec2& p) const {
  const Vec3 q = m * Vec3(p.x(), p.y(), 1.0);
  return {q.x() / q.z(), q.y() / q.z()};
}

Homography Homography::inverse() const { return normalized(m.inverse()); }

Homography Homography::normalized(const Mat3& m) {
  if (std::abs(m(2, 2)) > 1e-12) return {m / m(2, 2)};
  return {m / m.norm()};
}

Mat3 hartley_normalization(std::span<const Vec2> pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Mat3 t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

HomographyFit estimate_homography(std::span<const Vec2> plane, std::span<const Vec2> image) {
  if (plane.size() != image.size())
    throw Error(ErrorCode::kInvalidArgument, "homography inputs differ in length");
  const auto n = plane.size();
  if (n < 4) throw Error(ErrorCode::kDegenerateHomography, "need at least 4 pairs");

  const Mat3 ta = hartley_normalization(plane);
  const Mat3 tb = hartley_normalization(image);
  // Four pairs give 8 rows; a zero row keeps the SVD square.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(2 * static_cast<Eigen::Index>(n), 9), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x = ta * Vec3(plane[i].x(), plane[i].y(), 1.0);
    const Vec3 y = tb * Vec3(image[i].x(), image[i].y(), 1.0);
    const double u = y.x() / y.z();
    const double v = y.y() / y.z();
    const auto r = 2 * static_cast<Eigen::Index>(i);
    a.row(r) << -x.x(), -x.y(), -x.z(), 0, 0, 0, u * x.x(), u * x.y(), u * x.z();
    a.row(r + 1) << 0, 0, 0, -x.x(), -x.y(), -x.z(), v * x.x(), v * x.y(), v * x.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A rank-8 system has one zero singular value; a second one means the null space
  // is not unique.
  if (sv.size() < 9 || sv(7) <= 1e-10 * sv(0))
    throw Error(ErrorCode::kDegenerateHomography, "design matrix is rank deficient");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Mat3 hm = tb.inverse() * hn * ta;
  if (std::abs(hm.determinant()) < 1e-300 || !hm.allFinite())
    throw Error(ErrorCode::kDegenerateHomography, "singular homography");

  HomographyFit fit{Homography::normalized(hm), 0.0};
  const Homography inv = fit.h.inverse();
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err += 0.5 * ((fit.h.apply(plane[i]) - image[i]).norm() + (inv.apply(image[i]) - plane[i]).norm());
  }
  fit.transfer_error = err / static_cast<double>(n);
  return fit;
}

}  // namespace chiefray
