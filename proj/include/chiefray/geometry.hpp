#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "chiefray/error.hpp"

namespace chiefray {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// World coordinates in millimetres.
using WorldPoint = Vec3;

// Projector image coordinates. Pixel centres sit on integer coordinates.
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;

  Vec2 vec() const { return {u, v}; }
  static PixelPoint from(const Vec2& p) { return {p.x(), p.y()}; }
  bool on_device(int width, int height) const {
    return u >= 0.0 && v >= 0.0 && u < width && v < height;
  }
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  Mat3 matrix() const;
  static Intrinsics from_matrix(const Mat3& k);
  // Throws kInvalidArgument unless fx, fy > 0 and everything is finite.
  void validate() const;
};

// Maps points of a source frame into a target frame: x' = R x + t.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return {}; }
  static RigidPose from_axis_angle(const Vec3& omega, const Vec3& t);
  // Rz(rz) * Ry(ry) * Rx(rx), angles in degrees.
  static RigidPose from_euler_deg(const Vec3& rxyz_deg, const Vec3& t);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidPose inverse() const;
  // (this * other)(x) = this(other(x)); result is re-orthonormalized.
  RigidPose compose(const RigidPose& other) const;
  RigidPose orthonormalized() const;
  bool is_valid(double tol = 1e-9) const;
};

// Nearest rotation in the Frobenius sense (polar decomposition through SVD).
Mat3 nearest_rotation(const Mat3& m);
Mat3 rodrigues(const Vec3& omega);
Vec3 log_rotation(const Mat3& r);

// A finite plane whose local (x, y, 0) coordinates are centred on the plane.
struct PlaneFrame {
  RigidPose pose;  // plane-local -> world
  double width = 0.0;
  double height = 0.0;

  Vec3 origin() const { return pose.translation; }
  Vec3 normal() const { return pose.rotation.col(2); }
  Vec3 to_world(const Vec2& local) const { return pose.apply(Vec3(local.x(), local.y(), 0.0)); }
  // Drops the out-of-plane component.
  Vec2 to_local(const Vec3& world) const;
  bool contains(const Vec2& local) const {
    return std::abs(local.x()) <= 0.5 * width && std::abs(local.y()) <= 0.5 * height;
  }
  // Ray parameter of the intersection, or a negative value when the ray is parallel
  // or the plane is behind the origin.
  double intersect(const Vec3& origin, const Vec3& direction) const;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

PixelPoint project(const Intrinsics& k, const RigidPose& pose, const WorldPoint& p);
Ray unproject_ray(const Intrinsics& k, const RigidPose& pose, const PixelPoint& px);

struct Homography {
  Mat3 m = Mat3::Identity();

  Vec2 apply(const Vec2& p) const;
  Homography inverse() const;
  // Bottom-right entry 1, or Frobenius-normalized when that entry is ~0.
  static Homography normalized(const Mat3& m);
};

struct HomographyFit {
  Homography h;
  double transfer_error = 0.0;  // mean symmetric transfer error over the inputs
};

// Normalized DLT from plane-local points to pixels. Needs >= 4 pairs.
HomographyFit estimate_homography(std::span<const Vec2> plane, std::span<const Vec2> image);

// Similarity that centres points and scales their mean distance to sqrt(2).
Mat3 hartley_normalization(std::span<const Vec2> pts);

}  // namespace chiefray
