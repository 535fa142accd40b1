#pragma once

#include <span>
#include <string>
#include <vector>

#include "chiefray/chief.hpp"
#include "chiefray/geometry.hpp"

namespace chiefray {

// Plane 0 is the scanner, plane 1 + m is mask m.
inline constexpr int kScannerPlane = 0;
std::string plane_name(int plane);

struct CorrespondenceSet {
  int pinhole_id = 0;
  int mask_id = 0;
  Vec2 mask_point = Vec2::Zero();     // h_m on its mask plane, mm
  Vec2 scanner_point = Vec2::Zero();  // s(p_c) on the scanner plane, mm
  PixelPoint chief_pixel;             // p_c
};

struct PlanarView {
  int plane = kScannerPlane;
  std::vector<Vec2> object;  // plane-local mm, z = 0
  std::vector<PixelPoint> image;
  std::vector<int> set_index;  // owning correspondence set of each pair
};

struct ViewBundle {
  std::vector<PlanarView> views;
  std::vector<CorrespondenceSet> sets;
};

// Views over the scanner and each mask from the ok-status samples. Throws
// kInsufficientView when a view has fewer than 4 pairs.
ViewBundle build_views(std::span<const ChiefRaySample> samples, int mask_count);
// Views restricted to the sets whose `keep` flag is set.
std::vector<PlanarView> views_from_sets(std::span<const CorrespondenceSet> sets, std::span<const char> keep,
                                        int mask_count);

struct ClosedForm {
  Intrinsics k;
  std::vector<RigidPose> poses;  // plane-local -> projector, one per view
};

// Zero-skew closed form from the plane homographies. Throws kClosedFormFailed on
// degenerate (e.g. parallel) views or a conic image that is not positive definite.
ClosedForm zhang_closed_form(std::span<const PlanarView> views);

struct LmResult {
  Intrinsics k;
  std::vector<RigidPose> poses;
  double initial_cost = 0.0;  // sum of squared residuals, px^2
  double cost = 0.0;
  double mrpe = 0.0;
  int iterations = 0;  // accepted steps
  std::vector<double> cost_history;  // initial cost, then the cost after each accepted step
};

struct LmOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-12;
};

// Joint refinement of fx, fy, cx, cy and the view poses. Throws kLmFailed.
LmResult refine_lm(const Intrinsics& k, std::span<const RigidPose> poses, std::span<const PlanarView> views,
                   const LmOptions& options = {});

enum class ErrorSpace { kProjector, kScanner };

struct ReprojectionErrors {
  std::vector<double> errors;  // view order, pair order within a view
  double mean = 0.0;
};

// kProjector: |p_c - project(object)| over every view, px.
// kScanner: distance on the scanner plane between s and the intersection of the
// ray of p_c with the estimated scanner plane, over the scanner view only, in scan px.
ReprojectionErrors reprojection_errors(const Intrinsics& k, std::span<const RigidPose> poses,
                                       std::span<const PlanarView> views, ErrorSpace space,
                                       double scan_px_per_mm = 1.0);

// Scanner-plane error of one correspondence set under a scanner pose, mm.
double scanner_error(const Intrinsics& k, const RigidPose& scanner_pose, const CorrespondenceSet& set);

struct RobustOptions {
  double max_exclusion_fraction = 0.10;
  bool stop_at_first_rise = true;
  double scan_px_per_mm = 200.0 / 25.4;
};

struct CalibrationResult {
  Intrinsics k;
  std::vector<int> planes;  // plane id of each pose
  std::vector<RigidPose> poses;
  double mrpe_projector = 0.0;  // px, remaining sets, all views
  double mrpe_scanner = 0.0;    // scan px, remaining sets
  std::vector<int> excluded;    // set indices in exclusion order, length n
  std::vector<double> error_curve;  // e_0 .. e_k in scan px
  int sets_total = 0;
  std::vector<std::string> warnings;
};

// Exclude the worst set, recalibrate, and keep the parameters at the first local
// minimum of the mean scanner-plane error (evaluated over all sets) within the cap.
CalibrationResult robust_calibrate(std::span<const CorrespondenceSet> sets, int mask_count,
                                   const RobustOptions& options = {});

struct PoseEstimate {
  RigidPose pose;  // target frame -> projector
  double rms = 0.0;
};

// Planar PnP: homography decomposition on the best-fit plane, then LM over the
// pose. Throws kPnpDegenerate for fewer than 4 points or degenerate layouts.
PoseEstimate solve_pnp(std::span<const Vec3> object, std::span<const PixelPoint> image, const Intrinsics& k);

// Dots projected at the pixels predicted by (k, pose) land through the physical
// projector (true_k, true_pose) on the plane through the corners; returns their
// distances to the corners, mm.
std::vector<double> evaluate_projection(const Intrinsics& k, const PoseEstimate& pose, const Intrinsics& true_k,
                                        const RigidPose& true_pose, std::span<const Vec3> corners);

}  // namespace chiefray
