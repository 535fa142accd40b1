#include "chiefray/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

#include <Eigen/Dense>

namespace chiefray {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Vec3 camera_point(const RigidPose& pose, const Vec2& object) {
  return pose.rotation * Vec3(object.x(), object.y(), 0.0) + pose.translation;
}

// Residual (measured - projected) and its derivatives for one point. Columns of
// `dpose` follow (omega, t) of a left perturbation of the pose.
bool residual(const Intrinsics& k, const RigidPose& pose, const Vec3& object, const PixelPoint& image, Vec2& r,
              Eigen::Matrix<double, 2, 4>* dk, Eigen::Matrix<double, 2, 6>* dpose) {
  const Vec3 q = pose.rotation * object + pose.translation;
  if (!(q.z() > 0.0)) return false;
  const double iz = 1.0 / q.z();
  const double x = q.x() * iz, y = q.y() * iz;
  r = Vec2(image.u - (k.fx * x + k.cx), image.v - (k.fy * y + k.cy));
  if (dk) {
    // Derivatives of the projection; the residual carries the opposite sign.
    *dk << x, 0.0, 1.0, 0.0, 0.0, y, 0.0, 1.0;
    *dk = -*dk;
  }
  if (dpose) {
    Eigen::Matrix<double, 2, 3> dq;
    dq << k.fx * iz, 0.0, -k.fx * x * iz, 0.0, k.fy * iz, -k.fy * y * iz;
    const Vec3 rp = pose.rotation * object;
    Mat3 skew;
    skew << 0.0, -rp.z(), rp.y(), rp.z(), 0.0, -rp.x(), -rp.y(), rp.x(), 0.0;
    dpose->leftCols<3>() = dq * skew;  // d(exp(w) R p)/dw = -[Rp]x, negated again for the residual
    dpose->rightCols<3>() = -dq;
  }
  return true;
}

RigidPose perturb(const RigidPose& pose, const Eigen::Ref<const Vec>& delta) {
  RigidPose out;
  out.rotation = nearest_rotation(rodrigues(delta.head<3>()) * pose.rotation);
  out.translation = pose.translation + delta.tail<3>();
  return out;
}

// Pose of a plane from its homography into normalized image coordinates.
RigidPose pose_from_homography(const Mat3& a) {
  const double n1 = a.col(0).norm(), n2 = a.col(1).norm();
  if (!(n1 > 0.0 && n2 > 0.0)) throw Error(ErrorCode::kClosedFormFailed, "homography has a null column");
  double lambda = 2.0 / (n1 + n2);
  if (a(2, 2) * lambda < 0.0) lambda = -lambda;
  const Vec3 r1 = lambda * a.col(0), r2 = lambda * a.col(1);
  Mat3 r;
  r << r1, r2, r1.cross(r2);
  RigidPose pose;
  pose.rotation = nearest_rotation(r);
  pose.translation = lambda * a.col(2);
  return pose;
}

Eigen::Matrix<double, 1, 5> conic_row(const Mat3& h, int i, int j) {
  Eigen::Matrix<double, 1, 5> v;
  v << h(0, i) * h(0, j), h(1, i) * h(1, j), h(2, i) * h(0, j) + h(0, i) * h(2, j),
      h(2, i) * h(1, j) + h(1, i) * h(2, j), h(2, i) * h(2, j);
  return v;
}

double total_cost(const Intrinsics& k, std::span<const RigidPose> poses, std::span<const PlanarView> views) {
  double c = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (std::size_t i = 0; i < views[v].object.size(); ++i) {
      Vec2 r;
      const Vec3 obj(views[v].object[i].x(), views[v].object[i].y(), 0.0);
      if (!residual(k, poses[v], obj, views[v].image[i], r, nullptr, nullptr))
        return std::numeric_limits<double>::infinity();
      c += r.squaredNorm();
    }
  }
  return c;
}

struct Calibrated {
  Intrinsics k;
  std::vector<RigidPose> poses;
  std::vector<PlanarView> views;
};

Calibrated calibrate_views(std::vector<PlanarView> views) {
  const ClosedForm cf = zhang_closed_form(views);
  const LmResult lm = refine_lm(cf.k, cf.poses, views);
  return {lm.k, lm.poses, std::move(views)};
}

}  // namespace

std::string plane_name(int plane) {
  return plane == kScannerPlane ? std::string("scanner") : "mask" + std::to_string(plane - 1);
}

std::vector<PlanarView> views_from_sets(std::span<const CorrespondenceSet> sets, std::span<const char> keep,
                                        int mask_count) {
  std::vector<PlanarView> views(static_cast<std::size_t>(mask_count) + 1);
  for (int p = 0; p <= mask_count; ++p) views[static_cast<std::size_t>(p)].plane = p;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!keep.empty() && !keep[i]) continue;
    const auto& s = sets[i];
    if (s.mask_id < 0 || s.mask_id >= mask_count) throw Error(ErrorCode::kInvalidArgument, "mask id out of range");
    auto& sv = views[kScannerPlane];
    sv.object.push_back(s.scanner_point);
    sv.image.push_back(s.chief_pixel);
    sv.set_index.push_back(static_cast<int>(i));
    auto& mv = views[static_cast<std::size_t>(s.mask_id) + 1];
    mv.object.push_back(s.mask_point);
    mv.image.push_back(s.chief_pixel);
    mv.set_index.push_back(static_cast<int>(i));
  }
  for (const auto& v : views)
    if (v.object.size() < 4)
      throw Error(ErrorCode::kInsufficientView,
                  plane_name(v.plane) + " view has " + std::to_string(v.object.size()) + " pairs");
  return views;
}

ViewBundle build_views(std::span<const ChiefRaySample> samples, int mask_count) {
  ViewBundle out;
  for (const auto& s : samples) {
    if (s.status != SampleStatus::kOk) continue;
    CorrespondenceSet c;
    c.pinhole_id = s.pinhole_id;
    c.mask_id = s.mask_id;
    c.mask_point = s.mask_local;
    c.scanner_point = s.scanner_local;
    c.chief_pixel = s.chief_pixel;
    out.sets.push_back(c);
  }
  out.views = views_from_sets(out.sets, {}, mask_count);
  return out;
}

ClosedForm zhang_closed_form(std::span<const PlanarView> views) {
  if (views.size() < 2) throw Error(ErrorCode::kInsufficientView, "need at least two views");

  // Condition pixel coordinates before forming the conic system.
  Vec2 mean = Vec2::Zero();
  std::size_t n = 0;
  for (const auto& v : views)
    for (const auto& p : v.image) {
      mean += p.vec();
      ++n;
    }
  mean /= static_cast<double>(n);
  double spread = 0.0;
  for (const auto& v : views)
    for (const auto& p : v.image) spread += (p.vec() - mean).norm();
  spread = std::max(spread / static_cast<double>(n), 1e-12);
  Mat3 t = Mat3::Identity();
  t(0, 0) = t(1, 1) = 1.0 / spread;
  t(0, 2) = -mean.x() / spread;
  t(1, 2) = -mean.y() / spread;

  std::vector<Mat3> hs;
  Eigen::MatrixXd a(2 * views.size(), 5);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].object.size() < 4) throw Error(ErrorCode::kInsufficientView, "view with fewer than 4 pairs");
    std::vector<Vec2> img;
    img.reserve(views[i].image.size());
    for (const auto& p : views[i].image) img.push_back(p.vec());
    Mat3 h;
    try {
      h = estimate_homography(views[i].object, img).h.m;
    } catch (const Error& e) {
      throw Error(ErrorCode::kClosedFormFailed, plane_name(views[i].plane) + ": " + e.what());
    }
    hs.push_back(h);
    Mat3 hn = t * h;
    hn /= hn.norm();
    a.row(static_cast<Eigen::Index>(2 * i)) = conic_row(hn, 0, 1);
    a.row(static_cast<Eigen::Index>(2 * i + 1)) = conic_row(hn, 0, 0) - conic_row(hn, 1, 1);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 4 || !(sv(3) > 1e-9 * sv(0)))
    throw Error(ErrorCode::kClosedFormFailed, "views do not constrain the conic (parallel planes?)");
  Eigen::Matrix<double, 5, 1> b = svd.matrixV().col(4);
  if (b(0) < 0.0) b = -b;
  Mat3 conic;
  conic << b(0), 0.0, b(2), 0.0, b(1), b(3), b(2), b(3), b(4);
  Eigen::LLT<Mat3> llt(conic);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::kClosedFormFailed, "image of the absolute conic is not positive definite");
  Mat3 kn = Mat3(llt.matrixL()).transpose().inverse();
  kn /= kn(2, 2);
  Mat3 km = t.inverse() * kn;
  km /= km(2, 2);
  ClosedForm out;
  out.k.fx = km(0, 0);
  out.k.fy = km(1, 1);
  out.k.cx = km(0, 2);
  out.k.cy = km(1, 2);
  if (!(out.k.fx > 0.0 && out.k.fy > 0.0) || !km.allFinite())
    throw Error(ErrorCode::kClosedFormFailed, "non-positive focal length");

  const Mat3 kinv = out.k.matrix().inverse();
  for (const auto& h : hs) out.poses.push_back(pose_from_homography(kinv * h));
  return out;
}

LmResult refine_lm(const Intrinsics& k, std::span<const RigidPose> poses, std::span<const PlanarView> views,
                   const LmOptions& options) {
  if (poses.size() != views.size()) throw Error(ErrorCode::kInvalidArgument, "one pose per view required");
  LmResult out;
  out.k = k;
  out.poses.assign(poses.begin(), poses.end());
  const std::size_t np = 4 + 6 * views.size();
  double cost = total_cost(out.k, out.poses, views);
  if (!std::isfinite(cost)) throw Error(ErrorCode::kLmFailed, "initial estimate puts points behind the projector");
  out.initial_cost = cost;
  out.cost_history.push_back(cost);

  double mu = 1e-3;
  for (int it = 0; it < options.max_iterations && cost > 0.0; ++it) {
    Mat jtj = Mat::Zero(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(np));
    Vec jtr = Vec::Zero(static_cast<Eigen::Index>(np));
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto base = static_cast<Eigen::Index>(4 + 6 * v);
      for (std::size_t i = 0; i < views[v].object.size(); ++i) {
        Vec2 r;
        Eigen::Matrix<double, 2, 4> dk;
        Eigen::Matrix<double, 2, 6> dp;
        const Vec3 obj(views[v].object[i].x(), views[v].object[i].y(), 0.0);
        residual(out.k, out.poses[v], obj, views[v].image[i], r, &dk, &dp);
        jtj.topLeftCorner<4, 4>() += dk.transpose() * dk;
        jtj.block<4, 6>(0, base) += dk.transpose() * dp;
        jtj.block<6, 6>(base, base) += dp.transpose() * dp;
        jtr.head<4>() += dk.transpose() * r;
        jtr.segment<6>(base) += dp.transpose() * r;
      }
    }
    jtj.triangularView<Eigen::StrictlyLower>() = jtj.transpose();

    bool accepted = false;
    double previous = cost;
    for (int tries = 0; tries < 12 && !accepted; ++tries) {
      Mat a = jtj;
      a.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
      const Vec step = a.ldlt().solve(-jtr);
      if (!step.allFinite()) throw Error(ErrorCode::kLmFailed, "non-finite step");
      Intrinsics nk = out.k;
      nk.fx += step(0);
      nk.fy += step(1);
      nk.cx += step(2);
      nk.cy += step(3);
      std::vector<RigidPose> np_poses(out.poses.size());
      for (std::size_t v = 0; v < out.poses.size(); ++v)
        np_poses[v] = perturb(out.poses[v], step.segment<6>(static_cast<Eigen::Index>(4 + 6 * v)));
      const double nc = (nk.fx > 0.0 && nk.fy > 0.0) ? total_cost(nk, np_poses, views)
                                                      : std::numeric_limits<double>::infinity();
      if (std::isnan(nc)) throw Error(ErrorCode::kLmFailed, "cost is NaN");
      if (nc <= cost) {
        out.k = nk;
        out.poses = std::move(np_poses);
        cost = nc;
        mu = std::max(mu * 0.1, 1e-15);
        accepted = true;
        ++out.iterations;
        out.cost_history.push_back(cost);
      } else {
        mu *= 10.0;
      }
    }
    if (!accepted) break;
    if ((previous - cost) <= options.relative_tolerance * previous) break;
  }
  if (!std::isfinite(cost)) throw Error(ErrorCode::kLmFailed, "cost diverged");
  out.cost = cost;
  out.mrpe = reprojection_errors(out.k, out.poses, views, ErrorSpace::kProjector).mean;
  return out;
}

double scanner_error(const Intrinsics& k, const RigidPose& scanner_pose, const CorrespondenceSet& set) {
  const Vec3 d((set.chief_pixel.u - k.cx) / k.fx, (set.chief_pixel.v - k.cy) / k.fy, 1.0);
  const Vec3 n = scanner_pose.rotation.col(2);
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
  const double lambda = n.dot(scanner_pose.translation) / denom;
  const Vec3 local = scanner_pose.rotation.transpose() * (lambda * d - scanner_pose.translation);
  return (local.head<2>() - set.scanner_point).norm();
}

ReprojectionErrors reprojection_errors(const Intrinsics& k, std::span<const RigidPose> poses,
                                       std::span<const PlanarView> views, ErrorSpace space,
                                       double scan_px_per_mm) {
  ReprojectionErrors out;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& view = views[v];
    if (space == ErrorSpace::kScanner && view.plane != kScannerPlane) continue;
    for (std::size_t i = 0; i < view.object.size(); ++i) {
      if (space == ErrorSpace::kProjector) {
        const Vec3 q = camera_point(poses[v], view.object[i]);
        const Vec2 proj(k.fx * q.x() / q.z() + k.cx, k.fy * q.y() / q.z() + k.cy);
        out.errors.push_back((proj - view.image[i].vec()).norm());
      } else {
        CorrespondenceSet s;
        s.scanner_point = view.object[i];
        s.chief_pixel = view.image[i];
        out.errors.push_back(scan_px_per_mm * scanner_error(k, poses[v], s));
      }
    }
  }
  if (!out.errors.empty()) {
    double sum = 0.0;
    for (double e : out.errors) sum += e;
    out.mean = sum / static_cast<double>(out.errors.size());
  }
  return out;
}

CalibrationResult robust_calibrate(std::span<const CorrespondenceSet> sets, int mask_count,
                                   const RobustOptions& options) {
  if (!(options.max_exclusion_fraction >= 0.0 && options.max_exclusion_fraction <= 0.2))
    throw Error(ErrorCode::kInvalidArgument, "max exclusion fraction must lie in [0, 0.2]");
  const std::size_t n = sets.size();
  const int cap = static_cast<int>(std::floor(options.max_exclusion_fraction * static_cast<double>(n) + 1e-9));
  std::vector<char> keep(n, 1);

  CalibrationResult result;
  result.sets_total = static_cast<int>(n);
  std::vector<int> order;
  std::optional<Calibrated> best;
  int best_k = -1;
  std::vector<double> best_errors;

  for (int k = 0;; ++k) {
    Calibrated c;
    try {
      c = calibrate_views(views_from_sets(sets, keep, mask_count));
    } catch (const Error& e) {
      if (k == 0) throw;
      result.warnings.push_back("exclusion stopped after " + std::to_string(k - 1) + " sets: " + e.what());
      break;
    }
    const std::size_t scanner_view = 0;
    std::vector<double> errors(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      errors[i] = options.scan_px_per_mm * scanner_error(c.k, c.poses[scanner_view], sets[i]);
      sum += errors[i];
    }
    const double e = sum / static_cast<double>(n);
    result.error_curve.push_back(e);
    if (!best || e < result.error_curve[static_cast<std::size_t>(best_k)]) {
      best = c;
      best_k = k;
      best_errors = errors;
    }
    if (options.stop_at_first_rise && k > 0 && e > result.error_curve[static_cast<std::size_t>(k - 1)]) break;
    if (k >= cap) {
      if (k > 0 && best_k == k) result.warnings.push_back("exclusion cap reached before a local minimum");
      break;
    }
    int worst = -1;
    for (std::size_t i = 0; i < n; ++i)
      if (keep[i] && (worst < 0 || errors[i] > errors[static_cast<std::size_t>(worst)])) worst = static_cast<int>(i);
    keep[static_cast<std::size_t>(worst)] = 0;
    order.push_back(worst);
  }

  result.k = best->k;
  result.poses = best->poses;
  for (const auto& v : best->views) result.planes.push_back(v.plane);
  result.excluded.assign(order.begin(), order.begin() + best_k);
  result.mrpe_projector =
      reprojection_errors(best->k, best->poses, best->views, ErrorSpace::kProjector).mean;
  result.mrpe_scanner = reprojection_errors(best->k, best->poses, best->views, ErrorSpace::kScanner,
                                            options.scan_px_per_mm)
                            .mean;
  return result;
}

PoseEstimate solve_pnp(std::span<const Vec3> object, std::span<const PixelPoint> image, const Intrinsics& k) {
  if (object.size() != image.size()) throw Error(ErrorCode::kInvalidArgument, "object and image counts differ");
  if (object.size() < 4) throw Error(ErrorCode::kPnpDegenerate, "need at least 4 points");
  k.validate();

  Vec3 c = Vec3::Zero();
  for (const auto& p : object) c += p;
  c /= static_cast<double>(object.size());
  Eigen::MatrixXd centred(3, object.size());
  for (std::size_t i = 0; i < object.size(); ++i) centred.col(static_cast<Eigen::Index>(i)) = object[i] - c;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeFullU);
  const auto& sv = svd.singularValues();
  if (!(sv(1) > 1e-9 * sv(0))) throw Error(ErrorCode::kPnpDegenerate, "points are collinear");
  Mat3 basis;
  basis.col(0) = svd.matrixU().col(0);
  basis.col(1) = svd.matrixU().col(1);
  basis.col(2) = basis.col(0).cross(basis.col(1));

  std::vector<Vec2> plane, norm;
  const Mat3 kinv = k.matrix().inverse();
  for (std::size_t i = 0; i < object.size(); ++i) {
    const Vec3 l = basis.transpose() * (object[i] - c);
    plane.emplace_back(l.x(), l.y());
    const Vec3 m = kinv * Vec3(image[i].u, image[i].v, 1.0);
    norm.emplace_back(m.x() / m.z(), m.y() / m.z());
  }
  RigidPose local;
  try {
    local = pose_from_homography(estimate_homography(plane, norm).h.m);
  } catch (const Error& e) {
    throw Error(ErrorCode::kPnpDegenerate, e.what());
  }
  PoseEstimate out;
  out.pose.rotation = local.rotation * basis.transpose();
  out.pose.translation = local.translation - out.pose.rotation * c;

  auto cost = [&](const RigidPose& pose) {
    double s = 0.0;
    for (std::size_t i = 0; i < object.size(); ++i) {
      Vec2 r;
      if (!residual(k, pose, object[i], image[i], r, nullptr, nullptr)) return std::numeric_limits<double>::infinity();
      s += r.squaredNorm();
    }
    return s;
  };
  double current = cost(out.pose);
  if (!std::isfinite(current)) throw Error(ErrorCode::kPnpDegenerate, "initial pose puts points behind the projector");
  double mu = 1e-3;
  for (int it = 0; it < 100 && current > 0.0; ++it) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> jtr = Eigen::Matrix<double, 6, 1>::Zero();
    for (std::size_t i = 0; i < object.size(); ++i) {
      Vec2 r;
      Eigen::Matrix<double, 2, 6> dp;
      residual(k, out.pose, object[i], image[i], r, nullptr, &dp);
      jtj += dp.transpose() * dp;
      jtr += dp.transpose() * r;
    }
    bool accepted = false;
    const double previous = current;
    for (int tries = 0; tries < 12 && !accepted; ++tries) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      a.diagonal() += mu * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::Matrix<double, 6, 1> step = a.ldlt().solve(-jtr);
      const RigidPose np = perturb(out.pose, step);
      const double nc = cost(np);
      if (nc <= current) {
        out.pose = np;
        current = nc;
        mu = std::max(mu * 0.1, 1e-15);
        accepted = true;
      } else {
        mu *= 10.0;
      }
    }
    if (!accepted || previous - current <= 1e-14 * previous) break;
  }
  out.rms = std::sqrt(current / static_cast<double>(object.size()));
  return out;
}

std::vector<double> evaluate_projection(const Intrinsics& k, const PoseEstimate& pose, const Intrinsics& true_k,
                                        const RigidPose& true_pose, std::span<const Vec3> corners) {
  if (corners.size() < 3) throw Error(ErrorCode::kInvalidArgument, "need at least 3 corners to define the board");
  Vec3 c = Vec3::Zero();
  for (const auto& p : corners) c += p;
  c /= static_cast<double>(corners.size());
  Eigen::MatrixXd centred(3, corners.size());
  for (std::size_t i = 0; i < corners.size(); ++i) centred.col(static_cast<Eigen::Index>(i)) = corners[i] - c;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeFullU);
  const Vec3 normal = svd.matrixU().col(2);

  std::vector<double> out;
  out.reserve(corners.size());
  for (const auto& corner : corners) {
    const PixelPoint px = project(k, pose.pose, corner);
    const Ray ray = unproject_ray(true_k, true_pose, px);
    const double denom = normal.dot(ray.direction);
    if (std::abs(denom) < 1e-15) throw Error(ErrorCode::kBehindProjector, "dot ray parallel to the board");
    const double t = normal.dot(c - ray.origin) / denom;
    if (!(t > 0.0)) throw Error(ErrorCode::kBehindProjector, "board lies behind the projector");
    out.push_back((ray.origin + t * ray.direction - corner).norm());
  }
  return out;
}

}  // namespace chiefray
