#include "chiefray/chief.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace chiefray {

BackprojectedBlob backproject(const Blob& blob, const DecodedMap& map, int min_points) {
  BackprojectedBlob out;
  out.blob_id = blob.id;
  for (auto i : blob.pixels) {
    const auto k = static_cast<std::size_t>(i);
    if (!map.valid(k)) continue;
    out.points.emplace_back(map.u[k], map.v[k]);
  }
  if (static_cast<int>(out.points.size()) < min_points)
    throw Error(ErrorCode::kMissingCode, "blob " + std::to_string(blob.id) + " has " +
                                             std::to_string(out.points.size()) + " decoded pixels");
  return out;
}

CircleFit fit_circle(std::span<const Vec2> points, std::span<const double> weights) {
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorCode::kDegenerateCircle, "need at least 3 points");
  if (!weights.empty() && weights.size() != n) throw Error(ErrorCode::kInvalidArgument, "weights differ in length");
  auto wt = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  Vec2 mean = Vec2::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += wt(i) * points[i];
    wsum += wt(i);
  }
  mean /= wsum;
  double scale = 0.0;
  for (const auto& p : points) scale = std::max(scale, (p - mean).norm());
  if (!(scale > 0.0)) throw Error(ErrorCode::kDegenerateCircle, "points coincide");

  // Kasa: x^2 + y^2 + D x + E y + F = 0 in centred, scaled coordinates.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 q = (points[i] - mean) / scale;
    const Eigen::Vector3d row(q.x(), q.y(), 1.0);
    ata += wt(i) * row * row.transpose();
    atb += wt(i) * row * (-(q.squaredNorm()));
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(ata);
  if (!(svd.singularValues()(2) > 1e-12 * svd.singularValues()(0)))
    throw Error(ErrorCode::kDegenerateCircle, "points are collinear");
  const Eigen::Vector3d sol = ata.ldlt().solve(atb);
  Vec2 c(-sol(0) / 2.0, -sol(1) / 2.0);
  double r2 = c.squaredNorm() - sol(2);
  if (!(r2 > 0.0) || !std::isfinite(r2)) throw Error(ErrorCode::kDegenerateCircle, "algebraic fit failed");
  double r = std::sqrt(r2);
  // Collinear-ish input yields a huge circle.
  if (r > 1e6) throw Error(ErrorCode::kDegenerateCircle, "points are nearly collinear");

  auto cost = [&](const Vec2& cc, double rr) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ((points[i] - mean) / scale - cc).norm() - rr;
      s += wt(i) * d * d;
    }
    return s;
  };
  double lambda = 1e-3;
  double current = cost(c, r);
  for (int it = 0; it < 100; ++it) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2 d = (points[i] - mean) / scale - c;
      const double len = d.norm();
      if (len < 1e-15) continue;
      const Eigen::Vector3d j(-d.x() / len, -d.y() / len, -1.0);
      const double res = len - r;
      jtj += wt(i) * j * j.transpose();
      jtr += wt(i) * j * res;
    }
    bool accepted = false;
    for (int tries = 0; tries < 20 && !accepted; ++tries) {
      Eigen::Matrix3d a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::Vector3d step = a.ldlt().solve(-jtr);
      const Vec2 nc = c + step.head<2>();
      const double nr = r + step(2);
      const double nc_cost = cost(nc, nr);
      if (nc_cost <= current) {
        const double rel = (current - nc_cost) / std::max(current, 1e-300);
        c = nc;
        r = nr;
        current = nc_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (rel < 1e-15) it = 100;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }

  CircleFit fit;
  fit.center = mean + scale * c;
  fit.radius = scale * std::abs(r);
  fit.residual = std::sqrt(current / wsum) * scale;
  if (!fit.center.allFinite() || !(fit.radius > 0.0)) throw Error(ErrorCode::kDegenerateCircle, "fit diverged");
  return fit;
}

CircleFit fit_circle(const BackprojectedBlob& blob) { return fit_circle(blob.points); }

void hull_boundary(const BackprojectedBlob& blob, int projector_width, int projector_height,
                   std::vector<Vec2>& points, std::vector<double>& weights) {
  std::map<std::pair<long, long>, int> count;
  for (const auto& p : blob.points) ++count[{std::lround(p.x()), std::lround(p.y())}];
  std::vector<Vec2> uniq;
  uniq.reserve(count.size());
  for (const auto& [k, c] : count) uniq.emplace_back(static_cast<double>(k.first), static_cast<double>(k.second));
  std::sort(uniq.begin(), uniq.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });

  points.clear();
  weights.clear();
  std::vector<Vec2> hull;
  if (uniq.size() < 3) {
    hull = uniq;
  } else {
    // Monotone chain keeping collinear boundary points.
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
      return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Vec2> lower, upper;
    for (const auto& p : uniq) {
      while (lower.size() >= 2 && cross(lower[lower.size() - 2], lower.back(), p) < 0.0) lower.pop_back();
      lower.push_back(p);
    }
    for (auto it = uniq.rbegin(); it != uniq.rend(); ++it) {
      while (upper.size() >= 2 && cross(upper[upper.size() - 2], upper.back(), *it) < 0.0) upper.pop_back();
      upper.push_back(*it);
    }
    hull = lower;
    hull.insert(hull.end(), upper.begin() + 1, upper.end() - 1);
    std::sort(hull.begin(), hull.end(), [](const Vec2& a, const Vec2& b) {
      return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    hull.erase(std::unique(hull.begin(), hull.end()), hull.end());
  }
  for (const auto& h : hull) {
    if (h.x() <= 0.0 || h.y() <= 0.0 || h.x() >= projector_width - 1 || h.y() >= projector_height - 1) continue;
    points.push_back(h);
    weights.push_back(count[{std::lround(h.x()), std::lround(h.y())}]);
  }
}

HomographyFit blob_homography(const Blob& blob, const DecodedMap& map) {
  std::vector<Vec2> raster, proj;
  for (auto i : blob.pixels) {
    const auto k = static_cast<std::size_t>(i);
    if (!map.valid(k)) continue;
    raster.emplace_back(i % map.width, i / map.width);
    proj.emplace_back(map.u[k], map.v[k]);
  }
  if (raster.size() < 4) throw Error(ErrorCode::kMissingCode, "blob " + std::to_string(blob.id) + " has too few codes");
  return estimate_homography(raster, proj);
}

std::vector<Vec2> edge_points(const Blob& blob, const ScanImage& white, double smoothing, double level) {
  if (blob.pixels.empty()) return {};
  if (white.width != blob.raster_width) throw Error(ErrorCode::kInvalidArgument, "scan does not match blob raster");

  // Smoothed crop around the blob.
  const int rad = smoothing > 0.0 ? static_cast<int>(std::ceil(3.0 * smoothing)) : 0;
  const int x0 = std::max(0, blob.min_x - rad - 2), y0 = std::max(0, blob.min_y - rad - 2);
  const int x1 = std::min(white.width - 1, blob.max_x + rad + 2), y1 = std::min(white.height - 1, blob.max_y + rad + 2);
  const int w = x1 - x0 + 1, h = y1 - y0 + 1;
  std::vector<double> kernel(2 * rad + 1, 1.0);
  if (rad > 0) {
    double sum = 0.0;
    for (int i = -rad; i <= rad; ++i) sum += kernel[i + rad] = std::exp(-0.5 * i * i / (smoothing * smoothing));
    for (auto& k : kernel) k /= sum;
  }
  std::vector<double> tmp(static_cast<std::size_t>(w) * h), img(tmp.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a = 0.0;
      for (int i = -rad; i <= rad; ++i) a += kernel[i + rad] * white.at(std::clamp(x0 + x + i, 0, white.width - 1), y0 + y);
      tmp[static_cast<std::size_t>(y) * w + x] = a;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        const int yy = std::clamp(y0 + y + i, 0, white.height - 1);
        if (yy < y0 || yy > y1) {
          // Outside the crop: filter the raw column directly.
          double b = 0.0;
          for (int j = -rad; j <= rad; ++j)
            b += kernel[j + rad] * white.at(std::clamp(x0 + x + j, 0, white.width - 1), yy);
          a += kernel[i + rad] * b;
        } else {
          a += kernel[i + rad] * tmp[static_cast<std::size_t>(yy - y0) * w + x];
        }
      }
      img[static_cast<std::size_t>(y) * w + x] = a;
    }
  auto value = [&](int x, int y) { return img[static_cast<std::size_t>(y - y0) * w + (x - x0)]; };

  // Plane through the plateau so irradiance falloff does not bias the crossing.
  std::vector<double> vals;
  vals.reserve(blob.pixels.size());
  for (auto i : blob.pixels) vals.push_back(value(i % blob.raster_width, i / blob.raster_width));
  std::vector<double> sorted = vals;
  const auto p90 = sorted.begin() + static_cast<std::ptrdiff_t>(0.9 * (sorted.size() - 1));
  std::nth_element(sorted.begin(), p90, sorted.end());
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  for (std::size_t n = 0; n < vals.size(); ++n) {
    if (vals[n] < 0.75 * *p90) continue;
    const auto i = blob.pixels[n];
    const Eigen::Vector3d a(1.0, i % blob.raster_width - blob.centroid.x(), i / blob.raster_width - blob.centroid.y());
    ata += a * a.transpose();
    atb += a * vals[n];
  }
  Eigen::Vector3d plane(*p90, 0.0, 0.0);
  if (std::abs(ata.determinant()) > 1e-9) plane = ata.ldlt().solve(atb);

  auto member = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= white.width || y >= white.height) return false;
    return std::binary_search(blob.pixels.begin(), blob.pixels.end(), static_cast<std::int32_t>(y * blob.raster_width + x));
  };
  std::vector<Vec2> out;
  std::vector<std::pair<int, int>> seen;
  for (const auto& b : trace_boundary(blob)) {
    const int x = static_cast<int>(b.x()), y = static_cast<int>(b.y());
    const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
    for (int k = 0; k < 4; ++k) {
      if (member(nx[k], ny[k])) continue;
      if (nx[k] < 0 || ny[k] < 0 || nx[k] >= white.width || ny[k] >= white.height) continue;
      const std::pair<int, int> crack(x + nx[k], y + ny[k]);
      if (std::find(seen.begin(), seen.end(), crack) != seen.end()) continue;
      seen.push_back(crack);
      const double mx = 0.5 * crack.first, my = 0.5 * crack.second;
      const double thr =
          level * (plane(0) + plane(1) * (mx - blob.centroid.x()) + plane(2) * (my - blob.centroid.y()));
      const double a = value(x, y), o = value(nx[k], ny[k]);
      double t = 0.5;
      if (a != o) t = std::clamp((a - thr) / (a - o), 0.0, 1.0);
      out.emplace_back(x + t * (nx[k] - x), y + t * (ny[k] - y));
    }
  }
  return out;
}

ChiefRaySample extract_chief(const Blob& blob, const DecodedMap& map, const ScanImage& white,
                             const ScannerModel& scanner, const ChiefOptions& options) {
  const BackprojectedBlob bp = backproject(blob, map, options.min_backproj_points);
  ChiefRaySample s;
  s.blob_id = blob.id;
  CircleFit fit;
  std::optional<Homography> inv;
  if (options.fit_mode == CircleFitMode::kEdge) {
    const Homography hm = blob_homography(blob, map).h;
    std::vector<Vec2> pts;
    const auto edges = edge_points(blob, white, options.edge_smoothing, options.edge_level);
    for (const auto& e : edges) {
      const Vec2 p = hm.apply(e);
      // Where the panel edge truncates the disc the boundary is not the aperture rim.
      if (p.x() < 1.0 || p.y() < 1.0 || p.x() > map.projector_width - 2.0 || p.y() > map.projector_height - 2.0)
        continue;
      pts.push_back(p);
    }
    if (static_cast<double>(edges.size() - pts.size()) > options.max_truncated_fraction * edges.size())
      throw Error(ErrorCode::kDegenerateCircle, "blob " + std::to_string(blob.id) + " is truncated by the panel edge");
    if (static_cast<int>(pts.size()) < options.min_backproj_points)
      throw Error(ErrorCode::kDegenerateCircle, "blob " + std::to_string(blob.id) + " has too few edge points");
    fit = fit_circle(pts);
    inv = hm.inverse();
  } else if (options.fit_mode == CircleFitMode::kHull) {
    std::vector<Vec2> pts;
    std::vector<double> w;
    hull_boundary(bp, map.projector_width, map.projector_height, pts, w);
    fit = fit_circle(pts, w);
  } else {
    fit = fit_circle(bp.points);
  }
  s.chief_pixel = PixelPoint::from(fit.center);
  s.residual = fit.residual;
  if (inv) {
    s.scanner_raster = inv->apply(fit.center);
  } else {
    const std::span<const std::int32_t> region(blob.pixels);
    s.scanner_raster = inverse_lookup(map, s.chief_pixel, region);
  }
  s.scanner_local = scanner.raster_to_local(s.scanner_raster);
  s.scanner_world = scanner.frame.to_world(s.scanner_local);
  return s;
}

ChiefRaySample naive_center(const Blob& blob, const DecodedMap& map, const ScannerModel& scanner) {
  if (!blob.ellipse) throw Error(ErrorCode::kNotAnEllipse, "blob " + std::to_string(blob.id) + " has no ellipse");
  ChiefRaySample s;
  s.blob_id = blob.id;
  s.scanner_raster = blob.ellipse->center;
  s.chief_pixel = forward_lookup(map, s.scanner_raster);
  s.residual = blob.ellipse->residual;
  s.scanner_local = scanner.raster_to_local(s.scanner_raster);
  s.scanner_world = scanner.frame.to_world(s.scanner_local);
  return s;
}

}  // namespace chiefray
