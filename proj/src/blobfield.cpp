#include "chiefray/blobfield.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <string>

#include <Eigen/Dense>

namespace chiefray {

double otsu_threshold(std::span<const float> values) {
  constexpr int kBins = 256;
  float peak = 0.0f;
  for (float v : values) peak = std::max(peak, v);
  if (!(peak > 0.0f)) return 0.0;
  std::vector<double> hist(kBins, 0.0);
  for (float v : values) {
    const int b = std::min(kBins - 1, static_cast<int>(std::max(0.0f, v) / peak * kBins));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[static_cast<std::size_t>(i)];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_t = 0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += hist[static_cast<std::size_t>(t)];
    sum0 += t * hist[static_cast<std::size_t>(t)];
    const double w1 = total - w0;
    if (w0 <= 0.0 || w1 <= 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return (best_t + 1) * static_cast<double>(peak) / kBins;
}

namespace {

std::vector<Vec2> hull_of(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> h(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0.0) --k;
    h[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0.0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

// Pixel-count equivalent of the convex hull of the pixel centres (Pick's theorem
// style correction for the half-pixel rim).
double hull_pixel_area(const Blob& blob) {
  std::vector<Vec2> pts;
  pts.reserve(blob.pixels.size());
  for (auto i : blob.pixels) pts.emplace_back(i % blob.raster_width, i / blob.raster_width);
  const auto h = hull_of(std::move(pts));
  if (h.size() < 3) return blob.area;
  double area = 0.0, perim = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& a = h[i];
    const auto& b = h[(i + 1) % h.size()];
    area += a.x() * b.y() - b.x() * a.y();
    perim += (b - a).norm();
  }
  return 0.5 * std::abs(area) + 0.5 * perim + 1.0;
}

}  // namespace

namespace {

// 4-connected flood fill from `seed` over pixels with value > thr and label == from,
// relabelling them to `to`.
void flood(const ScanImage& img, std::vector<std::int32_t>& label, std::size_t seed, double thr, std::int32_t from,
           std::int32_t to, std::vector<std::int32_t>& out) {
  const int w = img.width, h = img.height;
  out.assign(1, static_cast<std::int32_t>(seed));
  label[seed] = to;
  for (std::size_t q = 0; q < out.size(); ++q) {
    const int px = out[q] % w, py = out[q] / w;
    const int nx[4] = {px - 1, px + 1, px, px};
    const int ny[4] = {py, py, py - 1, py + 1};
    for (int k = 0; k < 4; ++k) {
      if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
      const auto n = static_cast<std::size_t>(ny[k]) * w + nx[k];
      if (label[n] != from || !(img.data[n] > thr)) continue;
      label[n] = to;
      out.push_back(static_cast<std::int32_t>(n));
    }
  }
}

}  // namespace

std::vector<Blob> segment_blobs(const ScanImage& white, const SegmentOptions& options) {
  const int w = white.width, h = white.height;
  const double otsu = otsu_threshold(white.data);
  if (!(otsu > 0.0)) throw Error(ErrorCode::kEmptyField, "scan has no lit pixels");
  // Irradiance falls off across a tilted scanner, so the global Otsu level only
  // seeds components; each one is then cut at half of its own plateau.
  const double seed_thr = 0.5 * otsu;

  std::vector<std::int32_t> label(white.size(), -1);
  std::vector<Blob> blobs;
  std::vector<std::int32_t> coarse, fine, values_idx;
  std::int32_t next_label = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto s = static_cast<std::size_t>(y) * w + x;
      if (label[s] != -1 || !(white.data[s] > seed_thr)) continue;
      const std::int32_t coarse_label = next_label++;
      flood(white, label, s, seed_thr, -1, coarse_label, coarse);

      std::vector<float> vals;
      vals.reserve(coarse.size());
      for (auto i : coarse) vals.push_back(white.data[static_cast<std::size_t>(i)]);
      const auto p90 = vals.begin() + static_cast<std::ptrdiff_t>(0.9 * (vals.size() - 1));
      std::nth_element(vals.begin(), p90, vals.end());
      const double local_thr = std::max(seed_thr, 0.5 * static_cast<double>(*p90));

      // Pieces of the component above the local level.
      for (auto i : coarse) {
        const auto k = static_cast<std::size_t>(i);
        if (label[k] != coarse_label || !(white.data[k] > local_thr)) continue;
        const std::int32_t piece = next_label++;
        flood(white, label, k, local_thr, coarse_label, piece, fine);
        if (static_cast<int>(fine.size()) < options.min_blob_area) continue;
        bool touches_border = false;
        for (auto j : fine) {
          const int px = j % w, py = j / w;
          if (px == 0 || py == 0 || px == w - 1 || py == h - 1) touches_border = true;
        }
        if (touches_border && options.drop_border) continue;
        Blob b;
        b.raster_width = w;
        b.pixels = fine;
        std::sort(b.pixels.begin(), b.pixels.end());
        b.area = static_cast<int>(b.pixels.size());
        b.min_x = w;
        b.min_y = h;
        Vec2 sum = Vec2::Zero();
        for (auto j : b.pixels) {
          const int px = j % w, py = j / w;
          sum += Vec2(px, py);
          b.min_x = std::min(b.min_x, px);
          b.max_x = std::max(b.max_x, px);
          b.min_y = std::min(b.min_y, py);
          b.max_y = std::max(b.max_y, py);
        }
        b.centroid = sum / b.area;
        blobs.push_back(std::move(b));
      }
    }
  }
  std::sort(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) { return a.pixels.front() < b.pixels.front(); });
  if (blobs.empty()) throw Error(ErrorCode::kEmptyField, "no blob above the minimum area");

  if (options.check_overlap && blobs.size() >= 3) {
    std::vector<int> areas;
    for (const auto& b : blobs) areas.push_back(b.area);
    std::nth_element(areas.begin(), areas.begin() + areas.size() / 2, areas.end());
    const double median = areas[areas.size() / 2];
    for (const auto& b : blobs) {
      if (b.area > 2.0 * median && b.area / hull_pixel_area(b) < 0.85)
        throw Error(ErrorCode::kOverlappingBlobs, "blob at (" + std::to_string(b.centroid.x()) + ", " +
                                                      std::to_string(b.centroid.y()) + ") looks like merged blobs");
    }
  }

  for (std::size_t i = 0; i < blobs.size(); ++i) {
    blobs[i].id = static_cast<int>(i);
    try {
      blobs[i].ellipse = fit_ellipse(blobs[i]);
    } catch (const Error&) {
      blobs[i].ellipse.reset();
    }
  }
  return blobs;
}

std::vector<int> cluster_masks(std::span<const Blob> blobs, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (blobs.empty()) throw Error(ErrorCode::kEmptyField, "no blobs to cluster");
  if (static_cast<std::size_t>(k) > blobs.size())
    throw Error(ErrorCode::kOverClustered, "k = " + std::to_string(k) + " exceeds blob count " +
                                               std::to_string(blobs.size()));
  const std::size_t n = blobs.size();
  std::vector<Vec2> centers{blobs[0].centroid};
  while (static_cast<int>(centers.size()) < k) {
    double best = -1.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::max();
      for (const auto& c : centers) d = std::min(d, (blobs[i].centroid - c).squaredNorm());
      if (d > best) {
        best = d;
        pick = i;
      }
    }
    centers.push_back(blobs[pick].centroid);
  }

  std::vector<int> labels(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double d = (blobs[i].centroid - centers[static_cast<std::size_t>(c)]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Vec2> sum(static_cast<std::size_t>(k), Vec2::Zero());
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sum[static_cast<std::size_t>(labels[i])] += blobs[i].centroid;
      ++count[static_cast<std::size_t>(labels[i])];
    }
    for (int c = 0; c < k; ++c)
      if (count[static_cast<std::size_t>(c)] > 0) centers[static_cast<std::size_t>(c)] = sum[static_cast<std::size_t>(c)] / count[static_cast<std::size_t>(c)];
  }

  std::vector<int> order(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) order[static_cast<std::size_t>(c)] = c;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return centers[static_cast<std::size_t>(a)].x() < centers[static_cast<std::size_t>(b)].x();
  });
  std::vector<int> remap(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) remap[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
  for (auto& l : labels) l = remap[static_cast<std::size_t>(l)];
  return labels;
}

namespace {

Vec2 canonical(const Vec2& d) {
  if (std::abs(d.x()) >= std::abs(d.y())) return d.x() < 0.0 ? Vec2(-d) : d;
  return d.y() < 0.0 ? Vec2(-d) : d;
}

struct LatticeCell {
  int col, row;
  bool operator<(const LatticeCell& o) const { return row < o.row || (row == o.row && col < o.col); }
};

}  // namespace

PinholeGridAssignment recognize_grid(std::span<const Blob> blobs, const PinholeMask& mask, int mask_id) {
  const std::size_t n = blobs.size();
  if (n < 4) throw Error(ErrorCode::kGridNotFound, "need at least 4 blobs, got " + std::to_string(n));
  std::vector<Vec2> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = blobs[i].centroid;

  // Nearest-neighbour difference vectors.
  std::vector<Vec2> diffs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> nn;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) nn.emplace_back((p[j] - p[i]).squaredNorm(), j);
    const std::size_t m = std::min<std::size_t>(4, nn.size());
    std::partial_sort(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(m), nn.end());
    for (std::size_t k = 0; k < m; ++k) diffs.push_back(canonical(p[nn[k].second] - p[i]));
  }

  // Every difference vector is a hypothesis; consensus counts vectors within 20%.
  auto consensus = [&](const Vec2& h, Vec2* refined) {
    const double tol = 0.2 * h.norm();
    Vec2 sum = Vec2::Zero();
    int count = 0;
    for (const auto& d : diffs) {
      if ((d - h).norm() < tol) {
        sum += d;
        ++count;
      } else if ((d + h).norm() < tol) {
        sum -= d;
        ++count;
      }
    }
    if (refined && count > 0) *refined = sum / count;
    return count;
  };
  int best1 = -1;
  Vec2 b1 = Vec2::Zero();
  for (const auto& d : diffs) {
    if (d.norm() < 1e-9) continue;
    Vec2 r;
    const int c = consensus(d, &r);
    if (c > best1) {
      best1 = c;
      b1 = r;
    }
  }
  int best2 = -1;
  Vec2 b2 = Vec2::Zero();
  for (const auto& d : diffs) {
    if (d.norm() < 1e-9) continue;
    const double sin_angle = std::abs(b1.x() * d.y() - b1.y() * d.x()) / (b1.norm() * d.norm());
    if (sin_angle < 0.5) continue;
    Vec2 r;
    const int c = consensus(d, &r);
    if (c > best2) {
      best2 = c;
      b2 = r;
    }
  }
  if (best1 < 2 || best2 < 2) throw Error(ErrorCode::kGridNotFound, "no two-dimensional lattice in blob centroids");

  // The more horizontal basis vector steps columns, the other rows.
  Vec2 bc = b1, br = b2;
  if (std::abs(bc.x()) / bc.norm() < std::abs(br.x()) / br.norm()) std::swap(bc, br);
  if (bc.x() < 0.0) bc = -bc;
  if (br.y() < 0.0) br = -br;

  // Grow indices outward from the blob nearest the centroid of the field.
  Vec2 mean = Vec2::Zero();
  for (const auto& q : p) mean += q;
  mean /= static_cast<double>(n);
  std::size_t seed = 0;
  for (std::size_t i = 1; i < n; ++i)
    if ((p[i] - mean).squaredNorm() < (p[seed] - mean).squaredNorm()) seed = i;

  std::vector<LatticeCell> cell(n);
  std::vector<bool> assigned(n, false);
  std::vector<Vec2> local_c(n, bc), local_r(n, br);
  std::map<LatticeCell, std::size_t> occupied;
  std::deque<std::size_t> queue{seed};
  assigned[seed] = true;
  cell[seed] = {0, 0};
  occupied[cell[seed]] = seed;

  struct Step {
    int dc, dr;
  };
  const Step steps[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {2, 0}, {-2, 0}, {0, 2}, {0, -2}, {1, 1}, {-1, 1}, {1, -1}, {-1, -1}};
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    for (const auto& s : steps) {
      const LatticeCell target{cell[i].col + s.dc, cell[i].row + s.dr};
      if (occupied.count(target)) continue;
      const Vec2 pred = p[i] + s.dc * local_c[i] + s.dr * local_r[i];
      const double tol = 0.3 * std::min(local_c[i].norm(), local_r[i].norm());
      std::size_t best = n;
      double bd = tol;
      for (std::size_t j = 0; j < n; ++j) {
        if (assigned[j]) continue;
        const double d = (p[j] - pred).norm();
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      if (best == n) continue;
      assigned[best] = true;
      cell[best] = target;
      occupied[target] = best;
      local_c[best] = local_c[i];
      local_r[best] = local_r[i];
      if (s.dr == 0) local_c[best] = (p[best] - p[i]) / s.dc;
      if (s.dc == 0) local_r[best] = (p[best] - p[i]) / s.dr;
      queue.push_back(best);
    }
  }

  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < n; ++i)
    if (assigned[i]) members.push_back(i);

  // Reject blobs off the projective image of the lattice.
  std::vector<bool> keep(n, false);
  for (auto i : members) keep[i] = true;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<Vec2> src, dst;
    for (auto i : members)
      if (keep[i]) {
        src.emplace_back(cell[i].col, cell[i].row);
        dst.push_back(p[i]);
      }
    if (src.size() < 4) break;
    HomographyFit fit;
    try {
      fit = estimate_homography(src, dst);
    } catch (const Error&) {
      throw Error(ErrorCode::kGridNotFound, "blob lattice is degenerate");
    }
    for (auto i : members) {
      const double pitch = std::min(local_c[i].norm(), local_r[i].norm());
      const double r = (fit.h.apply(Vec2(cell[i].col, cell[i].row)) - p[i]).norm();
      keep[i] = r <= 0.15 * pitch;
    }
  }

  PinholeGridAssignment out;
  int min_c = std::numeric_limits<int>::max(), min_r = min_c, max_c = std::numeric_limits<int>::min(), max_r = max_c;
  for (auto i : members) {
    if (!keep[i]) continue;
    min_c = std::min(min_c, cell[i].col);
    max_c = std::max(max_c, cell[i].col);
    min_r = std::min(min_r, cell[i].row);
    max_r = std::max(max_r, cell[i].row);
  }
  int kept = 0;
  for (auto i : members) kept += keep[i] ? 1 : 0;
  if (kept < 4 || max_c == min_c || max_r == min_r)
    throw Error(ErrorCode::kGridNotFound, "fewer than 4 blobs on a two-dimensional lattice");
  if (max_c - min_c + 1 > mask.cols || max_r - min_r + 1 > mask.rows)
    throw Error(ErrorCode::kGridNotFound, "lattice span " + std::to_string(max_c - min_c + 1) + "x" +
                                              std::to_string(max_r - min_r + 1) + " exceeds mask grid");

  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) {
      out.dropped.push_back(static_cast<int>(i));
      continue;
    }
    GridEntry e;
    e.blob_index = static_cast<int>(i);
    e.mask_id = mask_id;
    e.col = cell[i].col - min_c;
    e.row = cell[i].row - min_r;
    e.local = Vec2(e.col * mask.pitch, e.row * mask.pitch);
    e.world = mask.hole_world(e.row, e.col);
    e.confidence = 1.0;
    out.entries.push_back(e);
  }
  out.basis_col = bc;
  out.basis_row = br;
  return out;
}

std::vector<Vec2> trace_boundary(const Blob& blob) {
  if (blob.pixels.empty()) return {};
  const int x0 = blob.min_x - 1, y0 = blob.min_y - 1;
  const int bw = blob.max_x - blob.min_x + 3, bh = blob.max_y - blob.min_y + 3;
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(bw) * bh, 0);
  for (auto i : blob.pixels)
    inside[static_cast<std::size_t>(i / blob.raster_width - y0) * bw + (i % blob.raster_width - x0)] = 1;
  auto in = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < bw && y < bh && inside[static_cast<std::size_t>(y) * bw + x];
  };
  // W, NW, N, NE, E, SE, S, SW: clockwise with y pointing down.
  static const int dx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  static const int dy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
  auto dir_of = [](int ddx, int ddy) {
    for (int d = 0; d < 8; ++d)
      if (dx[d] == ddx && dy[d] == ddy) return d;
    return 0;
  };

  const int sx = blob.pixels.front() % blob.raster_width - x0;
  const int sy = blob.pixels.front() / blob.raster_width - y0;
  std::vector<Vec2> out{Vec2(sx + x0, sy + y0)};
  int cx = sx, cy = sy, back = 0;  // the pixel west of the first one is outside
  const int start_back = back;
  const std::size_t limit = 4 * blob.pixels.size() + 8;
  for (std::size_t it = 0; it < limit; ++it) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      if (in(cx + dx[d], cy + dy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const int pd = (found + 7) % 8;
    const int bx = cx + dx[pd], by = cy + dy[pd];
    cx += dx[found];
    cy += dy[found];
    back = dir_of(bx - cx, by - cy);
    if (cx == sx && cy == sy && back == start_back) break;
    out.emplace_back(cx + x0, cy + y0);
  }
  return out;
}

EllipseParams fit_ellipse(const Blob& blob) {
  if (blob.area < 6) throw Error(ErrorCode::kNotAnEllipse, "blob has fewer than 6 pixels");
  const auto boundary = trace_boundary(blob);
  std::set<std::int32_t> members(blob.pixels.begin(), blob.pixels.end());
  std::set<std::pair<int, int>> cracks;  // doubled coordinates
  for (const auto& b : boundary) {
    const int x = static_cast<int>(b.x()), y = static_cast<int>(b.y());
    const int nx[4] = {x - 1, x + 1, x, x};
    const int ny[4] = {y, y, y - 1, y + 1};
    for (int k = 0; k < 4; ++k) {
      const bool out = nx[k] < 0 || ny[k] < 0 || nx[k] >= blob.raster_width ||
                       !members.count(ny[k] * blob.raster_width + nx[k]);
      if (out) cracks.emplace(x + nx[k], y + ny[k]);
    }
  }
  std::vector<Vec2> pts;
  pts.reserve(cracks.size());
  for (const auto& [x2, y2] : cracks) pts.emplace_back(0.5 * x2, 0.5 * y2);
  return fit_ellipse_points(pts);
}

EllipseParams fit_ellipse_points(std::span<const Vec2> points) {
  if (points.size() < 6) throw Error(ErrorCode::kNotAnEllipse, "need at least 6 boundary points");
  Vec2 mean = Vec2::Zero();
  for (const auto& q : points) mean += q;
  mean /= static_cast<double>(points.size());
  double scale = 0.0;
  for (const auto& q : points) scale += (q - mean).norm();
  scale = scale / static_cast<double>(points.size());
  if (!(scale > 0.0)) throw Error(ErrorCode::kNotAnEllipse, "boundary points coincide");

  // Halir-Flusser split of the Fitzgibbon scatter matrix.
  Eigen::Matrix3d s1 = Eigen::Matrix3d::Zero(), s2 = Eigen::Matrix3d::Zero(), s3 = Eigen::Matrix3d::Zero();
  for (const auto& q : points) {
    const Vec2 r = (q - mean) / scale;
    const Eigen::Vector3d d1(r.x() * r.x(), r.x() * r.y(), r.y() * r.y());
    const Eigen::Vector3d d2(r.x(), r.y(), 1.0);
    s1 += d1 * d1.transpose();
    s2 += d1 * d2.transpose();
    s3 += d2 * d2.transpose();
  }
  Eigen::FullPivLU<Eigen::Matrix3d> lu(s3);
  if (!lu.isInvertible()) throw Error(ErrorCode::kNotAnEllipse, "boundary points are collinear");
  const Eigen::Matrix3d t = -lu.solve(s2.transpose());
  const Eigen::Matrix3d m = s1 + s2 * t;
  Eigen::Matrix3d mc;
  mc.row(0) = m.row(2) / 2.0;
  mc.row(1) = -m.row(1);
  mc.row(2) = m.row(0) / 2.0;
  Eigen::EigenSolver<Eigen::Matrix3d> es(mc);
  int pick = -1;
  double best = std::numeric_limits<double>::max();
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d v = es.eigenvectors().col(i).real();
    const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
    if (cond > 0.0 && std::abs(es.eigenvalues()(i).imag()) < 1e-12) {
      // Several admissible vectors only arise numerically; keep the smallest eigenvalue.
      const double ev = es.eigenvalues()(i).real();
      if (pick < 0 || ev < best) {
        best = ev;
        pick = i;
      }
    }
  }
  if (pick < 0) throw Error(ErrorCode::kNotAnEllipse, "no elliptic solution");
  const Eigen::Vector3d a1 = es.eigenvectors().col(pick).real();
  const Eigen::Vector3d a2 = t * a1;

  // Conic in normalized coordinates, then in raster coordinates.
  Eigen::Matrix3d qn;
  qn << a1(0), a1(1) / 2, a2(0) / 2, a1(1) / 2, a1(2), a2(1) / 2, a2(0) / 2, a2(1) / 2, a2(2);
  Eigen::Matrix3d tn;
  tn << 1.0 / scale, 0, -mean.x() / scale, 0, 1.0 / scale, -mean.y() / scale, 0, 0, 1;
  Eigen::Matrix3d q = tn.transpose() * qn * tn;
  const double aa = q(0, 0), bb = 2.0 * q(0, 1), cc = q(1, 1), dd = 2.0 * q(0, 2), ee = 2.0 * q(1, 2), ff = q(2, 2);

  Eigen::Matrix2d lin;
  lin << 2 * aa, bb, bb, 2 * cc;
  if (std::abs(lin.determinant()) < 1e-300) throw Error(ErrorCode::kNotAnEllipse, "degenerate conic");
  const Vec2 c = lin.inverse() * Vec2(-dd, -ee);
  const double f0 = aa * c.x() * c.x() + bb * c.x() * c.y() + cc * c.y() * c.y() + dd * c.x() + ee * c.y() + ff;
  Eigen::Matrix2d quad;
  quad << aa, bb / 2, bb / 2, cc;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> se(quad);
  const double l0 = se.eigenvalues()(0), l1 = se.eigenvalues()(1);
  const double r0 = -f0 / l0, r1 = -f0 / l1;
  if (!(r0 > 0.0 && r1 > 0.0)) throw Error(ErrorCode::kNotAnEllipse, "conic is not a real ellipse");

  EllipseParams e;
  e.center = c;
  // Smaller |eigenvalue| belongs to the longer axis.
  if (std::abs(l0) <= std::abs(l1)) {
    e.a = std::sqrt(r0);
    e.b = std::sqrt(r1);
    e.theta = std::atan2(se.eigenvectors()(1, 0), se.eigenvectors()(0, 0));
  } else {
    e.a = std::sqrt(r1);
    e.b = std::sqrt(r0);
    e.theta = std::atan2(se.eigenvectors()(1, 1), se.eigenvectors()(0, 1));
  }
  if (e.theta > M_PI / 2) e.theta -= M_PI;
  if (e.theta <= -M_PI / 2) e.theta += M_PI;

  // Sampson distance, in pixels.
  double sq = 0.0;
  for (const auto& pt : points) {
    const double x = pt.x(), y = pt.y();
    const double val = aa * x * x + bb * x * y + cc * y * y + dd * x + ee * y + ff;
    const Vec2 grad(2 * aa * x + bb * y + dd, bb * x + 2 * cc * y + ee);
    const double g = grad.norm();
    sq += g > 0.0 ? (val / g) * (val / g) : 0.0;
  }
  e.residual = std::sqrt(sq / static_cast<double>(points.size()));
  return e;
}

}  // namespace chiefray
