#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include <gtest/gtest.h>

#include "chiefray/blobfield.hpp"
#include "support.hpp"

using namespace chiefray;

namespace {

Blob raster_blob(int w, int h, const std::function<bool(double, double)>& inside) {
  Blob b;
  b.raster_width = w;
  b.min_x = w;
  b.min_y = h;
  Vec2 sum = Vec2::Zero();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (inside(x, y)) {
        b.pixels.push_back(y * w + x);
        sum += Vec2(x, y);
        b.min_x = std::min(b.min_x, x);
        b.max_x = std::max(b.max_x, x);
        b.min_y = std::min(b.min_y, y);
        b.max_y = std::max(b.max_y, y);
      }
  b.area = static_cast<int>(b.pixels.size());
  b.centroid = sum / b.area;
  return b;
}

Blob point_blob(int id, const Vec2& c) {
  Blob b;
  b.id = id;
  b.centroid = c;
  b.area = 50;
  return b;
}

PinholeMask grid_mask() {
  PinholeMask m;
  m.rows = 19;
  m.cols = 24;
  return m;
}

Mat3 perspective_lattice() {
  Mat3 h;
  h << 14.0, -1.0, 0.0, 1.5, 10.0, 0.0, 0.004, 0.003, 1.0;
  return h;
}

// Image of the hole lattice under h with sub-pixel jitter.
std::vector<Blob> lattice(const std::set<std::pair<int, int>>& skip, std::vector<std::pair<int, int>>& truth,
                          const Vec2& origin = Vec2(50, 40), const Mat3& h = perspective_lattice()) {
  std::mt19937 rng(3);
  std::normal_distribution<double> jitter(0.0, 0.2);
  std::vector<Blob> out;
  for (int r = 0; r < 19; ++r)
    for (int c = 0; c < 24; ++c) {
      if (skip.count({r, c})) continue;
      const Vec3 q = h * Vec3(c, r, 1.0);
      const Vec2 p = origin + q.head<2>() / q.z();
      out.push_back(point_blob(static_cast<int>(out.size()), p + Vec2(jitter(rng), jitter(rng))));
      truth.emplace_back(r, c);
    }
  return out;
}

}  // namespace

TEST(Segment, DetectsVisiblePinholes) {
  const auto& f = test::tilted();
  std::set<int> hit;
  int visible = 0;
  for (const auto& c : f.ds.chief_rays) {
    if (!c.on_device || !c.on_scanner) continue;
    ++visible;
    const int b = f.blob_at(c.scanner_raster);
    if (b >= 0) hit.insert(b);
  }
  EXPECT_LE(f.table.blobs.size(), 2u * 19u * 24u);
  EXPECT_GE(static_cast<double>(hit.size()), 0.8 * visible);
}

TEST(Segment, BlobInvariants) {
  const auto& f = test::tilted();
  std::set<std::tuple<int, int, int>> ids;
  for (std::size_t i = 0; i < f.table.blobs.size(); ++i) {
    const auto& b = f.table.blobs[i];
    EXPECT_GE(b.area, 20);
    EXPECT_TRUE(std::is_sorted(b.pixels.begin(), b.pixels.end()));
    if (b.ellipse) {
      EXPECT_GE(b.ellipse->a, b.ellipse->b);
      EXPECT_GT(b.ellipse->b, 0.0);
    }
    const auto& r = f.table.records[i];
    if (r.mask_id < 0) continue;
    EXPECT_TRUE(ids.insert({r.mask_id, r.row, r.col}).second);
    EXPECT_LT(r.row, 19);
    EXPECT_LT(r.col, 24);
  }
}

TEST(Segment, AllBlackIsEmptyField) {
  try {
    segment_blobs(ScanImage(64, 64));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyField);
  }
}

TEST(Segment, SingleDiscCentroid) {
  ScanImage s(100, 80);
  const Vec2 c(40.3, 35.7);
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 100; ++x) s.at(x, y) = (Vec2(x, y) - c).norm() <= 8.0 ? 1.0f : 0.0f;
  const auto blobs = segment_blobs(s);
  ASSERT_EQ(blobs.size(), 1u);
  EXPECT_LT((blobs[0].centroid - c).norm(), 0.1);
}

TEST(Otsu, SeparatesTwoLevels) {
  std::vector<float> v(100, 0.1f);
  v.resize(200, 0.9f);
  const double t = otsu_threshold(v);
  EXPECT_GT(t, 0.1);
  EXPECT_LT(t, 0.9);
}

TEST(Cluster, TwoSeparatedGrids) {
  std::vector<Blob> blobs;
  std::vector<int> truth;
  for (int i = 0; i < 50; ++i) {
    const int side = (i * 7) % 2;
    blobs.push_back(point_blob(i, Vec2(side * 1000.0 + (i % 5) * 20.0, (i / 5) * 20.0)));
    truth.push_back(side);
  }
  const auto labels = cluster_masks(blobs, 2);
  EXPECT_EQ(labels, truth);
}

TEST(Cluster, SingleCluster) {
  std::vector<Blob> blobs;
  for (int i = 0; i < 10; ++i) blobs.push_back(point_blob(i, Vec2(i * 13.0, i * 7.0)));
  for (int l : cluster_masks(blobs, 1)) EXPECT_EQ(l, 0);
}

TEST(Cluster, DuplicatePointsAreDeterministic) {
  std::vector<Blob> blobs;
  for (int i = 0; i < 6; ++i) blobs.push_back(point_blob(i, Vec2(5.0, 5.0)));
  const auto a = cluster_masks(blobs, 2);
  const auto b = cluster_masks(blobs, 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0], a[5]);
}

TEST(Grid, CompleteLattice) {
  std::vector<std::pair<int, int>> truth;
  const auto blobs = lattice({}, truth);
  const auto g = recognize_grid(blobs, grid_mask());
  ASSERT_EQ(g.entries.size(), blobs.size());
  for (const auto& e : g.entries) {
    EXPECT_EQ(e.row, truth[static_cast<std::size_t>(e.blob_index)].first);
    EXPECT_EQ(e.col, truth[static_cast<std::size_t>(e.blob_index)].second);
    EXPECT_DOUBLE_EQ(e.local.x(), e.col * 5.0);
    EXPECT_DOUBLE_EQ(e.local.y(), e.row * 5.0);
  }
}

TEST(Grid, TenPercentDeleted) {
  std::mt19937 rng(9);
  std::set<std::pair<int, int>> skip;
  std::uniform_int_distribution<int> r(0, 18), c(0, 23);
  while (skip.size() < 46) skip.insert({r(rng), c(rng)});
  std::vector<std::pair<int, int>> truth;
  const auto blobs = lattice(skip, truth);
  int min_r = 99, min_c = 99;
  for (const auto& [tr, tc] : truth) {
    min_r = std::min(min_r, tr);
    min_c = std::min(min_c, tc);
  }
  const auto g = recognize_grid(blobs, grid_mask());
  EXPECT_EQ(g.entries.size(), blobs.size());
  for (const auto& e : g.entries) {
    EXPECT_EQ(e.row, truth[static_cast<std::size_t>(e.blob_index)].first - min_r);
    EXPECT_EQ(e.col, truth[static_cast<std::size_t>(e.blob_index)].second - min_c);
  }
}

TEST(Grid, AffineLatticeMatchesBasisForEveryPair) {
  Mat3 h;
  h << 14.0, -1.5, 0.0, 1.5, 10.0, 0.0, 0.0, 0.0, 1.0;
  std::vector<std::pair<int, int>> truth;
  const auto blobs = lattice({}, truth, Vec2(50, 40), h);
  const auto g = recognize_grid(blobs, grid_mask());
  ASSERT_EQ(g.entries.size(), blobs.size());
  const double tol = 0.15 * std::min(g.basis_col.norm(), g.basis_row.norm());
  for (const auto& a : g.entries)
    for (const auto& b : g.entries) {
      const Vec2 d = blobs[static_cast<std::size_t>(b.blob_index)].centroid - blobs[static_cast<std::size_t>(a.blob_index)].centroid;
      ASSERT_LT((d - (b.row - a.row) * g.basis_row - (b.col - a.col) * g.basis_col).norm(), tol);
    }
}

TEST(Grid, SimulatorLatticeIsLocallyConsistent) {
  const auto& f = test::tilted();
  std::set<int> whole;
  for (const auto& s : f.chief)
    if (s.status == SampleStatus::kOk) whole.insert(s.blob_id);
  std::map<std::tuple<int, int, int>, Vec2> at;
  for (const auto& r : f.table.records)
    if (r.mask_id >= 0 && whole.count(r.blob_id)) at[{r.mask_id, r.row, r.col}] = r.centroid;
  ASSERT_GT(at.size(), 300u);
  int checked = 0;
  for (const auto& [k, p] : at) {
    const auto [m, r, c] = k;
    for (const auto& [dr, dc] : {std::pair{0, 1}, std::pair{1, 0}}) {
      const auto prev = at.find({m, r - dr, c - dc}), next = at.find({m, r + dr, c + dc});
      if (prev == at.end() || next == at.end()) continue;
      const Vec2 step = next->second - p;
      EXPECT_LT((step - (p - prev->second)).norm(), 0.15 * step.norm());
      ++checked;
    }
  }
  EXPECT_GT(checked, 500);
}

TEST(Ellipse, CentreBiasGrowsWithScannerTilt) {
  auto bias = [](const BenchConfig& b) {
    const ScanImage white = render_scan(b, BinaryImage(b.projector.width, b.projector.height, 1));
    const auto blobs = segment_blobs(white);
    std::vector<std::int32_t> label(white.size(), -1);
    for (std::size_t i = 0; i < blobs.size(); ++i)
      for (auto p : blobs[i].pixels) label[static_cast<std::size_t>(p)] = static_cast<std::int32_t>(i);
    std::vector<double> d;
    for (const auto& c : chief_ray_table(b)) {
      if (!c.on_device || !c.on_scanner) continue;
      const long x = std::lround(c.scanner_raster.x()), y = std::lround(c.scanner_raster.y());
      if (x < 0 || y < 0 || x >= white.width || y >= white.height) continue;
      const auto id = label[static_cast<std::size_t>(y * white.width + x)];
      if (id >= 0 && blobs[static_cast<std::size_t>(id)].ellipse)
        d.push_back((blobs[static_cast<std::size_t>(id)].ellipse->center - c.scanner_raster).norm());
    }
    EXPECT_GT(d.size(), 300u);
    return test::median(d);
  };
  const BenchConfig tilted = test::test_bench(45.0);
  BenchConfig mid = tilted;
  mid.scanner.frame.pose = RigidPose::from_euler_deg(Vec3(25, 0, 0), tilted.scanner.frame.pose.translation);
  const double b0 = bias(test::test_bench(0.0)), b25 = bias(mid), b45 = bias(tilted);
  EXPECT_LT(b0, 0.2);
  EXPECT_GT(b25, b0);
  EXPECT_GT(b45, b25);
  EXPECT_GT(b45 - b0, 0.05);
}

TEST(Grid, CollinearBlobsFail) {
  const std::vector<Blob> blobs{point_blob(0, {0, 0}), point_blob(1, {10, 0}), point_blob(2, {20, 0})};
  try {
    recognize_grid(blobs, grid_mask());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGridNotFound);
  }
}

TEST(Ellipse, RasterizedEllipse) {
  const Vec2 c(80.4, 60.7);
  const double a = 30.0, b = 18.0, t = 0.3;
  const Blob blob = raster_blob(160, 120, [&](double x, double y) {
    const Vec2 d(x - c.x(), y - c.y());
    const double u = d.x() * std::cos(t) + d.y() * std::sin(t), v = -d.x() * std::sin(t) + d.y() * std::cos(t);
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  });
  const EllipseParams e = fit_ellipse(blob);
  EXPECT_NEAR(e.a, a, 0.005 * a);
  EXPECT_NEAR(e.b, b, 0.005 * b);
  EXPECT_LT((e.center - c).norm(), 0.1);
  EXPECT_NEAR(std::remainder(e.theta - t, M_PI), 0.0, 0.01);
}

TEST(Ellipse, Circle) {
  const Blob blob = raster_blob(80, 80, [](double x, double y) { return std::hypot(x - 40.2, y - 39.6) <= 20.0; });
  const EllipseParams e = fit_ellipse(blob);
  EXPECT_NEAR(e.a, e.b, 0.005 * e.a);
  EXPECT_NEAR(e.a, 20.0, 0.1);
}

TEST(Ellipse, TooSmallBlob) {
  const Blob blob = raster_blob(10, 10, [](double x, double y) { return y == 3 && x >= 2 && x < 7; });
  ASSERT_EQ(blob.area, 5);
  EXPECT_THROW(fit_ellipse(blob), Error);
}

TEST(Ellipse, BoundaryIsClosedRing) {
  const Blob blob = raster_blob(40, 40, [](double x, double y) { return std::hypot(x - 20, y - 20) <= 8.0; });
  const auto ring = trace_boundary(blob);
  ASSERT_GT(ring.size(), 20u);
  for (std::size_t i = 0; i < ring.size(); ++i) EXPECT_LE((ring[i] - ring[(i + 1) % ring.size()]).norm(), 1.5);
}
