#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "chiefray/geometry.hpp"
#include "chiefray/image.hpp"
#include "chiefray/optics.hpp"

namespace chiefray {

struct EllipseParams {
  Vec2 center = Vec2::Zero();  // raster coordinates
  double a = 0.0;              // semi-major axis, px
  double b = 0.0;              // semi-minor axis, px
  double theta = 0.0;          // orientation of the major axis, rad
  double residual = 0.0;       // RMS algebraic distance of the boundary samples
};

struct Blob {
  int id = 0;
  int raster_width = 0;
  std::vector<std::int32_t> pixels;  // raster indices, ascending
  int area = 0;
  Vec2 centroid = Vec2::Zero();
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  std::optional<EllipseParams> ellipse;
};

struct SegmentOptions {
  int min_blob_area = 20;
  // Components touching the raster edge are clipped blobs and are discarded.
  bool drop_border = true;
  // Raise overlapping-blobs for components that look like merged blobs.
  bool check_overlap = true;
};

// Otsu threshold and 4-connected components on the all-white scan. Blob ids are
// assigned in raster scan order of the first pixel. Throws kEmptyField.
std::vector<Blob> segment_blobs(const ScanImage& white, const SegmentOptions& options = {});

// Otsu threshold over a 256-bin histogram spanning [0, max].
double otsu_threshold(std::span<const float> values);

// k-means on blob centroids with farthest-point seeding from blob 0. Labels are
// renumbered by ascending mean raster x of the clusters.
std::vector<int> cluster_masks(std::span<const Blob> blobs, int k);

struct GridEntry {
  int blob_index = 0;  // into the span passed to recognize_grid
  int mask_id = 0;
  int row = 0;
  int col = 0;
  Vec2 local;       // (col * pitch, row * pitch) on the mask plane, mm
  Vec3 world;       // pinhole point if the top-left detected blob is hole (0, 0)
  double confidence = 0.0;
};

struct PinholeGridAssignment {
  std::vector<GridEntry> entries;
  std::vector<int> dropped;  // blob indices inconsistent with the lattice
  Vec2 basis_col = Vec2::Zero();  // raster step for col + 1
  Vec2 basis_row = Vec2::Zero();  // raster step for row + 1
};

// Lattice basis by consensus over nearest-neighbour difference vectors, then
// breadth-first index growing with local basis updates. Indices are anchored so the
// smallest detected row and column are 0. Throws kGridNotFound.
PinholeGridAssignment recognize_grid(std::span<const Blob> blobs, const PinholeMask& mask, int mask_id = 0);

// Direct least-squares ellipse fit to the crack midpoints of the traced outer
// boundary. Throws kNotAnEllipse.
EllipseParams fit_ellipse(const Blob& blob);
// Same fit on explicit boundary points.
EllipseParams fit_ellipse_points(std::span<const Vec2> points);

// Outer boundary pixels of a blob in Moore tracing order.
std::vector<Vec2> trace_boundary(const Blob& blob);

}  // namespace chiefray
