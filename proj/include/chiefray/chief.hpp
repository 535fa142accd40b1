#pragma once

#include <span>
#include <vector>

#include "chiefray/blobfield.hpp"
#include "chiefray/graycode.hpp"
#include "chiefray/image.hpp"
#include "chiefray/optics.hpp"

namespace chiefray {

// Decoded projector coordinates of the valid scanner pixels inside one blob.
// Duplicates are kept.
struct BackprojectedBlob {
  int blob_id = 0;
  std::vector<Vec2> points;
};

struct CircleFit {
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
  double residual = 0.0;  // RMS orthogonal distance, px
};

enum class SampleStatus { kOk, kMissingCode };

struct ChiefRaySample {
  int blob_id = -1;
  int mask_id = -1;
  int pinhole_id = -1;  // row * cols + col in the recognized grid
  int row = 0;
  int col = 0;
  Vec2 mask_local = Vec2::Zero();    // pinhole on its mask plane, mm
  Vec3 pinhole = Vec3::Zero();       // nominal pinhole world point
  PixelPoint chief_pixel;            // p_c
  Vec2 scanner_raster = Vec2::Zero();
  Vec2 scanner_local = Vec2::Zero();  // mm on the scanner plane
  Vec3 scanner_world = Vec3::Zero();
  double residual = 0.0;
  SampleStatus status = SampleStatus::kOk;
};

// kEdge: sub-pixel edge crossings of the blob in the white scan, mapped to the
// projector by a homography fitted to the blob's decoded pixels.
// kHull: hull vertices of the decoded points. kAll: every decoded point.
enum class CircleFitMode { kEdge, kHull, kAll };

struct ChiefOptions {
  int min_backproj_points = 12;
  CircleFitMode fit_mode = CircleFitMode::kEdge;
  double edge_smoothing = 1.5;  // Gaussian sigma on the white scan, scanner px
  double edge_level = 0.5;      // crossing level relative to the local plateau
  // Edge points mapping onto the panel border are dropped; above this fraction the
  // disc is too truncated to fit.
  double max_truncated_fraction = 0.1;
};

BackprojectedBlob backproject(const Blob& blob, const DecodedMap& map, int min_points = 12);

// Weighted Kasa fit refined by Levenberg-Marquardt on orthogonal distances.
// Throws kDegenerateCircle for fewer than 3 points or collinear input.
CircleFit fit_circle(std::span<const Vec2> points, std::span<const double> weights = {});
CircleFit fit_circle(const BackprojectedBlob& blob);

// Points used for the hull-mode fit: hull vertices (collinear ones included) of the
// unique backprojected points, weighted by multiplicity. Points on the panel border
// are dropped since the panel edge truncates the disc there.
void hull_boundary(const BackprojectedBlob& blob, int projector_width, int projector_height,
                   std::vector<Vec2>& points, std::vector<double>& weights);

// Raster -> projector homography fitted to the decoded pixels of a blob.
HomographyFit blob_homography(const Blob& blob, const DecodedMap& map);

// Sub-pixel points where the smoothed white scan crosses edge_level times a plane
// fitted to the blob plateau, one per outer boundary crack.
std::vector<Vec2> edge_points(const Blob& blob, const ScanImage& white, double smoothing = 1.5,
                              double level = 0.5);

// `white` is only read in kEdge mode.
ChiefRaySample extract_chief(const Blob& blob, const DecodedMap& map, const ScanImage& white,
                             const ScannerModel& scanner, const ChiefOptions& options = {});

// Baseline: the ellipse centre on the scanner and the code decoded there.
ChiefRaySample naive_center(const Blob& blob, const DecodedMap& map, const ScannerModel& scanner);

}  // namespace chiefray
