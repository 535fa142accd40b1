#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chiefray/geometry.hpp"
#include "chiefray/graycode.hpp"
#include "chiefray/image.hpp"

namespace chiefray {

// Thin-lens projector. The lens sits at the world origin with its optical axis on
// +z; the panel is parallel to the lens plane at the image distance behind it.
struct ProjectorModel {
  int width = 512;
  int height = 384;
  double pixel_pitch = 0.01;              // mm/px on the panel
  Vec2 image_plane_offset = Vec2::Zero();  // panel centre relative to the axis, mm
  double lens_focal_length = 11.0;        // mm
  double aperture_diameter = 6.0;         // mm
  double focus_distance = 1000.0;         // mm, plane of sharp focus

  double image_distance() const { return 1.0 / (1.0 / lens_focal_length - 1.0 / focus_distance); }
};

struct PinholeMask {
  int rows = 19;
  int cols = 24;
  double pitch = 5.0;           // mm
  double hole_diameter = 0.3;   // mm
  PlaneFrame frame;             // extent covers the grid plus half a pitch margin

  int hole_count() const { return rows * cols; }
  // Pinhole centre in plane-local coordinates; the grid is centred on the frame.
  Vec2 hole_local(int row, int col) const {
    return {(col - 0.5 * (cols - 1)) * pitch, (row - 0.5 * (rows - 1)) * pitch};
  }
  Vec3 hole_world(int row, int col) const { return frame.to_world(hole_local(row, col)); }
};

struct ScannerModel {
  PlaneFrame frame;
  double dpi = 200.0;

  double pixel_size() const { return 25.4 / dpi; }  // mm
  int raster_width() const { return static_cast<int>(frame.width / pixel_size()); }
  int raster_height() const { return static_cast<int>(frame.height / pixel_size()); }
  // Raster coordinates put pixel centres on integers; (0, 0) is the first pixel.
  Vec2 raster_to_local(const Vec2& r) const;
  Vec2 local_to_raster(const Vec2& l) const;
  Vec3 raster_to_world(const Vec2& r) const { return frame.to_world(raster_to_local(r)); }
};

struct BenchConfig {
  ProjectorModel projector;
  std::vector<PinholeMask> masks;
  ScannerModel scanner;
  std::uint64_t rng_seed = 7;
  int rays_per_pixel_sample = 256;
  // 0 models infinitely thin masks; otherwise rays must clear a cylindrical hole of
  // this depth behind the front face.
  double mask_thickness = 0.0;
  // Additive Gaussian sensor noise on the rendered scans, as a fraction of the peak
  // white irradiance. Applied by synth_dataset, never by the renderer.
  double sensor_noise = 0.0;
};

// Throws Error(kValidation) naming the violated rule.
void validate_bench(const BenchConfig& bench);

Intrinsics ground_truth_intrinsics(const ProjectorModel& projector);

// Panel point of a projector pixel in world coordinates (z = -image distance).
Vec3 panel_point(const ProjectorModel& projector, const PixelPoint& px);
// Point of sharp focus conjugate to a projector pixel.
Vec3 conjugate_point(const ProjectorModel& projector, const PixelPoint& px);

struct RayHit {
  int mask_id = -1;     // mask the ray passed, -1 when the bench has no masks
  int pinhole_id = -1;  // row * cols + col within that mask
  Vec3 world;           // intersection with the scanner plane
  Vec2 raster;          // scanner raster coordinates
};

// lens_sample is a point on the lens plane relative to the axis, inside the aperture.
// Rays converge on the pixel's conjugate point; with masks present only rays through
// a pinhole survive (everything else is stopped by the masks or their housing).
std::optional<RayHit> trace_ray(const BenchConfig& bench, const PixelPoint& pixel, const Vec2& lens_sample);

// Per-ray energy bookkeeping for a bench: which projector pixel deposits how much
// energy in which scanner raster cell. Rendering any frame is a masked sum over it.
struct LightTransport {
  struct Entry {
    std::int32_t pixel;   // v * width + u
    std::int32_t raster;  // y * raster_width + x
    float weight;
  };
  // All rays of one projector pixel through one pinhole.
  struct Bundle {
    std::int32_t mask_id;
    std::int32_t pinhole_id;
    std::int32_t pixel;
    std::uint32_t first_entry;
    std::uint32_t entry_count;
    double energy;
  };
  int raster_width = 0;
  int raster_height = 0;
  int projector_width = 0;
  int projector_height = 0;
  std::vector<Entry> entries;
  std::vector<Bundle> bundles;

  // Dominant illuminating projector pixel per raster cell, -1 where unlit.
  std::vector<std::int32_t> dominant_pixel() const;
};

LightTransport build_transport(const BenchConfig& bench);

ScanImage render_scan(const LightTransport& transport, const BinaryImage& frame);
ScanImage render_scan(const BenchConfig& bench, const BinaryImage& frame);

struct ChiefRayTruth {
  int mask_id = 0;
  int row = 0;
  int col = 0;
  int pinhole_id = 0;
  Vec3 pinhole_world;
  PixelPoint chief_pixel;
  Vec3 scanner_world;
  Vec2 scanner_local;
  Vec2 scanner_raster;
  bool on_device = false;   // chief pixel lies on the panel
  bool on_scanner = false;  // chief ray reaches the scanner inside its extent
};

// Analytic chief-ray table: the chief pixel of a pinhole is the pixel whose ray
// through the lens centre meets the pinhole centre.
std::vector<ChiefRayTruth> chief_ray_table(const BenchConfig& bench);

struct SynthDataset {
  PatternStack stack;
  std::vector<ScanImage> scans;
  Intrinsics intrinsics;
  std::vector<ChiefRayTruth> chief_rays;
  LightTransport transport;
};

SynthDataset synth_dataset(const BenchConfig& bench);

// Shirley-Chiu concentric mapping of [0,1)^2 onto the unit disc.
Vec2 concentric_disc(double a, double b);

}  // namespace chiefray
