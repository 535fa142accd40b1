#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "chiefray/blobfield.hpp"
#include "chiefray/calibrate.hpp"
#include "chiefray/chief.hpp"
#include "chiefray/graycode.hpp"
#include "chiefray/image.hpp"
#include "chiefray/optics.hpp"

namespace chiefray {

namespace fs = std::filesystem;

// 16-bit P5 with the irradiance that maps to 65535 stored in a comment line
// "# irradiance_scale <value>" (value = irradiance * scale).
void write_scan_pgm(const fs::path& path, const ScanImage& image, double scale);
// Reads 8- or 16-bit P5. Values are divided by the irradiance scale when present.
ScanImage read_scan_pgm(const fs::path& path);
// Scale that maps `peak` to 65535.
double irradiance_scale(double peak);
// Rounds values the way write_scan_pgm stores them.
ScanImage quantize_scan(const ScanImage& image, double scale);

void write_frame_pgm(const fs::path& path, const BinaryImage& frame);
BinaryImage read_frame_pgm(const fs::path& path);

// "DMAP1", u32 width, u32 height, then per pixel i32 u, i32 v (-1 when invalid), u8 reason.
// Projector resolution is not part of the format and must be supplied on read.
void write_decoded_map(const fs::path& path, const DecodedMap& map);
DecodedMap read_decoded_map(const fs::path& path, int projector_width, int projector_height);

void write_ground_truth_csv(const fs::path& path, const std::vector<ChiefRayTruth>& truth);

struct BlobRecord {
  int blob_id = 0;
  int mask_id = -1;  // -1 when the blob was not placed on a grid
  int row = -1;
  int col = -1;
  Vec2 centroid = Vec2::Zero();
  int area = 0;
  std::optional<EllipseParams> ellipse;
};
void write_blob_csv(const fs::path& path, const std::vector<BlobRecord>& records);
std::vector<BlobRecord> read_blob_csv(const fs::path& path);

// Scanner coordinates are written as world mm; `scanner` recovers the plane-local
// point and `masks` the grid point on read.
void write_chief_csv(const fs::path& path, const std::vector<ChiefRaySample>& samples);
std::vector<ChiefRaySample> read_chief_csv(const fs::path& path, const ScannerModel& scanner,
                                           const std::vector<PinholeMask>& masks);

nlohmann::json intrinsics_to_json(const Intrinsics& k);
Intrinsics intrinsics_from_json(const nlohmann::json& j);
nlohmann::json pose_to_json(const RigidPose& pose);
RigidPose pose_from_json(const nlohmann::json& j);

nlohmann::json calibration_to_json(const CalibrationResult& result, std::span<const CorrespondenceSet> sets);
// Only the intrinsics and the projector MRPE are required; published reports often
// carry nothing else.
struct CalibrationReport {
  Intrinsics k;
  double mrpe_projector = 0.0;
  std::optional<double> mrpe_scanner;
  std::vector<std::pair<std::string, RigidPose>> views;
  std::vector<int> excluded;  // pinhole ids
  std::vector<double> error_curve;
};
CalibrationReport calibration_from_json(const nlohmann::json& j);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

// Shortest round-trip decimal form.
std::string format_double(double x);

}  // namespace chiefray
