#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "chiefray/optics.hpp"

namespace chiefray {

// JSON form of a bench: lengths in mm, angles in degrees, rotations applied as
// Rz * Ry * Rx. Mask sheets span the hole grid plus half a pitch on each side.
// Schema problems raise Error(kSchema) with the offending field path.
BenchConfig bench_from_json(const nlohmann::json& j);
nlohmann::json bench_to_json(const BenchConfig& bench);

BenchConfig load_bench(const std::filesystem::path& path);
void save_bench(const std::filesystem::path& path, const BenchConfig& bench);

PinholeMask make_mask(int rows, int cols, double pitch, double hole_diameter, const Vec3& position_mm,
                      const Vec3& rotation_deg);
ScannerModel make_scanner(const Vec3& position_mm, const Vec3& rotation_deg, const Vec2& extent_mm, double dpi);

// Two 19x24 masks at +-20 deg yaw 250 mm out, scanner 450 mm out pitched by
// `scanner_pitch_deg` about the x axis.
BenchConfig default_bench(double scanner_pitch_deg = 45.0);

}  // namespace chiefray
