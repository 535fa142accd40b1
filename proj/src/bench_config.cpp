#include "chiefray/bench_config.hpp"

#include <cmath>
#include <fstream>

namespace chiefray {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kSchema, path + ": " + what);
}

const json& field(const json& obj, const std::string& path, const char* key) {
  if (!obj.is_object()) schema_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(path + "." + key, "missing");
  return *it;
}

double number(const json& obj, const std::string& path, const char* key) {
  const json& v = field(obj, path, key);
  if (!v.is_number()) schema_error(path + "." + key, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) schema_error(path + "." + key, "must be finite");
  return x;
}

double positive(const json& obj, const std::string& path, const char* key) {
  const double x = number(obj, path, key);
  if (!(x > 0.0)) schema_error(path + "." + key, "must be positive");
  return x;
}

int positive_int(const json& obj, const std::string& path, const char* key) {
  const json& v = field(obj, path, key);
  if (!v.is_number_integer()) schema_error(path + "." + key, "expected an integer");
  const auto x = v.get<long long>();
  if (x < 1 || x > (1 << 24)) schema_error(path + "." + key, "must be a positive integer");
  return static_cast<int>(x);
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& obj, const std::string& path, const char* key) {
  const json& v = field(obj, path, key);
  if (!v.is_array() || v.size() != N) schema_error(path + "." + key, "expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number())
      schema_error(path + "." + key + "[" + std::to_string(i) + "]", "expected a number");
    out(i) = v[static_cast<std::size_t>(i)].get<double>();
    if (!std::isfinite(out(i))) schema_error(path + "." + key + "[" + std::to_string(i) + "]", "must be finite");
  }
  return out;
}

Vec3 euler_deg(const Mat3& r) {
  const double ry = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double rx = std::atan2(r(2, 1), r(2, 2));
  const double rz = std::atan2(r(1, 0), r(0, 0));
  Vec3 deg = Vec3(rx, ry, rz) * (180.0 / M_PI);
  // Drop round-off so configs stay readable.
  for (int i = 0; i < 3; ++i) deg(i) = std::round(deg(i) * 1e9) / 1e9 + 0.0;
  return deg;
}

json array(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

PinholeMask make_mask(int rows, int cols, double pitch, double hole_diameter, const Vec3& position_mm,
                      const Vec3& rotation_deg) {
  PinholeMask m;
  m.rows = rows;
  m.cols = cols;
  m.pitch = pitch;
  m.hole_diameter = hole_diameter;
  m.frame.pose = RigidPose::from_euler_deg(rotation_deg, position_mm);
  m.frame.width = cols * pitch;
  m.frame.height = rows * pitch;
  return m;
}

ScannerModel make_scanner(const Vec3& position_mm, const Vec3& rotation_deg, const Vec2& extent_mm, double dpi) {
  ScannerModel s;
  s.frame.pose = RigidPose::from_euler_deg(rotation_deg, position_mm);
  s.frame.width = extent_mm.x();
  s.frame.height = extent_mm.y();
  s.dpi = dpi;
  return s;
}

BenchConfig default_bench(double scanner_pitch_deg) {
  BenchConfig b;
  b.projector.width = 640;
  b.projector.height = 360;
  b.projector.image_plane_offset = Vec2(0.0, 0.8);
  b.masks.push_back(make_mask(19, 24, 5.0, 0.3, Vec3(-70.0, -17.5, 250.0), Vec3(0.0, -20.0, 0.0)));
  b.masks.push_back(make_mask(19, 24, 5.0, 0.3, Vec3(70.0, -17.5, 250.0), Vec3(0.0, 20.0, 0.0)));
  b.rays_per_pixel_sample = 128;

  // Fit the scanner extent to the chief-ray footprint of the visible pinholes.
  b.scanner = make_scanner(Vec3(0.0, 0.0, 450.0), Vec3(scanner_pitch_deg, 0.0, 0.0), Vec2(1.0, 1.0), 200.0);
  const Intrinsics k = ground_truth_intrinsics(b.projector);
  Vec2 lo = Vec2::Constant(1e300), hi = Vec2::Constant(-1e300);
  for (const auto& m : b.masks) {
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < m.cols; ++c) {
        const Vec3 h = m.hole_world(r, c);
        const double u = k.cx + k.fx * h.x() / h.z(), v = k.cy + k.fy * h.y() / h.z();
        if (u < 0.0 || v < 0.0 || u > b.projector.width - 1.0 || v > b.projector.height - 1.0) continue;
        const Vec3 dir = h.normalized();
        const Vec2 q = b.scanner.frame.to_local(dir * b.scanner.frame.intersect(Vec3::Zero(), dir));
        lo = lo.cwiseMin(q);
        hi = hi.cwiseMax(q);
      }
    }
  }
  const double margin = 12.0;
  const Vec2 centre = 0.5 * (lo + hi);
  b.scanner.frame.pose.translation = b.scanner.frame.to_world(centre);
  b.scanner.frame.width = std::ceil(hi.x() - lo.x() + 2.0 * margin);
  b.scanner.frame.height = std::ceil(hi.y() - lo.y() + 2.0 * margin);
  return b;
}

BenchConfig bench_from_json(const json& j) {
  BenchConfig b;
  const json& p = field(j, "$", "projector");
  const std::string pp = "$.projector";
  b.projector.width = positive_int(p, pp, "width");
  b.projector.height = positive_int(p, pp, "height");
  b.projector.pixel_pitch = positive(p, pp, "pixel_pitch_mm");
  b.projector.image_plane_offset = vec<2>(p, pp, "image_plane_offset_mm");
  b.projector.lens_focal_length = positive(p, pp, "lens_focal_length_mm");
  b.projector.aperture_diameter = positive(p, pp, "aperture_diameter_mm");
  b.projector.focus_distance = positive(p, pp, "focus_distance_mm");

  const json& masks = field(j, "$", "masks");
  if (!masks.is_array()) schema_error("$.masks", "expected an array");
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const std::string mp = "$.masks[" + std::to_string(i) + "]";
    const json& m = masks[i];
    b.masks.push_back(make_mask(positive_int(m, mp, "rows"), positive_int(m, mp, "cols"), positive(m, mp, "pitch_mm"),
                                positive(m, mp, "hole_diameter_mm"), vec<3>(m, mp, "position_mm"),
                                vec<3>(m, mp, "rotation_deg")));
  }
  if (j.contains("mask_thickness_mm")) {
    b.mask_thickness = number(j, "$", "mask_thickness_mm");
    if (b.mask_thickness < 0.0) schema_error("$.mask_thickness_mm", "must be >= 0");
  }

  const json& s = field(j, "$", "scanner");
  const std::string sp = "$.scanner";
  const Vec2 extent = vec<2>(s, sp, "extent_mm");
  if (!(extent.x() > 0.0 && extent.y() > 0.0)) schema_error(sp + ".extent_mm", "must be positive");
  b.scanner = make_scanner(vec<3>(s, sp, "position_mm"), vec<3>(s, sp, "rotation_deg"), extent, positive(s, sp, "dpi"));

  if (j.contains("rng_seed")) {
    const json& seed = j["rng_seed"];
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
      schema_error("$.rng_seed", "expected a non-negative integer");
    b.rng_seed = seed.get<std::uint64_t>();
  }
  if (j.contains("rays_per_pixel_sample")) b.rays_per_pixel_sample = positive_int(j, "$", "rays_per_pixel_sample");
  if (j.contains("sensor_noise")) {
    b.sensor_noise = number(j, "$", "sensor_noise");
    if (b.sensor_noise < 0.0) schema_error("$.sensor_noise", "must be >= 0");
  }
  return b;
}

json bench_to_json(const BenchConfig& b) {
  json j;
  const auto& p = b.projector;
  j["projector"] = {{"width", p.width},
                    {"height", p.height},
                    {"pixel_pitch_mm", p.pixel_pitch},
                    {"image_plane_offset_mm", array(p.image_plane_offset)},
                    {"lens_focal_length_mm", p.lens_focal_length},
                    {"aperture_diameter_mm", p.aperture_diameter},
                    {"focus_distance_mm", p.focus_distance}};
  j["masks"] = json::array();
  for (const auto& m : b.masks) {
    j["masks"].push_back({{"rows", m.rows},
                          {"cols", m.cols},
                          {"pitch_mm", m.pitch},
                          {"hole_diameter_mm", m.hole_diameter},
                          {"position_mm", array(m.frame.pose.translation)},
                          {"rotation_deg", array(euler_deg(m.frame.pose.rotation))}});
  }
  j["mask_thickness_mm"] = b.mask_thickness;
  j["scanner"] = {{"position_mm", array(b.scanner.frame.pose.translation)},
                  {"rotation_deg", array(euler_deg(b.scanner.frame.pose.rotation))},
                  {"extent_mm", array(Vec2(b.scanner.frame.width, b.scanner.frame.height))},
                  {"dpi", b.scanner.dpi}};
  j["rng_seed"] = b.rng_seed;
  j["rays_per_pixel_sample"] = b.rays_per_pixel_sample;
  j["sensor_noise"] = b.sensor_noise;
  return j;
}

BenchConfig load_bench(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kSchema, path.string() + ": " + e.what());
  }
  return bench_from_json(j);
}

void save_bench(const std::filesystem::path& path, const BenchConfig& bench) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << bench_to_json(bench).dump(2) << "\n";
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace chiefray
