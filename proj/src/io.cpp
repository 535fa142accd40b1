#include "chiefray/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace chiefray {

using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  double scale = 0.0;  // 0 when absent
};

PgmHeader read_pgm_header(std::istream& in, const fs::path& path) {
  PgmHeader h;
  std::string magic;
  in >> magic;
  if (magic != "P5") throw Error(ErrorCode::kIo, path.string() + ": not a binary PGM");
  int* fields[3] = {&h.width, &h.height, &h.maxval};
  for (int i = 0; i < 3;) {
    in >> std::ws;
    if (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      std::istringstream ls(line.substr(1));
      std::string key;
      double value = 0.0;
      if (ls >> key >> value && key == "irradiance_scale") h.scale = value;
      continue;
    }
    if (!(in >> *fields[i])) throw Error(ErrorCode::kIo, path.string() + ": malformed PGM header");
    ++i;
  }
  in.get();
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535)
    throw Error(ErrorCode::kIo, path.string() + ": unsupported PGM header");
  return h;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return x;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kIo, path.string() + ": bad number '" + s + "'");
  }
}

int to_int(const std::string& s, const fs::path& path) {
  int x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw Error(ErrorCode::kIo, path.string() + ": bad integer '" + s + "'");
  return x;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::size_t columns) {
  auto in = open_in(path, false);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, path.string() + ": empty file");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != columns)
      throw Error(ErrorCode::kIo, path.string() + ": expected " + std::to_string(columns) + " columns");
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

double irradiance_scale(double peak) { return peak > 0.0 ? 65535.0 / peak : 1.0; }

ScanImage quantize_scan(const ScanImage& image, double scale) {
  ScanImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double q = std::clamp(std::round(static_cast<double>(image.data[i]) * scale), 0.0, 65535.0);
    out.data[i] = static_cast<float>(q / scale);
  }
  return out;
}

void write_scan_pgm(const fs::path& path, const ScanImage& image, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::kInvalidArgument, "irradiance scale must be positive");
  auto out = open_out(path, true);
  out << "P5\n# irradiance_scale " << format_double(scale) << "\n" << image.width << " " << image.height << "\n65535\n";
  std::vector<unsigned char> buf(image.size() * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto q = static_cast<std::uint16_t>(
        std::clamp(std::round(static_cast<double>(image.data[i]) * scale), 0.0, 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

ScanImage read_scan_pgm(const fs::path& path) {
  auto in = open_in(path, true);
  const PgmHeader h = read_pgm_header(in, path);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  const std::size_t bytes = h.maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(n * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error(ErrorCode::kIo, path.string() + ": truncated PGM");
  const double scale = h.scale > 0.0 ? h.scale : 1.0;
  ScanImage img(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = bytes == 2 ? (buf[2 * i] << 8 | buf[2 * i + 1]) : buf[i];
    img.data[i] = static_cast<float>(v / scale);
  }
  return img;
}

void write_frame_pgm(const fs::path& path, const BinaryImage& frame) {
  auto out = open_out(path, true);
  out << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  std::vector<unsigned char> buf(frame.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = frame.data[i] ? 255 : 0;
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
}

BinaryImage read_frame_pgm(const fs::path& path) {
  const ScanImage img = read_scan_pgm(path);
  BinaryImage frame(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) frame.data[i] = img.data[i] > 0.0f ? 1 : 0;
  return frame;
}

void write_decoded_map(const fs::path& path, const DecodedMap& map) {
  auto out = open_out(path, true);
  auto put32 = [&](std::uint32_t x) {
    const unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                                static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write("DMAP1", 5);
  put32(static_cast<std::uint32_t>(map.width));
  put32(static_cast<std::uint32_t>(map.height));
  for (std::size_t i = 0; i < map.u.size(); ++i) {
    const bool ok = map.valid(i);
    put32(static_cast<std::uint32_t>(ok ? map.u[i] : -1));
    put32(static_cast<std::uint32_t>(ok ? map.v[i] : -1));
    const char reason = static_cast<char>(map.status[i]);
    out.write(&reason, 1);
  }
  finish(out, path);
}

DecodedMap read_decoded_map(const fs::path& path, int projector_width, int projector_height) {
  auto in = open_in(path, true);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "DMAP1", 5) != 0) throw Error(ErrorCode::kIo, path.string() + ": not a DMAP1 file");
  auto get32 = [&]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw Error(ErrorCode::kIo, path.string() + ": truncated");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  };
  DecodedMap map;
  map.width = static_cast<int>(get32());
  map.height = static_cast<int>(get32());
  map.projector_width = projector_width;
  map.projector_height = projector_height;
  const std::size_t n = static_cast<std::size_t>(map.width) * map.height;
  map.u.resize(n);
  map.v.resize(n);
  map.status.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    map.u[i] = static_cast<std::int32_t>(get32());
    map.v[i] = static_cast<std::int32_t>(get32());
    char reason = 0;
    in.read(&reason, 1);
    if (!in) throw Error(ErrorCode::kIo, path.string() + ": truncated");
    if (reason < 0 || reason > 2) throw Error(ErrorCode::kIo, path.string() + ": bad reason code");
    map.status[i] = static_cast<DecodeStatus>(reason);
  }
  return map;
}

void write_ground_truth_csv(const fs::path& path, const std::vector<ChiefRayTruth>& truth) {
  std::ostringstream s;
  s << "pinhole_id,mask_id,u_chief,v_chief,s_x_mm,s_y_mm\n";
  for (const auto& t : truth)
    s << t.pinhole_id << ',' << t.mask_id << ',' << format_double(t.chief_pixel.u) << ','
      << format_double(t.chief_pixel.v) << ',' << format_double(t.scanner_local.x()) << ','
      << format_double(t.scanner_local.y()) << '\n';
  write_text(path, s.str());
}

void write_blob_csv(const fs::path& path, const std::vector<BlobRecord>& records) {
  std::ostringstream s;
  s << "blob_id,mask_id,row,col,cx,cy,area,ell_a,ell_b,ell_theta,residual\n";
  for (const auto& r : records) {
    s << r.blob_id << ',' << r.mask_id << ',' << r.row << ',' << r.col << ',' << format_double(r.centroid.x()) << ','
      << format_double(r.centroid.y()) << ',' << r.area << ',';
    if (r.ellipse)
      s << format_double(r.ellipse->a) << ',' << format_double(r.ellipse->b) << ',' << format_double(r.ellipse->theta)
        << ',' << format_double(r.ellipse->residual);
    else
      s << ",,,";
    s << '\n';
  }
  write_text(path, s.str());
}

std::vector<BlobRecord> read_blob_csv(const fs::path& path) {
  std::vector<BlobRecord> out;
  for (const auto& c : read_csv(path, 11)) {
    BlobRecord r;
    r.blob_id = to_int(c[0], path);
    r.mask_id = to_int(c[1], path);
    r.row = to_int(c[2], path);
    r.col = to_int(c[3], path);
    r.centroid = Vec2(to_double(c[4], path), to_double(c[5], path));
    r.area = to_int(c[6], path);
    if (!c[7].empty()) {
      EllipseParams e;
      e.a = to_double(c[7], path);
      e.b = to_double(c[8], path);
      e.theta = to_double(c[9], path);
      e.residual = to_double(c[10], path);
      r.ellipse = e;
    }
    out.push_back(r);
  }
  return out;
}

void write_chief_csv(const fs::path& path, const std::vector<ChiefRaySample>& samples) {
  std::ostringstream s;
  s << "pinhole_id,mask_id,u_c,v_c,sx_mm,sy_mm,sz_mm,residual,status\n";
  for (const auto& c : samples) {
    s << c.pinhole_id << ',' << c.mask_id << ',';
    if (c.status == SampleStatus::kOk)
      s << format_double(c.chief_pixel.u) << ',' << format_double(c.chief_pixel.v) << ','
        << format_double(c.scanner_world.x()) << ',' << format_double(c.scanner_world.y()) << ','
        << format_double(c.scanner_world.z()) << ',' << format_double(c.residual) << ",ok\n";
    else
      s << ",,,,,,missing-code\n";
  }
  write_text(path, s.str());
}

std::vector<ChiefRaySample> read_chief_csv(const fs::path& path, const ScannerModel& scanner,
                                           const std::vector<PinholeMask>& masks) {
  std::vector<ChiefRaySample> out;
  for (const auto& c : read_csv(path, 9)) {
    ChiefRaySample s;
    s.pinhole_id = to_int(c[0], path);
    s.mask_id = to_int(c[1], path);
    if (s.mask_id < 0 || s.mask_id >= static_cast<int>(masks.size()))
      throw Error(ErrorCode::kIo, path.string() + ": mask id out of range");
    const auto& m = masks[static_cast<std::size_t>(s.mask_id)];
    s.row = s.pinhole_id / m.cols;
    s.col = s.pinhole_id % m.cols;
    s.mask_local = Vec2(s.col * m.pitch, s.row * m.pitch);
    if (c[8] == "ok") {
      s.chief_pixel = {to_double(c[2], path), to_double(c[3], path)};
      s.scanner_world = Vec3(to_double(c[4], path), to_double(c[5], path), to_double(c[6], path));
      s.scanner_local = scanner.frame.to_local(s.scanner_world);
      s.scanner_raster = scanner.local_to_raster(s.scanner_local);
      s.residual = to_double(c[7], path);
    } else if (c[8] == "missing-code") {
      s.status = SampleStatus::kMissingCode;
    } else {
      throw Error(ErrorCode::kIo, path.string() + ": unknown status '" + c[8] + "'");
    }
    out.push_back(s);
  }
  return out;
}

json intrinsics_to_json(const Intrinsics& k) { return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}}; }

Intrinsics intrinsics_from_json(const json& j) {
  try {
    Intrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(), j.at("cy").get<double>()};
    k.validate();
    return k;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("intrinsics: ") + e.what());
  }
}

json pose_to_json(const RigidPose& pose) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) r.push_back(pose.rotation(i, c));
  return {{"R", r}, {"t", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

RigidPose pose_from_json(const json& j) {
  try {
    const auto& r = j.at("R");
    const auto& t = j.at("t");
    if (r.size() != 9 || t.size() != 3) throw Error(ErrorCode::kSchema, "pose: R needs 9 and t 3 entries");
    RigidPose p;
    for (int i = 0; i < 9; ++i) p.rotation(i / 3, i % 3) = r[static_cast<std::size_t>(i)].get<double>();
    for (int i = 0; i < 3; ++i) p.translation(i) = t[static_cast<std::size_t>(i)].get<double>();
    if (!p.is_valid(1e-6)) throw Error(ErrorCode::kSchema, "pose: R is not a rotation");
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("pose: ") + e.what());
  }
}

json calibration_to_json(const CalibrationResult& result, std::span<const CorrespondenceSet> sets) {
  json j = intrinsics_to_json(result.k);
  j["mrpe_projector_px"] = result.mrpe_projector;
  j["mrpe_scanner_px"] = result.mrpe_scanner;
  j["views"] = json::array();
  for (std::size_t i = 0; i < result.poses.size(); ++i) {
    json v = pose_to_json(result.poses[i]);
    v["plane"] = plane_name(result.planes[i]);
    j["views"].push_back(v);
  }
  j["excluded"] = json::array();
  for (int e : result.excluded) {
    const auto& s = sets[static_cast<std::size_t>(e)];
    j["excluded"].push_back({{"mask_id", s.mask_id}, {"pinhole_id", s.pinhole_id}});
  }
  j["error_curve"] = result.error_curve;
  j["sets_total"] = result.sets_total;
  j["warnings"] = result.warnings;
  return j;
}

CalibrationReport calibration_from_json(const json& j) {
  CalibrationReport r;
  r.k = intrinsics_from_json(j);
  try {
    r.mrpe_projector = j.at("mrpe_projector_px").get<double>();
    if (j.contains("mrpe_scanner_px") && !j.at("mrpe_scanner_px").is_null())
      r.mrpe_scanner = j.at("mrpe_scanner_px").get<double>();
    for (const auto& v : j.value("views", json::array()))
      r.views.emplace_back(v.at("plane").get<std::string>(), pose_from_json(v));
    for (const auto& e : j.value("excluded", json::array()))
      r.excluded.push_back(e.is_object() ? e.at("pinhole_id").get<int>() : e.get<int>());
    r.error_curve = j.value("error_curve", std::vector<double>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("calibration report: ") + e.what());
  }
  if (r.mrpe_projector < 0.0 || r.mrpe_scanner.value_or(0.0) < 0.0) throw Error(ErrorCode::kSchema, "negative MRPE");
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path, true);
  out << text;
  finish(out, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  auto in = open_in(path, false);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kSchema, path.string() + ": " + e.what());
  }
}

std::string sha256_file(const fs::path& path) {
  auto in = open_in(path, true);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::kIo, "sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace chiefray
