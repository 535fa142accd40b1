#include "chiefray/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "chiefray/svg_plot.hpp"

namespace chiefray {

using nlohmann::json;

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

BlobRecord record_of(const Blob& b) {
  BlobRecord r;
  r.blob_id = b.id;
  r.centroid = b.centroid;
  r.area = b.area;
  r.ellipse = b.ellipse;
  return r;
}

}  // namespace

PinholeTable detect_pinholes(const ScanImage& white, const BenchConfig& bench, const SegmentOptions& options) {
  PinholeTable t;
  t.blobs = segment_blobs(white, options);
  for (const auto& b : t.blobs) t.records.push_back(record_of(b));
  const int k = static_cast<int>(bench.masks.size());
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "bench has no masks");
  const std::vector<int> labels = cluster_masks(t.blobs, k);
  for (int m = 0; m < k; ++m) {
    std::vector<Blob> group;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < t.blobs.size(); ++i)
      if (labels[i] == m) {
        group.push_back(t.blobs[i]);
        index.push_back(i);
      }
    const PinholeGridAssignment grid = recognize_grid(group, bench.masks[static_cast<std::size_t>(m)], m);
    for (const auto& e : grid.entries) {
      auto& r = t.records[index[static_cast<std::size_t>(e.blob_index)]];
      r.mask_id = m;
      r.row = e.row;
      r.col = e.col;
    }
  }
  return t;
}

PinholeTable attach_records(const ScanImage& white, const std::vector<BlobRecord>& records,
                            const SegmentOptions& options) {
  PinholeTable t;
  t.blobs = segment_blobs(white, options);
  std::map<int, const BlobRecord*> by_id;
  for (const auto& r : records) by_id[r.blob_id] = &r;
  if (by_id.size() != t.blobs.size())
    throw Error(ErrorCode::kStaleChecksum, "blob table lists " + std::to_string(by_id.size()) + " blobs, scan has " +
                                               std::to_string(t.blobs.size()));
  for (const auto& b : t.blobs) {
    auto it = by_id.find(b.id);
    if (it == by_id.end()) throw Error(ErrorCode::kStaleChecksum, "blob " + std::to_string(b.id) + " not in table");
    t.records.push_back(*it->second);
  }
  return t;
}

std::vector<ChiefRaySample> extract_samples(const PinholeTable& table, const DecodedMap& map, const ScanImage& white,
                                            const BenchConfig& bench, bool naive, const ChiefOptions& options) {
  std::vector<ChiefRaySample> out;
  for (std::size_t i = 0; i < table.blobs.size(); ++i) {
    const auto& r = table.records[i];
    if (r.mask_id < 0) continue;
    const auto& mask = bench.masks[static_cast<std::size_t>(r.mask_id)];
    ChiefRaySample s;
    try {
      s = naive ? naive_center(table.blobs[i], map, bench.scanner)
                : extract_chief(table.blobs[i], map, white, bench.scanner, options);
    } catch (const Error&) {
      s = ChiefRaySample{};
      s.blob_id = table.blobs[i].id;
      s.status = SampleStatus::kMissingCode;
    }
    s.mask_id = r.mask_id;
    s.row = r.row;
    s.col = r.col;
    s.pinhole_id = r.row * mask.cols + r.col;
    s.mask_local = Vec2(r.col * mask.pitch, r.row * mask.pitch);
    s.pinhole = mask.frame.to_world(mask.hole_local(0, 0) + s.mask_local);
    out.push_back(s);
  }
  return out;
}

void perturb_scanner_points(std::vector<ChiefRaySample>& samples, double sigma_px, std::uint64_t seed,
                            const ScannerModel& scanner) {
  if (sigma_px < 0.0) throw Error(ErrorCode::kInvalidArgument, "noise sigma must be >= 0");
  if (sigma_px == 0.0) return;
  auto rng = make_rng(seed, 0x6e6f697365);
  std::normal_distribution<double> n(0.0, sigma_px);
  for (auto& s : samples) {
    if (s.status != SampleStatus::kOk) continue;
    const double dx = n(rng), dy = n(rng);
    s.scanner_raster += Vec2(dx, dy);
    s.scanner_local = scanner.raster_to_local(s.scanner_raster);
    s.scanner_world = scanner.frame.to_world(s.scanner_local);
  }
}

std::vector<int> corrupt_samples(std::vector<ChiefRaySample>& samples, double fraction, double shift_px,
                                 std::uint64_t seed, ShiftDirection direction) {
  std::vector<int> ok;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].status == SampleStatus::kOk) ok.push_back(static_cast<int>(i));
  const auto count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ok.size())));
  auto rng = make_rng(seed, 0x636f7272);
  std::shuffle(ok.begin(), ok.end(), rng);
  ok.resize(std::min(count, ok.size()));
  std::sort(ok.begin(), ok.end());
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  const double common = angle(rng);
  for (int i : ok) {
    const double a = direction == ShiftDirection::kCommon ? common : angle(rng);
    auto& p = samples[static_cast<std::size_t>(i)].chief_pixel;
    p.u += shift_px * std::cos(a);
    p.v += shift_px * std::sin(a);
  }
  return ok;
}

Calibration calibrate_samples(const std::vector<ChiefRaySample>& samples, const BenchConfig& bench,
                              double max_exclusion_fraction) {
  Calibration c;
  const int masks = static_cast<int>(bench.masks.size());
  c.views = build_views(samples, masks);
  RobustOptions o;
  o.max_exclusion_fraction = max_exclusion_fraction;
  o.scan_px_per_mm = 1.0 / bench.scanner.pixel_size();
  c.result = robust_calibrate(c.views.sets, masks, o);
  return c;
}

std::vector<Vec3> BoardTarget::corners() const {
  if (rows < 2 || cols < 2 || !(square > 0.0)) throw Error(ErrorCode::kInvalidArgument, "board needs 2x2 corners");
  const RigidPose pose = RigidPose::from_euler_deg(rotation_deg, position);
  std::vector<Vec3> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.push_back(pose.apply(Vec3((c - 0.5 * (cols - 1)) * square, (r - 0.5 * (rows - 1)) * square, 0.0)));
  return out;
}

BoardTarget board_from_json(const json& j) {
  BoardTarget b;
  try {
    b.rows = j.value("rows", b.rows);
    b.cols = j.value("cols", b.cols);
    b.square = j.value("square_mm", b.square);
    if (j.contains("position_mm")) {
      const auto v = j.at("position_mm").get<std::vector<double>>();
      if (v.size() != 3) throw Error(ErrorCode::kSchema, "$.position_mm: expected 3 numbers");
      b.position = Vec3(v[0], v[1], v[2]);
    }
    if (j.contains("rotation_deg")) {
      const auto v = j.at("rotation_deg").get<std::vector<double>>();
      if (v.size() != 3) throw Error(ErrorCode::kSchema, "$.rotation_deg: expected 3 numbers");
      b.rotation_deg = Vec3(v[0], v[1], v[2]);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchema, std::string("board target: ") + e.what());
  }
  if (b.rows < 2 || b.cols < 2 || !(b.square > 0.0)) throw Error(ErrorCode::kSchema, "board target: bad dimensions");
  return b;
}

json board_to_json(const BoardTarget& b) {
  return {{"rows", b.rows},
          {"cols", b.cols},
          {"square_mm", b.square},
          {"position_mm", {b.position.x(), b.position.y(), b.position.z()}},
          {"rotation_deg", {b.rotation_deg.x(), b.rotation_deg.y(), b.rotation_deg.z()}}};
}

DotEvaluation evaluate_board(const Intrinsics& k, const Intrinsics& true_k, const BoardTarget& board) {
  DotEvaluation ev;
  ev.corners = board.corners();
  const RigidPose identity;
  const std::size_t last = ev.corners.size() - 1;
  const std::size_t outer[4] = {0, static_cast<std::size_t>(board.cols - 1), last - (board.cols - 1), last};
  std::vector<Vec3> obj;
  std::vector<PixelPoint> img;
  for (auto i : outer) {
    obj.push_back(ev.corners[i]);
    img.push_back(project(true_k, identity, ev.corners[i]));
  }
  ev.pose = solve_pnp(obj, img, k);
  ev.errors = evaluate_projection(k, ev.pose, true_k, identity, ev.corners);
  double sum = 0.0, sq = 0.0;
  for (double e : ev.errors) sum += e;
  ev.mean = sum / static_cast<double>(ev.errors.size());
  for (double e : ev.errors) sq += (e - ev.mean) * (e - ev.mean);
  ev.stddev = std::sqrt(sq / static_cast<double>(ev.errors.size()));
  return ev;
}

std::string frame_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02d.pgm", index);
  return buf;
}

void record_outputs(const fs::path& dir, const std::string& stage, const std::vector<std::string>& outputs) {
  const fs::path mpath = dir / files::kManifest;
  json m = fs::exists(mpath) ? read_json(mpath) : json::object();
  json entry = json::object();
  for (const auto& o : outputs) {
    const fs::path p = dir / o;
    if (fs::is_directory(p)) {
      std::vector<fs::path> names;
      for (const auto& e : fs::directory_iterator(p)) names.push_back(e.path());
      std::sort(names.begin(), names.end());
      for (const auto& n : names) entry[(fs::path(o) / n.filename()).generic_string()] = sha256_file(n);
    } else {
      entry[o] = sha256_file(p);
    }
  }
  m["stages"][stage] = entry;
  write_json(mpath, m);
}

void verify_inputs(const fs::path& dir, const std::vector<std::string>& inputs) {
  const fs::path mpath = dir / files::kManifest;
  if (!fs::exists(mpath)) return;
  const json m = read_json(mpath);
  if (!m.contains("stages")) return;
  for (const auto& in : inputs) {
    for (const auto& [stage, entry] : m["stages"].items()) {
      for (const auto& [name, sha] : entry.items()) {
        const bool match = name == in || name.rfind(in + "/", 0) == 0;
        if (!match) continue;
        const fs::path p = dir / name;
        if (!fs::exists(p)) throw Error(ErrorCode::kStaleChecksum, name + " recorded by " + stage + " is missing");
        if (sha256_file(p) != sha.get<std::string>())
          throw Error(ErrorCode::kStaleChecksum, name + " changed since the " + stage + " stage wrote it");
      }
    }
  }
}

std::string summary_csv(const Intrinsics& truth, const CalibrationResult& r, bool naive) {
  std::ostringstream s;
  s << "method,fx,fy,cx,cy,mrpe_projector_px,mrpe_scanner_px,excluded_sets,total_sets\n";
  s << "ground_truth," << format_double(truth.fx) << ',' << format_double(truth.fy) << ',' << format_double(truth.cx)
    << ',' << format_double(truth.cy) << ",,,,\n";
  s << (naive ? "naive" : "chief_ray") << ',' << format_double(r.k.fx) << ',' << format_double(r.k.fy) << ','
    << format_double(r.k.cx) << ',' << format_double(r.k.cy) << ',' << format_double(r.mrpe_projector) << ','
    << format_double(r.mrpe_scanner) << ',' << r.excluded.size() << ',' << r.sets_total << '\n';
  return s.str();
}

std::string error_curve_csv(const CalibrationResult& r) {
  std::ostringstream s;
  s << "excluded,fraction,mean_error_scan_px,chosen\n";
  for (std::size_t k = 0; k < r.error_curve.size(); ++k)
    s << k << ',' << format_double(static_cast<double>(k) / std::max(1, r.sets_total)) << ','
      << format_double(r.error_curve[k]) << ',' << (k == r.excluded.size() ? 1 : 0) << '\n';
  return s.str();
}

RunSummary run_pipeline(BenchConfig bench, const RunOptions& options, const fs::path& out_dir) {
  if (options.seed) bench.rng_seed = *options.seed;
  RunSummary out;
  fs::create_directories(out_dir);
  const fs::path manifest = out_dir / files::kManifest;
  if (fs::exists(manifest)) fs::remove(manifest);

  in_stage("bench", [&] {
    validate_bench(bench);
    save_bench(out_dir / files::kBench, bench);
    record_outputs(out_dir, "bench", {files::kBench});
  });
  out.truth = ground_truth_intrinsics(bench.projector);

  SynthDataset ds = in_stage("simulate", [&] {
    SynthDataset d = synth_dataset(bench);
    const auto& white = d.scans[static_cast<std::size_t>(d.stack.layout.white_index())];
    const double scale = irradiance_scale(*std::max_element(white.data.begin(), white.data.end()));
    for (auto& s : d.scans) s = quantize_scan(s, scale);
    std::vector<std::string> written{files::kGroundTruth};
    if (options.write_images) {
      for (std::size_t i = 0; i < d.stack.frames.size(); ++i) {
        write_frame_pgm(out_dir / files::kPatterns / frame_name(static_cast<int>(i)), d.stack.frames[i]);
        write_scan_pgm(out_dir / files::kScans / frame_name(static_cast<int>(i)), d.scans[i], scale);
      }
      written.push_back(files::kPatterns);
      written.push_back(files::kScans);
    }
    write_ground_truth_csv(out_dir / files::kGroundTruth, d.chief_rays);
    record_outputs(out_dir, "simulate", written);
    return d;
  });
  const ScanImage& white = ds.scans[static_cast<std::size_t>(ds.stack.layout.white_index())];

  const DecodedMap map = in_stage("decode", [&] {
    DecodedMap m = decode_stack(ds.stack.layout, ds.scans);
    write_decoded_map(out_dir / files::kDecoded, m);
    record_outputs(out_dir, "decode", {files::kDecoded});
    return m;
  });
  out.valid_pixels = map.valid_count();

  const PinholeTable table = in_stage("blobs", [&] {
    PinholeTable t = detect_pinholes(white, bench);
    write_blob_csv(out_dir / files::kBlobs, t.records);
    record_outputs(out_dir, "blobs", {files::kBlobs});
    return t;
  });
  out.blob_count = table.blobs.size();

  out.samples = in_stage("chief", [&] {
    auto s = extract_samples(table, map, white, bench, options.naive_chief, options.chief);
    perturb_scanner_points(s, options.noise_sigma, bench.rng_seed, bench.scanner);
    write_chief_csv(out_dir / files::kChief, s);
    record_outputs(out_dir, "chief", {files::kChief});
    return read_chief_csv(out_dir / files::kChief, bench.scanner, bench.masks);
  });

  out.calibration = in_stage("calibrate", [&] {
    Calibration c = calibrate_samples(out.samples, bench, options.max_exclusion);
    write_json(out_dir / files::kReport, calibration_to_json(c.result, c.views.sets));
    write_text(out_dir / files::kErrorCurve, error_curve_csv(c.result));
    LinePlot plot;
    plot.title = "Outlier exclusion";
    plot.x_label = "excluded correspondence sets";
    plot.y_label = "mean scanner-plane error (scan px)";
    for (std::size_t k = 0; k < c.result.error_curve.size(); ++k) {
      plot.x.push_back(static_cast<double>(k));
      plot.y.push_back(c.result.error_curve[k]);
    }
    plot.highlight = static_cast<int>(c.result.excluded.size());
    write_text(out_dir / files::kErrorPlot, render_svg(plot));
    write_text(out_dir / files::kSummary, summary_csv(out.truth, c.result, options.naive_chief));
    record_outputs(out_dir, "calibrate", {files::kReport, files::kErrorCurve, files::kErrorPlot, files::kSummary});
    return c;
  });
  return out;
}

}  // namespace chiefray
