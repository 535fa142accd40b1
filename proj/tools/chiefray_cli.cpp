#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

#include "chiefray/pipeline.hpp"

using namespace chiefray;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;
constexpr int kExitIo = 4;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation:
    case ErrorCode::kSchema:
    case ErrorCode::kInvalidArgument:
      return kExitValidation;
    case ErrorCode::kIo:
      return kExitIo;
    default:
      return kExitStage;
  }
}

BenchConfig bench_in(const fs::path& dir) { return load_bench(dir / files::kBench); }

std::vector<ScanImage> read_scans(const fs::path& dir, const PatternLayout& layout) {
  std::vector<ScanImage> scans;
  for (int i = 0; i < layout.frame_count(); ++i) scans.push_back(read_scan_pgm(dir / files::kScans / frame_name(i)));
  return scans;
}

ScanImage read_white(const fs::path& dir, const PatternLayout& layout) {
  return read_scan_pgm(dir / files::kScans / frame_name(layout.white_index()));
}

PatternLayout layout_of(const BenchConfig& b) { return {b.projector.width, b.projector.height}; }

void print_intrinsics(const char* label, const Intrinsics& k) {
  std::printf("%s fx=%.4f fy=%.4f cx=%.4f cy=%.4f\n", label, k.fx, k.fy, k.cx, k.cy);
}

int cmd_bench(const fs::path& config) {
  const BenchConfig b = load_bench(config);
  validate_bench(b);
  print_intrinsics("ground truth", ground_truth_intrinsics(b.projector));
  std::printf("projector %dx%d, %zu masks, scanner raster %dx%d at %.0f dpi\n", b.projector.width, b.projector.height,
              b.masks.size(), b.scanner.raster_width(), b.scanner.raster_height(), b.scanner.dpi);
  std::printf("valid\n");
  return kExitOk;
}

int cmd_patterns(const fs::path& config, int width, int height, const fs::path& out) {
  if (!config.empty()) {
    const BenchConfig b = load_bench(config);
    width = b.projector.width;
    height = b.projector.height;
  }
  if (width < 1 || height < 1) throw Error(ErrorCode::kInvalidArgument, "need a config or --width/--height");
  const PatternStack stack = generate_patterns(width, height);
  for (std::size_t i = 0; i < stack.frames.size(); ++i) write_frame_pgm(out / frame_name(static_cast<int>(i)), stack.frames[i]);
  std::printf("%zu frames written to %s\n", stack.frames.size(), out.string().c_str());
  return kExitOk;
}

int cmd_simulate(const fs::path& config, const fs::path& dir, std::optional<std::uint64_t> seed) {
  BenchConfig b = load_bench(config);
  if (seed) b.rng_seed = *seed;
  validate_bench(b);
  fs::create_directories(dir);
  if (fs::exists(dir / files::kManifest)) fs::remove(dir / files::kManifest);
  save_bench(dir / files::kBench, b);
  record_outputs(dir, "bench", {files::kBench});
  in_stage("simulate", [&] {
    SynthDataset d = synth_dataset(b);
    const auto& white = d.scans[static_cast<std::size_t>(d.stack.layout.white_index())];
    const double scale = irradiance_scale(*std::max_element(white.data.begin(), white.data.end()));
    for (std::size_t i = 0; i < d.stack.frames.size(); ++i) {
      write_frame_pgm(dir / files::kPatterns / frame_name(static_cast<int>(i)), d.stack.frames[i]);
      write_scan_pgm(dir / files::kScans / frame_name(static_cast<int>(i)), d.scans[i], scale);
    }
    write_ground_truth_csv(dir / files::kGroundTruth, d.chief_rays);
    record_outputs(dir, "simulate", {files::kPatterns, files::kScans, files::kGroundTruth});
  });
  std::printf("simulated %d frames into %s\n", layout_of(b).frame_count(), dir.string().c_str());
  return kExitOk;
}

int cmd_decode(const fs::path& dir) {
  verify_inputs(dir, {files::kBench, files::kScans});
  const BenchConfig b = bench_in(dir);
  const auto layout = layout_of(b);
  const DecodedMap map = in_stage("decode", [&] { return decode_stack(layout, read_scans(dir, layout)); });
  write_decoded_map(dir / files::kDecoded, map);
  record_outputs(dir, "decode", {files::kDecoded});
  std::printf("%zu of %zu scanner pixels decoded\n", map.valid_count(), map.u.size());
  return kExitOk;
}

int cmd_blobs(const fs::path& dir) {
  verify_inputs(dir, {files::kBench, files::kScans});
  const BenchConfig b = bench_in(dir);
  const PinholeTable t = in_stage("blobs", [&] { return detect_pinholes(read_white(dir, layout_of(b)), b); });
  write_blob_csv(dir / files::kBlobs, t.records);
  record_outputs(dir, "blobs", {files::kBlobs});
  const auto placed = std::count_if(t.records.begin(), t.records.end(), [](const BlobRecord& r) { return r.mask_id >= 0; });
  std::printf("%zu blobs, %td on a pinhole grid\n", t.blobs.size(), placed);
  return kExitOk;
}

ChiefOptions chief_options(CircleFitMode mode) {
  ChiefOptions o;
  o.fit_mode = mode;
  return o;
}

int cmd_chief(const fs::path& dir, bool naive, const ChiefOptions& options, double noise_sigma,
              std::optional<std::uint64_t> seed) {
  verify_inputs(dir, {files::kBench, files::kScans, files::kDecoded, files::kBlobs});
  const BenchConfig b = bench_in(dir);
  const auto samples = in_stage("chief", [&] {
    const ScanImage white = read_white(dir, layout_of(b));
    const DecodedMap map = read_decoded_map(dir / files::kDecoded, b.projector.width, b.projector.height);
    const PinholeTable t = attach_records(white, read_blob_csv(dir / files::kBlobs));
    auto s = extract_samples(t, map, white, b, naive, options);
    perturb_scanner_points(s, noise_sigma, seed.value_or(b.rng_seed), b.scanner);
    return s;
  });
  write_chief_csv(dir / files::kChief, samples);
  record_outputs(dir, "chief", {files::kChief});
  const auto ok = std::count_if(samples.begin(), samples.end(), [](const ChiefRaySample& s) { return s.status == SampleStatus::kOk; });
  std::printf("%td of %zu chief-ray samples extracted\n", ok, samples.size());
  return kExitOk;
}

void write_calibration(const fs::path& dir, const Calibration& c, const Intrinsics& truth, bool naive) {
  write_json(dir / files::kReport, calibration_to_json(c.result, c.views.sets));
  write_text(dir / files::kErrorCurve, error_curve_csv(c.result));
  write_text(dir / files::kSummary, summary_csv(truth, c.result, naive));
}

void print_result(const CalibrationResult& r) {
  print_intrinsics("estimated", r.k);
  std::printf("mrpe %.4f projector px, %.4f scan px; %zu of %d sets excluded\n", r.mrpe_projector, r.mrpe_scanner,
              r.excluded.size(), r.sets_total);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

int cmd_calibrate(const fs::path& dir, double max_exclusion) {
  verify_inputs(dir, {files::kBench, files::kChief});
  const BenchConfig b = bench_in(dir);
  const Calibration c = in_stage("calibrate", [&] {
    return calibrate_samples(read_chief_csv(dir / files::kChief, b.scanner, b.masks), b, max_exclusion);
  });
  write_calibration(dir, c, ground_truth_intrinsics(b.projector), false);
  record_outputs(dir, "calibrate", {files::kReport, files::kErrorCurve, files::kSummary});
  print_result(c.result);
  return kExitOk;
}

int cmd_eval(const fs::path& report, const fs::path& config, const fs::path& target, const fs::path& out) {
  if (fs::exists(report.parent_path() / files::kManifest)) verify_inputs(report.parent_path(), {report.filename().string()});
  const CalibrationReport r = calibration_from_json(read_json(report));
  const BenchConfig b = load_bench(config);
  const BoardTarget board = target.empty() ? BoardTarget{} : board_from_json(read_json(target));
  const DotEvaluation ev = in_stage("eval", [&] { return evaluate_board(r.k, ground_truth_intrinsics(b.projector), board); });
  std::ostringstream s;
  s << "corner,x_mm,y_mm,z_mm,error_mm\n";
  for (std::size_t i = 0; i < ev.corners.size(); ++i)
    s << i << ',' << format_double(ev.corners[i].x()) << ',' << format_double(ev.corners[i].y()) << ','
      << format_double(ev.corners[i].z()) << ',' << format_double(ev.errors[i]) << '\n';
  s << "mean,,,," << format_double(ev.mean) << "\nstddev,,,," << format_double(ev.stddev) << '\n';
  write_text(out, s.str());
  std::printf("dot error mean %.4f mm, stddev %.4f mm over %zu corners\n", ev.mean, ev.stddev, ev.corners.size());
  return kExitOk;
}

int cmd_run(const fs::path& config, const fs::path& out, const RunOptions& options) {
  const BenchConfig b = load_bench(config);
  const RunSummary s = run_pipeline(b, options, out);
  std::printf("%zu blobs, %zu decoded pixels, %zu samples\n", s.blob_count, s.valid_pixels, s.samples.size());
  print_intrinsics("ground truth", s.truth);
  print_result(s.calibration.result);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projector intrinsic calibration with pinhole-array masks"};
  app.require_subcommand(1);

  fs::path config, dir, out, report, target;
  int width = 0, height = 0;
  double noise_sigma = 0.0, max_exclusion = 0.10;
  bool naive = false;
  std::string fit_name = "edge";
  const std::map<std::string, CircleFitMode> fit_modes{
      {"edge", CircleFitMode::kEdge}, {"hull", CircleFitMode::kHull}, {"all", CircleFitMode::kAll}};
  std::uint64_t seed_value = 0;

  auto* bench = app.add_subcommand("bench", "Validate a bench config and print its intrinsics");
  bench->add_option("config", config, "Bench JSON")->required();

  auto* patterns = app.add_subcommand("patterns", "Write the gray-code pattern stack as PGM frames");
  patterns->add_option("--config", config, "Bench JSON (sets the resolution)");
  patterns->add_option("--width", width, "Projector width");
  patterns->add_option("--height", height, "Projector height");
  patterns->add_option("--out", out, "Output directory")->required();

  auto* simulate = app.add_subcommand("simulate", "Render the scan stack for a bench");
  simulate->add_option("config", config, "Bench JSON")->required();
  simulate->add_option("--dir", dir, "Run directory")->required();
  auto* sim_seed = simulate->add_option("--seed", seed_value, "Override the bench rng seed");

  auto* decode = app.add_subcommand("decode", "Decode the scans of a run directory");
  decode->add_option("--dir", dir, "Run directory")->required();

  auto* blobs = app.add_subcommand("blobs", "Segment blobs and recognize the pinhole grids");
  blobs->add_option("--dir", dir, "Run directory")->required();

  auto* chief = app.add_subcommand("chief", "Extract chief-ray samples");
  chief->add_option("--dir", dir, "Run directory")->required();
  chief->add_flag("--naive-chief", naive, "Use ellipse centres instead of chief rays");
  chief->add_option("--circle-fit", fit_name, "Circle fit points: edge, hull or all")
      ->check(CLI::IsMember(fit_modes));
  chief->add_option("--noise-sigma", noise_sigma, "Scanner point noise, scan px")->check(CLI::NonNegativeNumber);
  auto* chief_seed = chief->add_option("--seed", seed_value, "Noise seed");

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate from the chief-ray samples");
  calibrate->add_option("--dir", dir, "Run directory")->required();
  calibrate->add_option("--max-exclusion", max_exclusion, "Outlier cap as a fraction of sets")->check(CLI::Range(0.0, 0.2));

  auto* eval = app.add_subcommand("eval", "Dot placement error on a synthetic checker board");
  eval->add_option("--report", report, "Calibration report JSON")->required();
  eval->add_option("--config", config, "Bench JSON")->required();
  eval->add_option("--target", target, "Board target JSON");
  eval->add_option("--out", out, "CSV output")->required();

  auto* run = app.add_subcommand("run", "Run every stage");
  run->add_option("config", config, "Bench JSON")->required();
  run->add_option("--out", out, "Run directory")->required();
  run->add_option("--noise-sigma", noise_sigma, "Scanner point noise, scan px")->check(CLI::NonNegativeNumber);
  run->add_flag("--naive-chief", naive, "Use ellipse centres instead of chief rays");
  run->add_option("--circle-fit", fit_name, "Circle fit points: edge, hull or all")
      ->check(CLI::IsMember(fit_modes));
  run->add_option("--max-exclusion", max_exclusion, "Outlier cap as a fraction of sets")->check(CLI::Range(0.0, 0.2));
  auto* run_seed = run->add_option("--seed", seed_value, "Override the bench rng seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  const CircleFitMode fit_mode = fit_modes.at(fit_name);
  try {
    if (bench->parsed()) return cmd_bench(config);
    if (patterns->parsed()) return cmd_patterns(config, width, height, out);
    if (simulate->parsed())
      return cmd_simulate(config, dir, sim_seed->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt);
    if (decode->parsed()) return cmd_decode(dir);
    if (blobs->parsed()) return cmd_blobs(dir);
    if (chief->parsed())
      return cmd_chief(dir, naive, chief_options(fit_mode), noise_sigma, chief_seed->count() ? std::optional<std::uint64_t>(seed_value) : std::nullopt);
    if (calibrate->parsed()) return cmd_calibrate(dir, max_exclusion);
    if (eval->parsed()) return cmd_eval(report, config, target, out);
    if (run->parsed()) {
      RunOptions o;
      o.noise_sigma = noise_sigma;
      o.naive_chief = naive;
      o.chief.fit_mode = fit_mode;
      o.max_exclusion = max_exclusion;
      if (run_seed->count()) o.seed = seed_value;
      return cmd_run(config, out, o);
    }
  } catch (const StageError& e) {
    std::fprintf(stderr, "error in stage %s\n", e.what());
    return e.code() == ErrorCode::kValidation || e.code() == ErrorCode::kSchema ? kExitValidation
           : e.code() == ErrorCode::kIo                                      ? kExitIo
                                                                             : kExitStage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitValidation;
}
