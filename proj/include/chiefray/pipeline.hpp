#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chiefray/bench_config.hpp"
#include "chiefray/calibrate.hpp"
#include "chiefray/io.hpp"

namespace chiefray {

// Failure inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, ErrorCode code, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)), code_(code) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorCode code() const noexcept { return code_; }

 private:
  std::string stage_;
  ErrorCode code_;
};

// Runs fn, rethrowing chiefray errors as StageError tagged with `stage`.
template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw StageError(stage, e.code(), e.what());
  }
}

struct PinholeTable {
  std::vector<Blob> blobs;
  std::vector<BlobRecord> records;  // parallel to blobs
};

// Segment, cluster into one group per mask, and recognize each grid.
PinholeTable detect_pinholes(const ScanImage& white, const BenchConfig& bench, const SegmentOptions& options = {});
// Blobs of a white scan joined with a stored assignment table by blob id.
PinholeTable attach_records(const ScanImage& white, const std::vector<BlobRecord>& records,
                            const SegmentOptions& options = {});

// One sample per grid-assigned blob; blobs whose extraction fails are kept with
// status kMissingCode.
std::vector<ChiefRaySample> extract_samples(const PinholeTable& table, const DecodedMap& map, const ScanImage& white,
                                            const BenchConfig& bench, bool naive, const ChiefOptions& options = {});

// Gaussian displacement of the measured scanner points, sigma in scan px.
void perturb_scanner_points(std::vector<ChiefRaySample>& samples, double sigma_px, std::uint64_t seed,
                            const ScannerModel& scanner);
// kRandom draws a direction per sample; kCommon draws one direction for all of them,
// a systematic fault such as a misregistered pattern.
enum class ShiftDirection { kRandom, kCommon };
// Shifts the chief pixel of round(fraction * ok samples) samples by shift_px.
// Returns the corrupted sample indices, ascending.
std::vector<int> corrupt_samples(std::vector<ChiefRaySample>& samples, double fraction, double shift_px,
                                 std::uint64_t seed, ShiftDirection direction = ShiftDirection::kRandom);

struct Calibration {
  ViewBundle views;
  CalibrationResult result;
};
Calibration calibrate_samples(const std::vector<ChiefRaySample>& samples, const BenchConfig& bench,
                              double max_exclusion_fraction = 0.10);

struct BoardTarget {
  int rows = 5;
  int cols = 7;
  double square = 70.0;  // mm
  Vec3 position = Vec3(0.0, -72.0, 1000.0);
  Vec3 rotation_deg = Vec3(10.0, -10.0, 0.0);

  std::vector<Vec3> corners() const;
};
BoardTarget board_from_json(const nlohmann::json& j);
nlohmann::json board_to_json(const BoardTarget& board);

struct DotEvaluation {
  PoseEstimate pose;
  std::vector<Vec3> corners;
  std::vector<double> errors;  // mm
  double mean = 0.0;
  double stddev = 0.0;
};
// PnP from the four outer corners (pixels from the true projector), then dots at
// every corner through the true projector. The bench projector sits at the origin.
DotEvaluation evaluate_board(const Intrinsics& k, const Intrinsics& true_k, const BoardTarget& board);

struct RunOptions {
  double noise_sigma = 0.0;  // scan px
  bool naive_chief = false;
  ChiefOptions chief;
  double max_exclusion = 0.10;
  std::optional<std::uint64_t> seed;
  bool write_images = true;  // pattern frames and scans
};

struct RunSummary {
  Intrinsics truth;
  Calibration calibration;
  std::vector<ChiefRaySample> samples;
  std::size_t blob_count = 0;
  std::size_t valid_pixels = 0;
};

// Every stage in order, writing intermediates and the report into out_dir.
RunSummary run_pipeline(BenchConfig bench, const RunOptions& options, const fs::path& out_dir);

// File names inside a run directory.
namespace files {
inline constexpr const char* kBench = "bench.json";
inline constexpr const char* kPatterns = "patterns";
inline constexpr const char* kScans = "scans";
inline constexpr const char* kGroundTruth = "ground_truth.csv";
inline constexpr const char* kDecoded = "decoded.dmap";
inline constexpr const char* kBlobs = "blobs.csv";
inline constexpr const char* kChief = "chief.csv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kErrorCurve = "error_curve.csv";
inline constexpr const char* kErrorPlot = "error_curve.svg";
inline constexpr const char* kSummary = "summary.csv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kEval = "eval.csv";
}  // namespace files

std::string frame_name(int index);

// Manifest: stage -> {file -> sha256}. Stages record their outputs and verify the
// recorded checksums of their inputs (kStaleChecksum on mismatch).
void record_outputs(const fs::path& dir, const std::string& stage, const std::vector<std::string>& outputs);
void verify_inputs(const fs::path& dir, const std::vector<std::string>& inputs);

std::string summary_csv(const Intrinsics& truth, const CalibrationResult& result, bool naive);
std::string error_curve_csv(const CalibrationResult& result);

}  // namespace chiefray
