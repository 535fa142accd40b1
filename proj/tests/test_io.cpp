#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "chiefray/io.hpp"
#include "support.hpp"

using namespace chiefray;

TEST(Sha256, KnownDigest) {
  const auto dir = test::temp_dir("sha");
  write_text(dir / "abc.txt", "abc");
  EXPECT_EQ(sha256_file(dir / "abc.txt"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FormatDouble, RoundTrips) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> x(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = x(rng);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
}

TEST(Pgm, ScanRoundTripWithinQuantization) {
  const auto dir = test::temp_dir("pgm");
  ScanImage s(7, 5);
  for (std::size_t i = 0; i < s.size(); ++i) s.data[i] = static_cast<float>(i) * 0.37f;
  const double scale = irradiance_scale(s.data.back());
  write_scan_pgm(dir / "s.pgm", s, scale);
  const ScanImage back = read_scan_pgm(dir / "s.pgm");
  const ScanImage q = quantize_scan(s, scale);
  ASSERT_EQ(back.width, 7);
  ASSERT_EQ(back.height, 5);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_FLOAT_EQ(back.data[i], q.data[i]);
    EXPECT_NEAR(back.data[i], s.data[i], 0.5 / scale + 1e-6);
  }
}

TEST(Pgm, FrameRoundTrip) {
  const auto dir = test::temp_dir("frame");
  BinaryImage f(9, 4);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<std::uint8_t>(i % 3 == 0);
  write_frame_pgm(dir / "f.pgm", f);
  EXPECT_EQ(read_frame_pgm(dir / "f.pgm").data, f.data);
}

TEST(Pgm, MissingFileIsIoError) {
  try {
    read_scan_pgm("/nonexistent/scan.pgm");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
}

TEST(DecodedMapFile, RoundTrip) {
  const auto dir = test::temp_dir("dmap");
  DecodedMap m;
  m.width = 4;
  m.height = 3;
  m.projector_width = 64;
  m.projector_height = 32;
  for (int i = 0; i < 12; ++i) {
    const bool ok = i % 4 != 1;
    m.u.push_back(ok ? i * 5 : -1);
    m.v.push_back(ok ? i : -1);
    m.status.push_back(ok ? DecodeStatus::kValid : (i % 2 ? DecodeStatus::kLowContrast : DecodeStatus::kInconsistentBit));
  }
  write_decoded_map(dir / "m.dmap", m);
  const DecodedMap b = read_decoded_map(dir / "m.dmap", 64, 32);
  EXPECT_EQ(b.u, m.u);
  EXPECT_EQ(b.v, m.v);
  EXPECT_EQ(b.status, m.status);
}

TEST(Csv, BlobRecordsRoundTrip) {
  const auto dir = test::temp_dir("blobs");
  std::vector<BlobRecord> recs(2);
  recs[0] = {0, 1, 3, 4, Vec2(10.25, 20.5), 321, EllipseParams{Vec2(10.3, 20.4), 12.0, 8.5, 0.25, 0.01}};
  recs[1] = {1, -1, -1, -1, Vec2(1.0 / 3.0, 2.0), 25, std::nullopt};
  write_blob_csv(dir / "b.csv", recs);
  const auto back = read_blob_csv(dir / "b.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].row, 3);
  EXPECT_DOUBLE_EQ(back[1].centroid.x(), 1.0 / 3.0);
  ASSERT_TRUE(back[0].ellipse.has_value());
  EXPECT_DOUBLE_EQ(back[0].ellipse->b, 8.5);
  EXPECT_FALSE(back[1].ellipse.has_value());
}

TEST(Csv, ChiefSamplesRoundTrip) {
  const auto& f = test::tilted();
  const auto dir = test::temp_dir("chief");
  write_chief_csv(dir / "c.csv", f.chief);
  const auto back = read_chief_csv(dir / "c.csv", f.bench.scanner, f.bench.masks);
  ASSERT_EQ(back.size(), f.chief.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].status, f.chief[i].status);
    EXPECT_EQ(back[i].pinhole_id, f.chief[i].pinhole_id);
    if (back[i].status != SampleStatus::kOk) continue;
    EXPECT_EQ(back[i].chief_pixel.u, f.chief[i].chief_pixel.u);
    EXPECT_LT((back[i].scanner_local - f.chief[i].scanner_local).norm(), 1e-9);
    EXPECT_LT((back[i].mask_local - f.chief[i].mask_local).norm(), 1e-12);
  }
}

TEST(Json, CalibrationRoundTrip) {
  const auto& f = test::tilted();
  const Calibration c = calibrate_samples(f.chief, f.bench);
  const auto j = nlohmann::json::parse(calibration_to_json(c.result, c.views.sets).dump());
  const CalibrationReport r = calibration_from_json(j);
  EXPECT_EQ(r.k.fx, c.result.k.fx);
  EXPECT_EQ(r.mrpe_projector, c.result.mrpe_projector);
  ASSERT_TRUE(r.mrpe_scanner.has_value());
  EXPECT_EQ(*r.mrpe_scanner, c.result.mrpe_scanner);
  ASSERT_EQ(r.views.size(), 3u);
  EXPECT_EQ(r.views[0].first, "scanner");
  EXPECT_LT((r.views[1].second.rotation - c.result.poses[1].rotation).norm(), 1e-15);
  EXPECT_EQ(r.error_curve, c.result.error_curve);
}

TEST(BenchJson, RoundTrip) {
  const BenchConfig a = test::test_bench(45.0);
  const BenchConfig b = bench_from_json(nlohmann::json::parse(bench_to_json(a).dump()));
  EXPECT_EQ(bench_to_json(a), bench_to_json(b));
  EXPECT_EQ(b.masks.size(), 2u);
  EXPECT_EQ(b.rays_per_pixel_sample, 128);
}

TEST(BenchJson, ShippedConfigMatchesDefaultBench) {
  const BenchConfig shipped = test::test_bench(45.0);
  const Intrinsics a = ground_truth_intrinsics(shipped.projector), b = ground_truth_intrinsics(default_bench().projector);
  EXPECT_DOUBLE_EQ(a.fx, b.fx);
  EXPECT_DOUBLE_EQ(a.cy, b.cy);
  EXPECT_NEAR(a.fx, 11.0 / (1.0 - 11.0 / 1000.0) / 0.01, 1e-9);
}

TEST(BenchJson, NegativeApertureIsSchemaError) {
  auto j = bench_to_json(test::test_bench(45.0));
  j["projector"]["aperture_diameter_mm"] = -6.0;
  try {
    bench_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchema);
  }
}

TEST(BenchJson, ParallelMasksFailValidation) {
  BenchConfig b = test::test_bench(45.0);
  b.masks[1].frame.pose.rotation = b.masks[0].frame.pose.rotation;
  try {
    validate_bench(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kValidation);
    EXPECT_NE(std::string(e.what()).find("non-parallel"), std::string::npos);
  }
}
