#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "chiefray/pipeline.hpp"

namespace chiefray::test {

inline std::filesystem::path source_dir() { return CHIEFRAY_SOURCE_DIR; }

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("chiefray_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Simulated bench plus every stage output, built once per test binary.
struct Fixture {
  BenchConfig bench;
  SynthDataset ds;
  DecodedMap map;
  PinholeTable table;
  std::vector<ChiefRaySample> chief;
  std::vector<ChiefRaySample> naive;
  std::vector<std::int32_t> labels;  // blob index per raster cell, -1 outside blobs

  const ScanImage& white() const { return ds.scans[static_cast<std::size_t>(ds.stack.layout.white_index())]; }

  // Blob containing the raster cell nearest to r, or -1.
  int blob_at(const Vec2& r) const {
    const int x = static_cast<int>(std::lround(r.x())), y = static_cast<int>(std::lround(r.y()));
    if (x < 0 || y < 0 || x >= map.width || y >= map.height) return -1;
    return labels[map.index(x, y)];
  }
};

inline Fixture make_fixture(BenchConfig bench) {
  Fixture f;
  f.bench = std::move(bench);
  f.ds = synth_dataset(f.bench);
  f.map = decode_stack(f.ds.stack.layout, f.ds.scans);
  f.table = detect_pinholes(f.white(), f.bench);
  f.chief = extract_samples(f.table, f.map, f.white(), f.bench, false);
  f.naive = extract_samples(f.table, f.map, f.white(), f.bench, true);
  f.labels.assign(static_cast<std::size_t>(f.map.width) * f.map.height, -1);
  for (std::size_t b = 0; b < f.table.blobs.size(); ++b)
    for (auto i : f.table.blobs[b].pixels) f.labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(b);
  return f;
}

inline BenchConfig test_bench(double pitch_deg) {
  return load_bench(source_dir() / "configs" / (pitch_deg == 0.0 ? "parallel_bench.json" : "default_bench.json"));
}

inline const Fixture& tilted() {
  static const Fixture f = make_fixture(test_bench(45.0));
  return f;
}

inline const Fixture& parallel() {
  static const Fixture f = make_fixture(test_bench(0.0));
  return f;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace chiefray::test
