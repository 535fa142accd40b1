#pragma once

#include <cstdint>
#include <vector>

namespace chiefray {

// Scanner-plane irradiance raster, row-major. Values are finite and >= 0.
struct ScanImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ScanImage() = default;
  ScanImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0f) {}

  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
};

// One projector frame; each entry is 0 (dark) or 1 (lit).
struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryImage() = default;
  BinaryImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
};

}  // namespace chiefray
