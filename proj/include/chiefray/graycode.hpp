#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "chiefray/geometry.hpp"
#include "chiefray/image.hpp"

namespace chiefray {

constexpr std::uint32_t gray_encode(std::uint32_t n) { return n ^ (n >> 1); }

constexpr std::uint32_t gray_decode(std::uint32_t g) {
  std::uint32_t n = g;
  for (std::uint32_t shift = 1; shift < 32; shift <<= 1) n ^= n >> shift;
  return n;
}

// ceil(log2(n)); 0 for n <= 1.
int code_bits(int n);

// Frame order: per column bit (MSB first) a positive frame then its complement, the
// same for row bits, then one all-white and one all-black reference frame.
struct PatternLayout {
  int width = 0;
  int height = 0;

  int column_bits() const { return code_bits(width); }
  int row_bits() const { return code_bits(height); }
  int frame_count() const { return 2 * (column_bits() + row_bits()) + 2; }
  int white_index() const { return frame_count() - 2; }
  int black_index() const { return frame_count() - 1; }
};

struct PatternStack {
  PatternLayout layout;
  std::vector<BinaryImage> frames;
};

PatternStack generate_patterns(int width, int height);

enum class DecodeStatus : std::uint8_t {
  kValid = 0,
  kLowContrast = 1,
  kInconsistentBit = 2,
};

struct DecodeOptions {
  // Fraction of the stack-wide white-minus-black range a pixel must exceed.
  double contrast_threshold = 0.10;
  // Fraction of the pixel's own white-minus-black range |pos - comp| must exceed.
  double bit_threshold = 0.05;
};

// Per scanner pixel projector coordinates; -1 where invalid.
struct DecodedMap {
  int width = 0;  // scanner raster
  int height = 0;
  int projector_width = 0;
  int projector_height = 0;
  std::vector<std::int32_t> u;
  std::vector<std::int32_t> v;
  std::vector<DecodeStatus> status;

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool valid(std::size_t i) const { return status[i] == DecodeStatus::kValid; }
  std::size_t valid_count() const;
};

DecodedMap decode_stack(const PatternLayout& layout, std::span<const ScanImage> scans,
                        const DecodeOptions& options = {});

// Scanner raster position (pixel centres at integer coordinates) illuminated by the
// projector coordinate `target`. When `region` is given the search is restricted to
// those raster indices. Throws kMissingCode when no decoded neighbourhood exists.
Vec2 inverse_lookup(const DecodedMap& map, const PixelPoint& target,
                    std::optional<std::span<const std::int32_t>> region = std::nullopt);

// Projector coordinate at a sub-pixel scanner position, by a local affine fit over
// the valid decoded pixels around it. Throws kMissingCode when too few are valid.
PixelPoint forward_lookup(const DecodedMap& map, const Vec2& raster, int radius = 3);

}  // namespace chiefray
