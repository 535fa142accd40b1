#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "chiefray/graycode.hpp"
#include "support.hpp"

using namespace chiefray;

namespace {

// Scans of a camera that sees projector pixel (x, y) at raster (x, y).
std::vector<ScanImage> identity_scans(const PatternStack& stack) {
  std::vector<ScanImage> scans;
  for (const auto& f : stack.frames) {
    ScanImage s(f.width, f.height);
    for (std::size_t i = 0; i < f.data.size(); ++i) s.data[i] = f.data[i] ? 1.0f : 0.0f;
    scans.push_back(std::move(s));
  }
  return scans;
}

}  // namespace

TEST(Gray, Examples) {
  EXPECT_EQ(gray_encode(0), 0u);
  EXPECT_EQ(gray_encode(5), 7u);
  EXPECT_EQ(gray_decode(7), 5u);
}

TEST(Gray, ExhaustiveRoundTrip) {
  for (std::uint32_t n = 0; n < (1u << 16); ++n) ASSERT_EQ(gray_decode(gray_encode(n)), n);
}

TEST(Gray, AdjacentCodesDifferInOneBit) {
  for (std::uint32_t n = 0; n + 1 < (1u << 16); ++n)
    ASSERT_EQ(__builtin_popcount(gray_encode(n) ^ gray_encode(n + 1)), 1);
}

TEST(Patterns, FrameCounts) {
  EXPECT_EQ(generate_patterns(8, 1).frames.size(), 8u);
  EXPECT_EQ(generate_patterns(1, 1).frames.size(), 2u);
  EXPECT_EQ(generate_patterns(800, 600).frames.size(), 42u);
  EXPECT_EQ(code_bits(1), 0);
  EXPECT_EQ(code_bits(640), 10);
}

TEST(Patterns, ComplementsNegatePositives) {
  const PatternStack s = generate_patterns(37, 11);
  const int pairs = s.layout.column_bits() + s.layout.row_bits();
  for (int p = 0; p < pairs; ++p) {
    const auto& pos = s.frames[static_cast<std::size_t>(2 * p)].data;
    const auto& neg = s.frames[static_cast<std::size_t>(2 * p + 1)].data;
    for (std::size_t i = 0; i < pos.size(); ++i) ASSERT_EQ(pos[i] ^ neg[i], 1);
  }
  for (auto v : s.frames[static_cast<std::size_t>(s.layout.white_index())].data) EXPECT_EQ(v, 1);
  for (auto v : s.frames[static_cast<std::size_t>(s.layout.black_index())].data) EXPECT_EQ(v, 0);
}

TEST(Decode, IdentityCameraRecoversEveryPixel) {
  const PatternStack s = generate_patterns(45, 23);
  const auto scans = identity_scans(s);
  const DecodedMap m = decode_stack(s.layout, scans);
  for (int y = 0; y < 23; ++y)
    for (int x = 0; x < 45; ++x) {
      const auto i = m.index(x, y);
      ASSERT_TRUE(m.valid(i));
      ASSERT_EQ(m.u[i], x);
      ASSERT_EQ(m.v[i], y);
    }
}

TEST(Decode, SinglePixelProjector) {
  const PatternStack s = generate_patterns(1, 1);
  std::vector<ScanImage> scans{ScanImage(4, 3), ScanImage(4, 3)};
  for (auto& v : scans[0].data) v = 1.0f;
  const DecodedMap m = decode_stack(s.layout, scans);
  for (std::size_t i = 0; i < m.status.size(); ++i) {
    ASSERT_TRUE(m.valid(i));
    EXPECT_EQ(m.u[i], 0);
    EXPECT_EQ(m.v[i], 0);
  }
}

TEST(Decode, AllBlackIsLowContrast) {
  const PatternStack s = generate_patterns(16, 8);
  const std::vector<ScanImage> scans(s.frames.size(), ScanImage(5, 5));
  const DecodedMap m = decode_stack(s.layout, scans);
  for (auto st : m.status) EXPECT_EQ(st, DecodeStatus::kLowContrast);
  EXPECT_EQ(m.valid_count(), 0u);
}

TEST(Decode, AmbiguousBitIsInconsistent) {
  const PatternStack s = generate_patterns(16, 8);
  auto scans = identity_scans(s);
  // Both frames of the second column pair read the same at pixel (5, 3).
  scans[2].at(5, 3) = 0.5f;
  scans[3].at(5, 3) = 0.5f;
  const DecodedMap m = decode_stack(s.layout, scans);
  EXPECT_EQ(m.status[m.index(5, 3)], DecodeStatus::kInconsistentBit);
  EXPECT_TRUE(m.valid(m.index(6, 3)));
}

TEST(Decode, StackSizeMismatch) {
  const PatternStack s = generate_patterns(16, 8);
  const std::vector<ScanImage> scans(3, ScanImage(5, 5));
  EXPECT_THROW(decode_stack(s.layout, scans), Error);
}

TEST(Decode, SimulatorInBlobPixelsDecodeToIlluminatingPixels) {
  const auto& f = test::tilted();
  const auto& t = f.ds.transport;
  std::vector<std::vector<std::int32_t>> lit(static_cast<std::size_t>(t.raster_width) * t.raster_height);
  for (const auto& e : t.entries) lit[static_cast<std::size_t>(e.raster)].push_back(e.pixel);
  std::size_t checked = 0;
  for (const auto& blob : f.table.blobs)
    for (auto i : blob.pixels) {
      const auto k = static_cast<std::size_t>(i);
      if (!f.map.valid(k)) continue;
      ++checked;
      const std::int32_t px = f.map.v[k] * f.map.projector_width + f.map.u[k];
      ASSERT_NE(std::find(lit[k].begin(), lit[k].end(), px), lit[k].end());
    }
  EXPECT_GT(checked, 10000u);
}

TEST(InverseLookup, SinglePixelMatch) {
  DecodedMap m;
  m.width = 5;
  m.height = 4;
  m.projector_width = 100;
  m.projector_height = 100;
  m.u.assign(20, -1);
  m.v.assign(20, -1);
  m.status.assign(20, DecodeStatus::kLowContrast);
  const auto i = m.index(3, 2);
  m.u[i] = 40;
  m.v[i] = 60;
  m.status[i] = DecodeStatus::kValid;
  const Vec2 r = inverse_lookup(m, {40, 60});
  EXPECT_NEAR(r.x(), 3.0, 1e-12);
  EXPECT_NEAR(r.y(), 2.0, 1e-12);
}

TEST(InverseLookup, MissingCodeOutsideBlobs) {
  const auto& f = test::tilted();
  try {
    inverse_lookup(f.map, {-500.0, -500.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingCode);
  }
}

TEST(InverseLookup, ChiefPixelLandsOnChiefRayHit) {
  const auto& f = test::tilted();
  std::vector<double> err;
  for (const auto& c : f.ds.chief_rays) {
    if (!c.on_device || !c.on_scanner) continue;
    const int b = f.blob_at(c.scanner_raster);
    if (b < 0) continue;
    const auto& px = f.table.blobs[static_cast<std::size_t>(b)].pixels;
    try {
      err.push_back((inverse_lookup(f.map, c.chief_pixel, std::span<const std::int32_t>(px)) - c.scanner_raster).norm());
    } catch (const Error&) {
    }
  }
  ASSERT_GT(err.size(), 300u);
  EXPECT_LT(test::median(err), 0.5);
}

TEST(Decode, RaisingThresholdsNeverValidates) {
  const auto& f = test::tilted();
  const std::vector<double> levels{0.02, 0.05, 0.1, 0.2, 0.4};
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    DecodeOptions lo, hi;
    lo.contrast_threshold = levels[i];
    hi.contrast_threshold = levels[i + 1];
    DecodeOptions lo_bit, hi_bit;
    lo_bit.bit_threshold = levels[i];
    hi_bit.bit_threshold = levels[i + 1];
    for (const auto& [a, b] : {std::pair{lo, hi}, std::pair{lo_bit, hi_bit}}) {
      const DecodedMap ma = decode_stack(f.ds.stack.layout, f.ds.scans, a);
      const DecodedMap mb = decode_stack(f.ds.stack.layout, f.ds.scans, b);
      std::size_t valid_a = 0, valid_b = 0;
      for (std::size_t k = 0; k < ma.status.size(); ++k) {
        valid_a += ma.valid(k);
        valid_b += mb.valid(k);
        if (!ma.valid(k)) {
          ASSERT_FALSE(mb.valid(k));
        }
      }
      EXPECT_LE(valid_b, valid_a);
    }
  }
}
