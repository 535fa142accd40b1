#include "chiefray/graycode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "chiefray/parallel.hpp"

namespace chiefray {

int code_bits(int n) {
  int bits = 0;
  while ((1 << bits) < n) ++bits;
  return bits;
}

PatternStack generate_patterns(int width, int height) {
  if (width < 1 || height < 1) throw Error(ErrorCode::kInvalidArgument, "pattern size must be >= 1");
  PatternStack stack;
  stack.layout = {width, height};
  const int cb = stack.layout.column_bits();
  const int rb = stack.layout.row_bits();
  stack.frames.reserve(static_cast<std::size_t>(stack.layout.frame_count()));

  auto push_pair = [&](auto&& bit_of) {
    BinaryImage pos(width, height), comp(width, height);
    for (int v = 0; v < height; ++v) {
      for (int u = 0; u < width; ++u) {
        const std::uint8_t b = bit_of(u, v);
        pos.at(u, v) = b;
        comp.at(u, v) = static_cast<std::uint8_t>(1 - b);
      }
    }
    stack.frames.push_back(std::move(pos));
    stack.frames.push_back(std::move(comp));
  };
  for (int i = 0; i < cb; ++i) {
    const int shift = cb - 1 - i;
    push_pair([&](int u, int) { return static_cast<std::uint8_t>((gray_encode(u) >> shift) & 1u); });
  }
  for (int i = 0; i < rb; ++i) {
    const int shift = rb - 1 - i;
    push_pair([&](int, int v) { return static_cast<std::uint8_t>((gray_encode(v) >> shift) & 1u); });
  }
  stack.frames.emplace_back(width, height, 1);
  stack.frames.emplace_back(width, height, 0);
  return stack;
}

std::size_t DecodedMap::valid_count() const {
  return static_cast<std::size_t>(std::count(status.begin(), status.end(), DecodeStatus::kValid));
}

DecodedMap decode_stack(const PatternLayout& layout, std::span<const ScanImage> scans,
                        const DecodeOptions& options) {
  if (static_cast<int>(scans.size()) != layout.frame_count())
    throw Error(ErrorCode::kStackMismatch, "expected " + std::to_string(layout.frame_count()) +
                                               " scans, got " + std::to_string(scans.size()));
  const int w = scans.front().width;
  const int h = scans.front().height;
  for (const auto& s : scans) {
    if (s.width != w || s.height != h) throw Error(ErrorCode::kStackMismatch, "scans differ in raster size");
  }

  DecodedMap map;
  map.width = w;
  map.height = h;
  map.projector_width = layout.width;
  map.projector_height = layout.height;
  const auto n = static_cast<std::size_t>(w) * h;
  map.u.assign(n, -1);
  map.v.assign(n, -1);
  map.status.assign(n, DecodeStatus::kLowContrast);

  const auto& white = scans[static_cast<std::size_t>(layout.white_index())].data;
  const auto& black = scans[static_cast<std::size_t>(layout.black_index())].data;
  double range = 0.0;
  for (std::size_t i = 0; i < n; ++i) range = std::max(range, static_cast<double>(white[i]) - black[i]);
  if (!(range > 0.0)) return map;

  const int cb = layout.column_bits();
  const int rb = layout.row_bits();
  const double min_contrast = options.contrast_threshold * range;

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double contrast = static_cast<double>(white[i]) - black[i];
      if (!(contrast > min_contrast)) continue;
      const double min_bit = options.bit_threshold * contrast;
      auto read_code = [&](int first_frame, int bits, std::uint32_t& code) {
        code = 0;
        for (int b = 0; b < bits; ++b) {
          const auto f = static_cast<std::size_t>(first_frame + 2 * b);
          const double d = static_cast<double>(scans[f].data[i]) - scans[f + 1].data[i];
          if (!(std::abs(d) > min_bit)) return false;
          code = (code << 1) | (d > 0.0 ? 1u : 0u);
        }
        return true;
      };
      std::uint32_t gu = 0, gv = 0;
      if (!read_code(0, cb, gu) || !read_code(2 * cb, rb, gv)) {
        map.status[i] = DecodeStatus::kInconsistentBit;
        continue;
      }
      const auto u = gray_decode(gu);
      const auto v = gray_decode(gv);
      if (u >= static_cast<std::uint32_t>(layout.width) || v >= static_cast<std::uint32_t>(layout.height)) {
        map.status[i] = DecodeStatus::kInconsistentBit;
        continue;
      }
      map.u[i] = static_cast<std::int32_t>(u);
      map.v[i] = static_cast<std::int32_t>(v);
      map.status[i] = DecodeStatus::kValid;
    }
  });
  return map;
}

namespace {

struct Candidate {
  std::int32_t index;
  int du;
  int dv;
};

constexpr int kLookupWindow = 2;

// Keeps the largest spatially coherent group so a code seen in two distant blobs
// does not average the two.
std::vector<Candidate> largest_group(const DecodedMap& map, std::vector<Candidate> cands) {
  if (cands.size() <= 1) return cands;
  const std::size_t n = cands.size();
  std::vector<int> group(n, -1);
  int groups = 0;
  std::vector<std::size_t> sizes;
  for (std::size_t s = 0; s < n; ++s) {
    if (group[s] >= 0) continue;
    std::vector<std::size_t> stack{s};
    group[s] = groups;
    std::size_t size = 0;
    while (!stack.empty()) {
      const auto a = stack.back();
      stack.pop_back();
      ++size;
      const int ax = cands[a].index % map.width, ay = cands[a].index / map.width;
      for (std::size_t b = 0; b < n; ++b) {
        if (group[b] >= 0) continue;
        const int bx = cands[b].index % map.width, by = cands[b].index / map.width;
        if (std::abs(ax - bx) <= 4 && std::abs(ay - by) <= 4) {
          group[b] = groups;
          stack.push_back(b);
        }
      }
    }
    sizes.push_back(size);
    ++groups;
  }
  const auto best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < n; ++i)
    if (group[i] == best) out.push_back(cands[i]);
  return out;
}

}  // namespace

Vec2 inverse_lookup(const DecodedMap& map, const PixelPoint& target,
                    std::optional<std::span<const std::int32_t>> region) {
  const int ru = static_cast<int>(std::lround(target.u));
  const int rv = static_cast<int>(std::lround(target.v));
  std::vector<Candidate> cands;
  auto consider = [&](std::size_t i) {
    if (!map.valid(i)) return;
    const int du = map.u[i] - ru, dv = map.v[i] - rv;
    if (std::abs(du) <= kLookupWindow && std::abs(dv) <= kLookupWindow)
      cands.push_back({static_cast<std::int32_t>(i), du, dv});
  };
  if (region) {
    for (auto i : *region) consider(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < map.status.size(); ++i) consider(i);
    cands = largest_group(map, std::move(cands));
  }
  if (cands.empty())
    throw Error(ErrorCode::kMissingCode, "no decoded pixels near (" + std::to_string(target.u) + ", " +
                                             std::to_string(target.v) + ")");

  // Local affine model raster = a + B (code - target), fitted by least squares.
  int min_du = kLookupWindow, max_du = -kLookupWindow, min_dv = kLookupWindow, max_dv = -kLookupWindow;
  for (const auto& c : cands) {
    min_du = std::min(min_du, c.du);
    max_du = std::max(max_du, c.du);
    min_dv = std::min(min_dv, c.dv);
    max_dv = std::max(max_dv, c.dv);
  }
  const double fu = target.u - ru, fv = target.v - rv;
  const bool brackets = min_du <= std::floor(fu) && max_du >= std::ceil(fu) && min_dv <= std::floor(fv) &&
                        max_dv >= std::ceil(fv) && max_du > min_du && max_dv > min_dv;
  if (brackets) {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(cands.size()), 3);
    Eigen::MatrixXd b(static_cast<Eigen::Index>(cands.size()), 2);
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      a.row(r) << 1.0, cands[k].du - fu, cands[k].dv - fv;
      b.row(r) << cands[k].index % map.width, cands[k].index / map.width;
    }
    const Eigen::Matrix3d ata = a.transpose() * a;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(ata);
    if (svd.singularValues()(2) > 1e-9 * svd.singularValues()(0)) {
      const Eigen::MatrixXd sol = ata.ldlt().solve(a.transpose() * b);
      return {sol(0, 0), sol(0, 1)};
    }
  }

  Vec2 sum = Vec2::Zero();
  int count = 0;
  for (const auto& c : cands) {
    if (c.du == 0 && c.dv == 0) {
      sum += Vec2(c.index % map.width, c.index / map.width);
      ++count;
    }
  }
  if (count == 0)
    throw Error(ErrorCode::kMissingCode, "code (" + std::to_string(ru) + ", " + std::to_string(rv) +
                                             ") not decoded and neighbourhood insufficient");
  return sum / count;
}

PixelPoint forward_lookup(const DecodedMap& map, const Vec2& raster, int radius) {
  const int cx = static_cast<int>(std::lround(raster.x()));
  const int cy = static_cast<int>(std::lround(raster.y()));
  std::vector<Eigen::Vector4d> rows;  // dx, dy, u, v
  for (int y = cy - radius; y <= cy + radius; ++y) {
    for (int x = cx - radius; x <= cx + radius; ++x) {
      if (x < 0 || y < 0 || x >= map.width || y >= map.height) continue;
      const auto i = map.index(x, y);
      if (!map.valid(i)) continue;
      rows.emplace_back(x - raster.x(), y - raster.y(), map.u[i], map.v[i]);
    }
  }
  if (rows.size() < 6) throw Error(ErrorCode::kMissingCode, "too few decoded pixels around scanner point");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::MatrixXd b(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    a.row(r) << 1.0, rows[k](0), rows[k](1);
    b.row(r) << rows[k](2), rows[k](3);
  }
  const Eigen::Matrix3d ata = a.transpose() * a;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(ata);
  if (!(svd.singularValues()(2) > 1e-9 * svd.singularValues()(0)))
    throw Error(ErrorCode::kMissingCode, "decoded pixels around scanner point are collinear");
  const Eigen::MatrixXd sol = ata.ldlt().solve(a.transpose() * b);
  return {sol(0, 0), sol(0, 1)};
}

}  // namespace chiefray
