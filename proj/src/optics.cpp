#include "chiefray/optics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "chiefray/parallel.hpp"

namespace chiefray {

Vec2 ScannerModel::raster_to_local(const Vec2& r) const {
  const double s = pixel_size();
  return {(r.x() + 0.5 - 0.5 * raster_width()) * s, (r.y() + 0.5 - 0.5 * raster_height()) * s};
}

Vec2 ScannerModel::local_to_raster(const Vec2& l) const {
  const double s = pixel_size();
  return {l.x() / s + 0.5 * raster_width() - 0.5, l.y() / s + 0.5 * raster_height() - 0.5};
}

Intrinsics ground_truth_intrinsics(const ProjectorModel& p) {
  const double f = p.image_distance() / p.pixel_pitch;
  return {f, f, 0.5 * (p.width - 1) + p.image_plane_offset.x() / p.pixel_pitch,
          0.5 * (p.height - 1) + p.image_plane_offset.y() / p.pixel_pitch};
}

Vec3 panel_point(const ProjectorModel& p, const PixelPoint& px) {
  const Intrinsics k = ground_truth_intrinsics(p);
  return {-(px.u - k.cx) * p.pixel_pitch, -(px.v - k.cy) * p.pixel_pitch, -p.image_distance()};
}

Vec3 conjugate_point(const ProjectorModel& p, const PixelPoint& px) {
  const Intrinsics k = ground_truth_intrinsics(p);
  const double z = p.focus_distance;
  return {(px.u - k.cx) / k.fx * z, (px.v - k.cy) / k.fy * z, z};
}

Vec2 concentric_disc(double a, double b) {
  const double x = 2.0 * a - 1.0;
  const double y = 2.0 * b - 1.0;
  if (x == 0.0 && y == 0.0) return Vec2::Zero();
  double r, phi;
  if (std::abs(x) > std::abs(y)) {
    r = x;
    phi = (M_PI / 4.0) * (y / x);
  } else {
    r = y;
    phi = M_PI / 2.0 - (M_PI / 4.0) * (x / y);
  }
  return {r * std::cos(phi), r * std::sin(phi)};
}

void validate_bench(const BenchConfig& b) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kValidation, msg); };
  const auto& p = b.projector;
  if (p.width < 1 || p.height < 1) fail("projector resolution must be >= 1");
  if (!(p.pixel_pitch > 0.0)) fail("projector pixel pitch must be positive");
  if (!(p.lens_focal_length > 0.0)) fail("lens focal length must be positive");
  if (!(p.aperture_diameter > 0.0)) fail("aperture diameter must be positive");
  if (!(p.focus_distance > p.lens_focal_length)) fail("focus distance must exceed the focal length");
  if (!p.image_plane_offset.allFinite()) fail("image plane offset must be finite");
  if (b.rays_per_pixel_sample < 1) fail("rays_per_pixel_sample must be >= 1");
  if (!(b.mask_thickness >= 0.0)) fail("mask thickness must be >= 0");
  if (!(b.sensor_noise >= 0.0)) fail("sensor noise must be >= 0");
  if (!(b.scanner.dpi > 0.0)) fail("scanner dpi must be positive");
  if (!(b.scanner.frame.width > 0.0 && b.scanner.frame.height > 0.0)) fail("scanner extent must be positive");
  if (!b.scanner.frame.pose.is_valid(1e-9)) fail("scanner rotation is not orthonormal");
  if (b.scanner.raster_width() < 1 || b.scanner.raster_height() < 1) fail("scanner raster is empty");

  const double parallel_cos = std::cos(M_PI / 180.0);
  for (std::size_t i = 0; i < b.masks.size(); ++i) {
    const auto& m = b.masks[i];
    const std::string name = "mask " + std::to_string(i);
    if (m.rows < 2 || m.cols < 2) fail(name + ": grid must be at least 2x2");
    if (!(m.pitch > 0.0)) fail(name + ": pitch must be positive");
    if (!(m.hole_diameter > 0.0 && m.hole_diameter < m.pitch)) fail(name + ": need 0 < hole diameter < pitch");
    if (!m.frame.pose.is_valid(1e-9)) fail(name + ": rotation is not orthonormal");
    for (int r : {0, m.rows - 1}) {
      for (int c : {0, m.cols - 1}) {
        const Vec3 h = m.hole_world(r, c);
        if (!(h.z() > 0.0)) fail(name + ": pinholes must lie in front of the projector");
        if (std::abs(h.z() - p.focus_distance) < 1e-6) fail(name + ": mask must not sit on the focus plane");
      }
    }
    if (std::abs(m.frame.normal().dot(b.scanner.frame.normal())) > parallel_cos)
      fail(name + ": masks must be non-parallel to the scanner by at least 1 degree");
    for (std::size_t j = 0; j < i; ++j) {
      if (std::abs(m.frame.normal().dot(b.masks[j].frame.normal())) > parallel_cos)
        fail(name + ": masks must be non-parallel to each other by at least 1 degree");
    }
  }

  // Sampled occlusion check from the optical centre: no line of sight may cross two
  // mask sheets.
  for (std::size_t i = 0; i < b.masks.size(); ++i) {
    const auto& a = b.masks[i];
    constexpr int kSamples = 24;
    for (int sy = 0; sy <= kSamples; ++sy) {
      for (int sx = 0; sx <= kSamples; ++sx) {
        const Vec2 local((sx / double(kSamples) - 0.5) * a.frame.width, (sy / double(kSamples) - 0.5) * a.frame.height);
        const Vec3 dir = a.frame.to_world(local).normalized();
        for (std::size_t j = 0; j < b.masks.size(); ++j) {
          if (j == i) continue;
          const auto& other = b.masks[j].frame;
          const double t = other.intersect(Vec3::Zero(), dir);
          if (t > 0.0 && other.contains(other.to_local(t * dir)))
            fail("masks " + std::to_string(j) + " and " + std::to_string(i) +
                 " occlude each other as seen from the optical centre");
        }
      }
    }
  }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b) ^ c);
}

// Strata grid a x b with a * b == n and a as close to sqrt(n) as possible.
std::pair<int, int> strata(int n) {
  int a = static_cast<int>(std::sqrt(static_cast<double>(n)));
  while (a > 1 && n % a != 0) --a;
  return {a, n / a};
}

struct MaskCrossing {
  double t;
  int mask;
  Vec2 local;
};

// Traces a ray leaving the lens plane at `lens` towards `target`.
std::optional<RayHit> trace_from_lens(const BenchConfig& bench, const Vec3& lens, const Vec3& target) {
  const Vec3 dir = (target - lens).normalized();
  RayHit hit;
  double last_t = 0.0;
  if (!bench.masks.empty()) {
    MaskCrossing crossings[8];
    int count = 0;
    std::vector<MaskCrossing> overflow;
    for (std::size_t m = 0; m < bench.masks.size(); ++m) {
      const auto& frame = bench.masks[m].frame;
      const double t = frame.intersect(lens, dir);
      if (!(t > 0.0)) continue;
      const Vec2 local = frame.to_local(lens + t * dir);
      if (!frame.contains(local)) continue;
      if (count < 8) crossings[count++] = {t, static_cast<int>(m), local};
      else overflow.push_back({t, static_cast<int>(m), local});
    }
    std::vector<MaskCrossing> all(crossings, crossings + count);
    all.insert(all.end(), overflow.begin(), overflow.end());
    if (all.empty()) return std::nullopt;  // stopped by the housing
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.t < y.t; });
    for (const auto& c : all) {
      const auto& mask = bench.masks[static_cast<std::size_t>(c.mask)];
      const int col = std::clamp(static_cast<int>(std::lround(c.local.x() / mask.pitch + 0.5 * (mask.cols - 1))), 0, mask.cols - 1);
      const int row = std::clamp(static_cast<int>(std::lround(c.local.y() / mask.pitch + 0.5 * (mask.rows - 1))), 0, mask.rows - 1);
      const Vec2 hole = mask.hole_local(row, col);
      const double radius = 0.5 * mask.hole_diameter;
      if ((c.local - hole).norm() > radius) return std::nullopt;
      if (bench.mask_thickness > 0.0) {
        const double cosine = std::abs(mask.frame.normal().dot(dir));
        const Vec3 back = lens + (c.t + bench.mask_thickness / cosine) * dir;
        if ((mask.frame.to_local(back) - hole).norm() > radius) return std::nullopt;
      }
      if (hit.mask_id < 0) {
        hit.mask_id = c.mask;
        hit.pinhole_id = row * mask.cols + col;
      }
      last_t = c.t;
    }
  }
  const auto& scanner = bench.scanner;
  const double t = scanner.frame.intersect(lens, dir);
  if (!(t > last_t)) return std::nullopt;
  hit.world = lens + t * dir;
  hit.raster = scanner.local_to_raster(scanner.frame.to_local(hit.world));
  return hit;
}

struct BundleBuilder {
  std::vector<LightTransport::Entry> entries;
  std::vector<LightTransport::Bundle> bundles;
  std::vector<std::pair<std::int32_t, double>> scratch;

  void flush(int mask, int pinhole, std::int32_t pixel) {
    if (scratch.empty()) return;
    std::sort(scratch.begin(), scratch.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    LightTransport::Bundle bundle{mask, pinhole, pixel, static_cast<std::uint32_t>(entries.size()), 0, 0.0};
    for (std::size_t i = 0; i < scratch.size();) {
      double w = 0.0;
      const auto r = scratch[i].first;
      for (; i < scratch.size() && scratch[i].first == r; ++i) w += scratch[i].second;
      entries.push_back({pixel, r, static_cast<float>(w)});
      bundle.energy += w;
      ++bundle.entry_count;
    }
    bundles.push_back(bundle);
    scratch.clear();
  }
};

int raster_index(const ScannerModel& s, const Vec2& r) {
  const int x = static_cast<int>(std::floor(r.x() + 0.5));
  const int y = static_cast<int>(std::floor(r.y() + 0.5));
  if (x < 0 || y < 0 || x >= s.raster_width() || y >= s.raster_height()) return -1;
  return y * s.raster_width() + x;
}

}  // namespace

std::optional<RayHit> trace_ray(const BenchConfig& bench, const PixelPoint& pixel, const Vec2& lens_sample) {
  if (lens_sample.norm() > 0.5 * bench.projector.aperture_diameter * (1.0 + 1e-12))
    throw Error(ErrorCode::kInvalidArgument, "lens sample outside the aperture");
  const Vec3 lens(lens_sample.x(), lens_sample.y(), 0.0);
  return trace_from_lens(bench, lens, conjugate_point(bench.projector, pixel));
}

LightTransport build_transport(const BenchConfig& bench) {
  validate_bench(bench);
  const auto& proj = bench.projector;
  const Intrinsics k = ground_truth_intrinsics(proj);
  const double aperture_r = 0.5 * proj.aperture_diameter;
  const int n = bench.rays_per_pixel_sample;
  const auto [sa, sb] = strata(n);

  LightTransport lt;
  lt.raster_width = bench.scanner.raster_width();
  lt.raster_height = bench.scanner.raster_height();
  lt.projector_width = proj.width;
  lt.projector_height = proj.height;

  auto jittered = [&](std::mt19937_64& rng, int s) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int i = s % sa, j = s / sa;
    const double a = (i + uni(rng)) / sa;
    const double b = (j + uni(rng)) / sb;
    return concentric_disc(a, b);
  };
  // Emission point inside the pixel square, stratified independently of the disc
  // samples through a shuffled stratum order.
  auto subpixel = [&](std::mt19937_64& rng, const std::vector<int>& order, int s) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int k = order[static_cast<std::size_t>(s)];
    const int i = k % sa, j = k / sa;
    return Vec2((i + uni(rng)) / sa - 0.5, (j + uni(rng)) / sb - 0.5);
  };
  auto shuffled = [&](std::mt19937_64& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
      const auto r = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(r)]);
    }
    return order;
  };

  std::vector<BundleBuilder> parts;
  if (bench.masks.empty()) {
    const auto rows = static_cast<std::size_t>(proj.height);
    parts.resize(rows);
    parallel_for(rows, [&](std::size_t begin, std::size_t end) {
      for (std::size_t v = begin; v < end; ++v) {
        auto& out = parts[v];
        for (int u = 0; u < proj.width; ++u) {
          const std::int32_t pixel = static_cast<std::int32_t>(v) * proj.width + u;
          std::mt19937_64 rng(stream_seed(bench.rng_seed, 0xffff, 0, static_cast<std::uint64_t>(pixel)));
          const auto order = shuffled(rng);
          for (int s = 0; s < n; ++s) {
            const Vec2 sp = subpixel(rng, order, s);
            const Vec3 target = conjugate_point(proj, {u + sp.x(), v + sp.y()});
            const Vec2 l = aperture_r * jittered(rng, s);
            const auto hit = trace_from_lens(bench, Vec3(l.x(), l.y(), 0.0), target);
            if (!hit) continue;
            const int r = raster_index(bench.scanner, hit->raster);
            if (r >= 0) out.scratch.emplace_back(r, 1.0 / n);
          }
          out.flush(-1, -1, pixel);
        }
      }
    });
  } else {
    struct HoleRef {
      int mask, row, col;
    };
    std::vector<HoleRef> holes;
    for (std::size_t m = 0; m < bench.masks.size(); ++m)
      for (int r = 0; r < bench.masks[m].rows; ++r)
        for (int c = 0; c < bench.masks[m].cols; ++c) holes.push_back({static_cast<int>(m), r, c});
    parts.resize(holes.size());
    const double focus = proj.focus_distance;

    parallel_for(holes.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t hi = begin; hi < end; ++hi) {
        const auto& ref = holes[hi];
        const auto& mask = bench.masks[static_cast<std::size_t>(ref.mask)];
        const int pinhole = ref.row * mask.cols + ref.col;
        const Vec3 h = mask.hole_world(ref.row, ref.col);
        const double hole_r = 0.5 * mask.hole_diameter;
        const PixelPoint chief = project(k, RigidPose::identity(), h);
        // Pixels whose conjugate points fall inside the lens disc projected through
        // the hole onto the focus plane, with margin for mask tilt.
        const double spread = aperture_r * std::abs(focus - h.z()) / h.z() + hole_r * focus / h.z();
        const double radius_px = 1.25 * spread * k.fx / focus + 2.5;
        const int u0 = std::max(0, static_cast<int>(std::floor(chief.u - radius_px)));
        const int u1 = std::min(proj.width - 1, static_cast<int>(std::ceil(chief.u + radius_px)));
        const int v0 = std::max(0, static_cast<int>(std::floor(chief.v - radius_px)));
        const int v1 = std::min(proj.height - 1, static_cast<int>(std::ceil(chief.v + radius_px)));
        auto& out = parts[hi];
        const Vec3 normal = mask.frame.normal();
        for (int v = v0; v <= v1; ++v) {
          for (int u = u0; u <= u1; ++u) {
            if (std::hypot(u - chief.u, v - chief.v) > radius_px) continue;
            const std::int32_t pixel = v * proj.width + u;
            std::mt19937_64 rng(stream_seed(bench.rng_seed, hi, static_cast<std::uint64_t>(ref.mask),
                                            static_cast<std::uint64_t>(pixel)));
            const auto order = shuffled(rng);
            for (int s = 0; s < n; ++s) {
              const Vec2 sp = subpixel(rng, order, s);
              const Vec3 c = conjugate_point(proj, {u + sp.x(), v + sp.y()});
              // Importance sampling: pick the point on the hole, then recover the lens
              // point on the line through it and the conjugate point.
              const Vec2 hs = mask.hole_local(ref.row, ref.col) + hole_r * jittered(rng, s);
              const Vec3 x = mask.frame.to_world(hs);
              const double scale = c.z() / (c.z() - x.z());
              const Vec3 lens = c + (x - c) * scale;
              if (Vec2(lens.x(), lens.y()).norm() > aperture_r) continue;
              const auto hit = trace_from_lens(bench, lens, c);
              if (!hit || hit->mask_id != ref.mask || hit->pinhole_id != pinhole) continue;
              const int r = raster_index(bench.scanner, hit->raster);
              if (r < 0) continue;
              const Vec3 d = (c - lens).normalized();
              // Area of the lens patch that maps onto this hole sample.
              const double jac = scale * scale * std::abs(normal.dot(d)) / std::abs(d.z());
              out.scratch.emplace_back(r, jac * hole_r * hole_r / (aperture_r * aperture_r * n));
            }
            out.flush(ref.mask, pinhole, pixel);
          }
        }
      }
    });
  }

  std::size_t total_entries = 0, total_bundles = 0;
  for (const auto& p : parts) {
    total_entries += p.entries.size();
    total_bundles += p.bundles.size();
  }
  lt.entries.reserve(total_entries);
  lt.bundles.reserve(total_bundles);
  for (auto& p : parts) {
    const auto offset = static_cast<std::uint32_t>(lt.entries.size());
    for (auto b : p.bundles) {
      b.first_entry += offset;
      lt.bundles.push_back(b);
    }
    lt.entries.insert(lt.entries.end(), p.entries.begin(), p.entries.end());
    p = BundleBuilder{};
  }
  return lt;
}

std::vector<std::int32_t> LightTransport::dominant_pixel() const {
  const auto n = static_cast<std::size_t>(raster_width) * raster_height;
  std::vector<std::int32_t> best_pixel(n, -1);
  std::vector<float> best_weight(n, 0.0f);
  for (const auto& e : entries) {
    const auto r = static_cast<std::size_t>(e.raster);
    if (e.weight > best_weight[r] || (e.weight == best_weight[r] && e.weight > 0.0f && e.pixel < best_pixel[r])) {
      best_weight[r] = e.weight;
      best_pixel[r] = e.pixel;
    }
  }
  return best_pixel;
}

ScanImage render_scan(const LightTransport& lt, const BinaryImage& frame) {
  if (frame.width != lt.projector_width || frame.height != lt.projector_height)
    throw Error(ErrorCode::kInvalidArgument, "frame does not match the projector resolution");
  std::vector<double> acc(static_cast<std::size_t>(lt.raster_width) * lt.raster_height, 0.0);
  for (const auto& e : lt.entries) {
    if (frame.data[static_cast<std::size_t>(e.pixel)]) acc[static_cast<std::size_t>(e.raster)] += e.weight;
  }
  ScanImage img(lt.raster_width, lt.raster_height);
  for (std::size_t i = 0; i < acc.size(); ++i) img.data[i] = static_cast<float>(acc[i]);
  return img;
}

ScanImage render_scan(const BenchConfig& bench, const BinaryImage& frame) {
  return render_scan(build_transport(bench), frame);
}

std::vector<ChiefRayTruth> chief_ray_table(const BenchConfig& bench) {
  const Intrinsics k = ground_truth_intrinsics(bench.projector);
  const auto& sc = bench.scanner;
  std::vector<ChiefRayTruth> table;
  for (std::size_t m = 0; m < bench.masks.size(); ++m) {
    const auto& mask = bench.masks[m];
    for (int r = 0; r < mask.rows; ++r) {
      for (int c = 0; c < mask.cols; ++c) {
        ChiefRayTruth t;
        t.mask_id = static_cast<int>(m);
        t.row = r;
        t.col = c;
        t.pinhole_id = r * mask.cols + c;
        t.pinhole_world = mask.hole_world(r, c);
        if (!(t.pinhole_world.z() > 0.0)) continue;
        t.chief_pixel = project(k, RigidPose::identity(), t.pinhole_world);
        t.on_device = t.chief_pixel.u >= 0.0 && t.chief_pixel.v >= 0.0 && t.chief_pixel.u <= bench.projector.width - 1 &&
                      t.chief_pixel.v <= bench.projector.height - 1;
        const Vec3 dir = t.pinhole_world.normalized();
        const double ts = sc.frame.intersect(Vec3::Zero(), dir);
        if (ts > t.pinhole_world.norm()) {
          t.scanner_world = ts * dir;
          t.scanner_local = sc.frame.to_local(t.scanner_world);
          t.scanner_raster = sc.local_to_raster(t.scanner_local);
          t.on_scanner = sc.frame.contains(t.scanner_local);
        }
        table.push_back(t);
      }
    }
  }
  return table;
}

SynthDataset synth_dataset(const BenchConfig& bench) {
  SynthDataset ds;
  ds.stack = generate_patterns(bench.projector.width, bench.projector.height);
  ds.transport = build_transport(bench);
  ds.intrinsics = ground_truth_intrinsics(bench.projector);
  ds.chief_rays = chief_ray_table(bench);
  ds.scans.reserve(ds.stack.frames.size());
  for (const auto& f : ds.stack.frames) ds.scans.push_back(render_scan(ds.transport, f));
  if (bench.sensor_noise > 0.0) {
    const auto& white = ds.scans[static_cast<std::size_t>(ds.stack.layout.white_index())].data;
    const double peak = *std::max_element(white.begin(), white.end());
    std::mt19937_64 rng(stream_seed(bench.rng_seed, 0x5e5, 0x5e5, 0x5e5));
    std::normal_distribution<double> noise(0.0, bench.sensor_noise * peak);
    for (auto& scan : ds.scans)
      for (auto& x : scan.data) x = static_cast<float>(std::max(0.0, x + noise(rng)));
  }
  return ds;
}

}  // namespace chiefray
