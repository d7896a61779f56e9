#pragma once

// Software rasterizer: orthographic projection of a TriMesh into per-pixel
// depth, normal and coverage buffers. One sample per pixel at the pixel
// center (i + 0.5, j + 0.5); pixel (0, 0) is the top-left corner.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "orthorep/error.hpp"
#include "orthorep/mesh.hpp"

namespace orthorep {

/// Depth ties closer than this are resolved in favour of the lower face index.
inline constexpr double kDepthTieTolerance = 1e-9;

/// Orthographic camera. The camera basis is (right, up, view_dir) with
/// right = up x view_dir. A world point p maps to
///   x = width/2  + scale_x * dot(p - center, right)
///   y = height/2 - scale_y * dot(p - center, up)
///   depth = dot(p - center, view_dir) - near_plane_offset
/// so `near_plane_offset` is the signed position of the image plane along the
/// view direction, measured from `center`.
struct OrthoCamera {
  Vec3 view_dir = Vec3(0, 0, -1);
  Vec3 up = Vec3(0, 1, 0);
  Vec3 center = Vec3::Zero();
  double scale_x = 1.0;  // pixels per meter
  double scale_y = 1.0;
  int width = 1;
  int height = 1;
  double near_plane_offset = 0.0;

  Vec3 right() const { return up.cross(view_dir); }

  void validate() const {
    if (std::abs(view_dir.norm() - 1.0) > 1e-9) throw ConfigError("camera view_dir is not unit length");
    if (std::abs(up.norm() - 1.0) > 1e-9) throw ConfigError("camera up is not unit length");
    if (std::abs(view_dir.dot(up)) > 1e-9) throw ConfigError("camera up is not orthogonal to view_dir");
    if (!(scale_x > 0.0) || !(scale_y > 0.0)) throw ConfigError("camera scale factors must be positive");
    if (width < 1 || height < 1) throw ConfigError("camera image size must be at least 1x1");
    if (!center.allFinite() || !std::isfinite(near_plane_offset)) throw ConfigError("camera has non-finite fields");
  }

  bool operator==(const OrthoCamera&) const = default;
};

struct Projection {
  double x;
  double y;
  double depth;
};

inline Projection project(const OrthoCamera& cam, const Vec3& p) {
  const Vec3 d = p - cam.center;
  return {0.5 * cam.width + cam.scale_x * d.dot(cam.right()), 0.5 * cam.height - cam.scale_y * d.dot(cam.up),
          d.dot(cam.view_dir) - cam.near_plane_offset};
}

/// Inverse of project().
inline Vec3 unproject(const OrthoCamera& cam, double x, double y, double depth) {
  const double a = (x - 0.5 * cam.width) / cam.scale_x;
  const double b = (0.5 * cam.height - y) / cam.scale_y;
  return cam.center + a * cam.right() + b * cam.up + (depth + cam.near_plane_offset) * cam.view_dir;
}

/// Per-view raster buffers. Uncovered pixels hold depth = +inf, a zero
/// normal and face = -1.
struct ViewRendering {
  int width = 0;
  int height = 0;
  std::vector<double> depth;
  std::vector<Vec3> normal;
  std::vector<std::uint8_t> coverage;
  std::vector<std::int32_t> face;

  ViewRendering() = default;
  ViewRendering(int w, int h)
      : width(w),
        height(h),
        depth(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()),
        normal(static_cast<std::size_t>(w) * h, Vec3::Zero()),
        coverage(static_cast<std::size_t>(w) * h, 0),
        face(static_cast<std::size_t>(w) * h, -1) {}

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * width + i; }
  bool covered(int i, int j) const { return coverage[index(i, j)] != 0; }
  std::size_t covered_count() const {
    return static_cast<std::size_t>(std::count(coverage.begin(), coverage.end(), std::uint8_t{1}));
  }
};

struct RasterOptions {
  /// Interpolate area-weighted vertex normals instead of writing face normals.
  bool smooth_normals = false;
};

namespace detail {

inline double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

/// Shared scan-conversion core. `depth_at` receives barycentric weights and
/// returns the depth to z-test; `shade` writes the normal for the winner.
template <typename DepthFn, typename ShadeFn>
void scan_triangle(ViewRendering& out, const std::array<double, 3>& xs, const std::array<double, 3>& ys,
                   std::int32_t face_index, DepthFn&& depth_at, ShadeFn&& shade) {
  const double area = edge(xs[0], ys[0], xs[1], ys[1], xs[2], ys[2]);
  if (!(std::abs(area) > 1e-12)) return;
  const double minx = std::min({xs[0], xs[1], xs[2]}), maxx = std::max({xs[0], xs[1], xs[2]});
  const double miny = std::min({ys[0], ys[1], ys[2]}), maxy = std::max({ys[0], ys[1], ys[2]});
  const int i0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
  const int i1 = std::min(out.width - 1, static_cast<int>(std::floor(maxx - 0.5)));
  const int j0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
  const int j1 = std::min(out.height - 1, static_cast<int>(std::floor(maxy - 0.5)));
  const double inv_area = 1.0 / area;
  for (int j = j0; j <= j1; ++j) {
    const double py = j + 0.5;
    for (int i = i0; i <= i1; ++i) {
      const double px = i + 0.5;
      const double w0 = edge(xs[1], ys[1], xs[2], ys[2], px, py) * inv_area;
      const double w1 = edge(xs[2], ys[2], xs[0], ys[0], px, py) * inv_area;
      const double w2 = edge(xs[0], ys[0], xs[1], ys[1], px, py) * inv_area;
      if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
      const double d = depth_at(w0, w1, w2);
      const std::size_t idx = out.index(i, j);
      if (out.coverage[idx] && !(d < out.depth[idx] - kDepthTieTolerance)) continue;
      out.coverage[idx] = 1;
      out.depth[idx] = d;
      out.face[idx] = face_index;
      out.normal[idx] = shade(w0, w1, w2);
    }
  }
}

}  // namespace detail

/// Z-buffered rasterization with no backface culling. Written normals are
/// flipped, if needed, to face the camera (dot(normal, view_dir) <= 0).
inline ViewRendering rasterize(const TriMesh& mesh, const OrthoCamera& cam, const RasterOptions& opts = {}) {
  cam.validate();
  ViewRendering out(cam.width, cam.height);
  std::vector<Projection> proj;
  proj.reserve(mesh.vertex_count());
  for (const auto& v : mesh.vertices()) proj.push_back(project(cam, v));
  std::vector<Vec3> vnormals;
  if (opts.smooth_normals) vnormals = mesh.vertex_normals();

  const auto toward_camera = [&](Vec3 n) { return n.dot(cam.view_dir) > 0.0 ? Vec3(-n) : n; };

  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces()[f];
    const std::array<double, 3> xs{proj[face[0]].x, proj[face[1]].x, proj[face[2]].x};
    const std::array<double, 3> ys{proj[face[0]].y, proj[face[1]].y, proj[face[2]].y};
    const std::array<double, 3> ds{proj[face[0]].depth, proj[face[1]].depth, proj[face[2]].depth};
    const Vec3 fn = toward_camera(mesh.face_normals()[f]);
    detail::scan_triangle(
        out, xs, ys, static_cast<std::int32_t>(f),
        [&](double w0, double w1, double w2) { return w0 * ds[0] + w1 * ds[1] + w2 * ds[2]; },
        [&](double w0, double w1, double w2) -> Vec3 {
          if (!opts.smooth_normals) return fn;
          Vec3 n = w0 * vnormals[face[0]] + w1 * vnormals[face[1]] + w2 * vnormals[face[2]];
          const double len = n.norm();
          return len > 1e-12 ? toward_camera(n / len) : fn;
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Perspective baseline (ablation input only)

/// Pinhole camera looking from `eye` toward `target`. Image x follows the
/// physical right-hand side of the viewer.
struct PerspectiveCamera {
  Vec3 eye = Vec3(10, 0, 0);
  Vec3 target = Vec3::Zero();
  Vec3 up = Vec3(0, 0, 1);
  double fov_y_degrees = 40.0;
  int width = 384;
  int height = 384;
  double near = 1e-3;

  void validate() const {
    if (width < 1 || height < 1) throw ConfigError("camera image size must be at least 1x1");
    if (!(fov_y_degrees > 0.0 && fov_y_degrees < 180.0)) throw ConfigError("fov must be in (0, 180) degrees");
    const Vec3 fwd = target - eye;
    if (!(fwd.norm() > 0.0) || fwd.normalized().cross(up).norm() < 1e-9)
      throw ConfigError("perspective camera: degenerate eye/target/up");
  }
};

/// Depth holds view-space z (distance along the optical axis). Triangles with
/// any vertex behind the near plane are skipped.
inline ViewRendering rasterize_perspective(const TriMesh& mesh, const PerspectiveCamera& cam) {
  cam.validate();
  const Vec3 fwd = (cam.target - cam.eye).normalized();
  const Vec3 right = fwd.cross(cam.up).normalized();
  const Vec3 up = right.cross(fwd);
  const double focal = 0.5 * cam.height / std::tan(0.5 * cam.fov_y_degrees * std::numbers::pi / 180.0);

  ViewRendering out(cam.width, cam.height);
  struct P {
    double x, y, z;
  };
  std::vector<P> proj;
  proj.reserve(mesh.vertex_count());
  for (const auto& v : mesh.vertices()) {
    const Vec3 d = v - cam.eye;
    const double z = d.dot(fwd);
    proj.push_back({0.5 * cam.width + focal * d.dot(right) / z, 0.5 * cam.height - focal * d.dot(up) / z, z});
  }
  for (std::size_t f = 0; f < mesh.face_count(); ++f) {
    const Face& face = mesh.faces()[f];
    if (proj[face[0]].z <= cam.near || proj[face[1]].z <= cam.near || proj[face[2]].z <= cam.near) continue;
    const std::array<double, 3> xs{proj[face[0]].x, proj[face[1]].x, proj[face[2]].x};
    const std::array<double, 3> ys{proj[face[0]].y, proj[face[1]].y, proj[face[2]].y};
    const std::array<double, 3> inv{1.0 / proj[face[0]].z, 1.0 / proj[face[1]].z, 1.0 / proj[face[2]].z};
    Vec3 n = mesh.face_normals()[f];
    const Vec3 centroid = (mesh.vertex(f, 0) + mesh.vertex(f, 1) + mesh.vertex(f, 2)) / 3.0;
    if (n.dot(centroid - cam.eye) > 0.0) n = -n;
    detail::scan_triangle(
        out, xs, ys, static_cast<std::int32_t>(f),
        [&](double w0, double w1, double w2) { return 1.0 / (w0 * inv[0] + w1 * inv[1] + w2 * inv[2]); },
        [&](double, double, double) { return n; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Debug dumps: 16-byte header (magic "ORF1", width, height, channels as
// little-endian u32) followed by little-endian float32 samples, row-major,
// channels interleaved.

struct RawRaster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;
};

inline void write_raw_raster(const std::filesystem::path& path, const RawRaster& r) {
  static_assert(std::endian::native == std::endian::little, "raw dumps assume a little-endian host");
  if (r.data.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw ConfigError("raw raster size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("ORF1", 4);
  out.write(reinterpret_cast<const char*>(&r.width), 4);
  out.write(reinterpret_cast<const char*>(&r.height), 4);
  out.write(reinterpret_cast<const char*>(&r.channels), 4);
  out.write(reinterpret_cast<const char*>(r.data.data()), static_cast<std::streamsize>(r.data.size() * 4));
  if (!out) throw Error("write failed: " + path.string());
}

inline RawRaster read_raw_raster(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 4, "ORF1") != 0) throw ParseError(path.string(), 0, 0, "bad raw raster magic");
  RawRaster r;
  std::memcpy(&r.width, bytes.data() + 4, 4);
  std::memcpy(&r.height, bytes.data() + 8, 4);
  std::memcpy(&r.channels, bytes.data() + 12, 4);
  const std::size_t n = static_cast<std::size_t>(r.width) * r.height * r.channels;
  if (bytes.size() != 16 + 4 * n) throw ParseError(path.string(), 0, 16, "raw raster payload size mismatch");
  r.data.resize(n);
  std::memcpy(r.data.data(), bytes.data() + 16, 4 * n);
  return r;
}

inline RawRaster depth_raster(const ViewRendering& v) {
  RawRaster r{static_cast<std::uint32_t>(v.width), static_cast<std::uint32_t>(v.height), 1, {}};
  r.data.reserve(v.depth.size());
  for (double d : v.depth) r.data.push_back(static_cast<float>(d));
  return r;
}

inline RawRaster normal_raster(const ViewRendering& v) {
  RawRaster r{static_cast<std::uint32_t>(v.width), static_cast<std::uint32_t>(v.height), 3, {}};
  r.data.reserve(3 * v.normal.size());
  for (const auto& n : v.normal)
    for (int k = 0; k < 3; ++k) r.data.push_back(static_cast<float>(n[k]));
  return r;
}

}  // namespace orthorep
