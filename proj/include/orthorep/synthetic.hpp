#pragma once

// Synthetic box cars with an exactly computable label (projected frontal
// area), used to exercise the learning pipeline without CFD data.

#include <cstdio>
#include <string>
#include <vector>

#include "orthorep/mesh.hpp"
#include "orthorep/representation.hpp"
#include "orthorep/rng.hpp"

namespace orthorep::synthetic {

inline constexpr double kCarLength = 3.5;
/// Frontal areas (m^2) are divided by this to give labels of order one.
inline constexpr double kLabelScale = 4.0;

/// Lower body box spanning the full length plus a cabin box on top.
struct BoxCarParams {
  double body_width = 1.8;
  double body_height = 0.8;
  double clearance = 0.2;
  double cabin_start = -0.8;  // x of the cabin rear face
  double cabin_length = 1.8;
  double cabin_width = 1.4;
  double cabin_height = 0.5;
  double cabin_offset_y = 0.0;
};

inline BoxCarParams sample_box_car(SplitMix64& g) {
  BoxCarParams p;
  p.body_width = g.uniform(1.5, 2.1);
  p.body_height = g.uniform(0.6, 1.1);
  p.clearance = g.uniform(0.1, 0.3);
  p.cabin_length = g.uniform(1.0, 2.6);
  p.cabin_start = g.uniform(-0.5 * kCarLength, 0.5 * kCarLength - p.cabin_length);
  p.cabin_width = p.body_width * g.uniform(0.6, 0.95);
  p.cabin_height = g.uniform(0.3, 0.7);
  const double slack = 0.5 * (p.body_width - p.cabin_width);
  p.cabin_offset_y = g.uniform(-0.8 * slack, 0.8 * slack);
  return p;
}

/// Axis-aligned box with outward-facing triangles appended to `v` / `f`.
inline void append_box(std::vector<Vec3>& v, std::vector<Face>& f, const Vec3& lo, const Vec3& hi) {
  const auto base = static_cast<std::uint32_t>(v.size());
  for (int k = 0; k < 8; ++k)
    v.emplace_back(k & 1 ? hi.x() : lo.x(), k & 2 ? hi.y() : lo.y(), k & 4 ? hi.z() : lo.z());
  // Corner index bits: x = 1, y = 2, z = 4.
  static constexpr std::uint32_t quads[6][4] = {
      {0, 2, 6, 4}, {1, 5, 7, 3},  // -x, +x
      {0, 4, 5, 1}, {2, 3, 7, 6},  // -y, +y
      {0, 1, 3, 2}, {4, 6, 7, 5},  // -z, +z
  };
  for (const auto& q : quads) {
    f.push_back({base + q[0], base + q[2], base + q[1]});
    f.push_back({base + q[0], base + q[3], base + q[2]});
  }
}

inline TriMesh make_box_car(const BoxCarParams& p) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  const double half = 0.5 * kCarLength;
  const double top = p.clearance + p.body_height;
  append_box(v, f, {-half, -0.5 * p.body_width, p.clearance}, {half, 0.5 * p.body_width, top});
  // The cabin sinks slightly into the body so the two boxes overlap.
  append_box(v, f, {p.cabin_start, p.cabin_offset_y - 0.5 * p.cabin_width, top - 0.05},
             {p.cabin_start + p.cabin_length, p.cabin_offset_y + 0.5 * p.cabin_width, top + p.cabin_height});
  return TriMesh::from_faces(std::move(v), std::move(f));
}

/// Projected frontal area (m^2) measured from the coverage mask of the front
/// view, rendered exactly as in the integrated image.
inline double frontal_area(const TriMesh& mesh, const RenderOptions& opts = {}) {
  const CanvasLayout layout = make_layout(mesh, opts);
  const OrthoCamera& cam = layout.tile(ViewName::front).camera;
  const ViewRendering v = rasterize(mesh, cam, opts.raster);
  return static_cast<double>(v.covered_count()) / (cam.scale_x * cam.scale_y);
}

inline double frontal_area_label(const TriMesh& mesh, const RenderOptions& opts = {}) {
  return frontal_area(mesh, opts) / kLabelScale;
}

struct SyntheticCar {
  std::string id;
  std::string group_id;
  TriMesh mesh;
  double label = 0.0;
};

/// `base_shapes` random cars plus their bilateral flips (same group, same
/// label), so the result has 2 * base_shapes entries.
inline std::vector<SyntheticCar> make_dataset(int base_shapes, std::uint64_t seed, const RenderOptions& opts = {}) {
  SplitMix64 g(seed);
  std::vector<SyntheticCar> out;
  out.reserve(2 * static_cast<std::size_t>(base_shapes));
  for (int i = 0; i < base_shapes; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "box%04d", i);
    TriMesh mesh = make_box_car(sample_box_car(g));
    const double label = frontal_area_label(mesh, opts);
    TriMesh flipped = apply_augmentation(mesh, Augmentation::bilateral_flip());
    out.push_back({id, id, std::move(mesh), label});
    out.push_back({std::string(id) + "_f", id, std::move(flipped), label});
  }
  return out;
}

/// Image sources compared in the input ablation.
enum class InputSource { six_view_normal, six_view_depth, perspective, bottom_only };

inline const char* to_string(InputSource s) {
  switch (s) {
    case InputSource::six_view_normal: return "six_view_normal";
    case InputSource::six_view_depth: return "six_view_depth";
    case InputSource::perspective: return "perspective";
    case InputSource::bottom_only: return "bottom_only";
  }
  return "?";
}

/// Front-left three-quarter view from slightly above, framing a 3.5 m car.
inline PerspectiveCamera baseline_camera(int resolution) {
  PerspectiveCamera cam;
  cam.eye = Vec3(6.0, 5.0, 3.5);
  cam.target = Vec3(0.0, 0.0, 0.8);
  cam.up = Vec3(0, 0, 1);
  cam.fov_y_degrees = 40.0;
  cam.width = cam.height = resolution;
  return cam;
}

/// Fixed bottom-view scale: the 3.5 m car spans about 0.84 of the canvas.
inline double bottom_view_pixels_per_meter(int resolution) { return resolution / 4.0; }

inline RgbImage render_input(const TriMesh& mesh, InputSource source, int resolution = 384) {
  RenderOptions opts;
  opts.resolution = resolution;
  switch (source) {
    case InputSource::six_view_normal: return render_six_views(mesh, RenderingKind::normal, opts);
    case InputSource::six_view_depth: return render_six_views(mesh, RenderingKind::depth, opts);
    case InputSource::perspective: return render_perspective_shaded(mesh, baseline_camera(resolution));
    case InputSource::bottom_only:
      return render_single_view(mesh, ViewName::bottom, RenderingKind::normal, resolution,
                                bottom_view_pixels_per_meter(resolution));
  }
  throw ConfigError("unknown input source");
}

}  // namespace orthorep::synthetic
