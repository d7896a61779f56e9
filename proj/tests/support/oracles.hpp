#pragma once

// Independent reference implementations used only by tests: brute-force
// ray casting, exact point-to-triangle distance, a brute-force convex hull
// and random mesh generators.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "orthorep/mesh.hpp"
#include "orthorep/rasterizer.hpp"
#include "orthorep/rng.hpp"

namespace orthorep::testing {

/// Moller-Trumbore; returns the ray parameter of the hit (both sides).
inline std::optional<double> ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 p = d.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = o - a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = d.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  return e2.dot(q) * inv;
}

struct OracleHit {
  bool covered = false;
  double depth = std::numeric_limits<double>::infinity();
};

/// Casts one ray per pixel center along the view direction from the near
/// plane and keeps the closest hit with non-negative depth.
inline std::vector<OracleHit> ray_cast(const TriMesh& mesh, const OrthoCamera& cam) {
  std::vector<OracleHit> out(static_cast<std::size_t>(cam.width) * cam.height);
  const Vec3 d = cam.view_dir.normalized();
  for (int j = 0; j < cam.height; ++j)
    for (int i = 0; i < cam.width; ++i) {
      const Vec3 o = unproject(cam, i + 0.5, j + 0.5, 0.0);
      OracleHit& h = out[static_cast<std::size_t>(j) * cam.width + i];
      for (std::size_t f = 0; f < mesh.faces().size(); ++f) {
        const auto t = ray_triangle(o, d, mesh.vertex(f, 0), mesh.vertex(f, 1), mesh.vertex(f, 2));
        if (t && *t >= 0.0 && *t < h.depth) {
          h.depth = *t;
          h.covered = true;
        }
      }
    }
  return out;
}

inline double point_segment_distance_2d(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

/// Screen-space distance (pixels) from every pixel center to the nearest
/// projected triangle edge.
inline std::vector<double> edge_distance(const TriMesh& mesh, const OrthoCamera& cam) {
  std::vector<double> out(static_cast<std::size_t>(cam.width) * cam.height, std::numeric_limits<double>::infinity());
  for (std::size_t f = 0; f < mesh.faces().size(); ++f) {
    Projection p[3];
    for (int k = 0; k < 3; ++k) p[k] = project(cam, mesh.vertex(f, k));
    for (int j = 0; j < cam.height; ++j)
      for (int i = 0; i < cam.width; ++i) {
        double& best = out[static_cast<std::size_t>(j) * cam.width + i];
        for (int k = 0; k < 3; ++k) {
          const Projection& a = p[k];
          const Projection& b = p[(k + 1) % 3];
          best = std::min(best, point_segment_distance_2d(i + 0.5, j + 0.5, a.x, a.y, b.x, b.y));
        }
      }
  }
  return out;
}

/// Closest point on triangle (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double distance_to_mesh(const Vec3& p, const TriMesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < mesh.faces().size(); ++f)
    best = std::min(best, (p - closest_point_on_triangle(p, mesh.vertex(f, 0), mesh.vertex(f, 1), mesh.vertex(f, 2))).norm());
  return best;
}

/// Convex hull of points in general position: a triple is a face when every
/// other point lies strictly on one side of its plane. O(n^4), for small n.
inline TriMesh convex_hull(const std::vector<Vec3>& pts) {
  std::vector<Face> faces;
  const auto n = static_cast<std::uint32_t>(pts.size());
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = i + 1; j < n; ++j)
      for (std::uint32_t k = j + 1; k < n; ++k) {
        const Vec3 nrm = (pts[j] - pts[i]).cross(pts[k] - pts[i]);
        int above = 0, below = 0;
        for (std::uint32_t m = 0; m < n; ++m) {
          if (m == i || m == j || m == k) continue;
          const double s = nrm.dot(pts[m] - pts[i]);
          if (s > 0) ++above;
          if (s < 0) ++below;
        }
        if (above == 0)
          faces.push_back({i, j, k});
        else if (below == 0)
          faces.push_back({i, k, j});
      }
  return TriMesh::from_faces(pts, faces);
}

inline TriMesh random_convex_hull(SplitMix64& g, int points = 24, const Vec3& half_extent = Vec3(1.75, 0.9, 0.7)) {
  std::vector<Vec3> pts;
  for (int i = 0; i < points; ++i)
    pts.emplace_back(g.uniform(-1, 1) * half_extent.x(), g.uniform(-1, 1) * half_extent.y(),
                     g.uniform(-1, 1) * half_extent.z());
  return convex_hull(pts);
}

/// Unstructured triangle soup inside a box; triangles freely intersect.
inline TriMesh random_soup(SplitMix64& g, int faces, double half = 1.0, double max_edge = 0.8) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int t = 0; t < faces; ++t) {
    const Vec3 c(g.uniform(-half, half), g.uniform(-half, half), g.uniform(-half, half));
    const auto base = static_cast<std::uint32_t>(v.size());
    for (int k = 0; k < 3; ++k)
      v.push_back(c + Vec3(g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1)) * (0.5 * max_edge));
    f.push_back({base, base + 1, base + 2});
  }
  return TriMesh::from_faces(std::move(v), std::move(f));
}

inline TriMesh unit_cube() {
  std::vector<Vec3> v;
  for (int k = 0; k < 8; ++k) v.emplace_back(k & 1 ? 0.5 : -0.5, k & 2 ? 0.5 : -0.5, k & 4 ? 0.5 : -0.5);
  // Outward winding; corner index bits x = 1, y = 2, z = 4.
  std::vector<Face> f = {{0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}, {0, 1, 5}, {0, 5, 4},
                         {2, 6, 7}, {2, 7, 3}, {0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}};
  return TriMesh::from_faces(std::move(v), std::move(f));
}

}  // namespace orthorep::testing
