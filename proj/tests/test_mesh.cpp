#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "orthorep/mesh.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace orthorep;
using orthorep::testing::TempDir;

namespace {

// Independent binary STL writer: 80-byte header, u32 count, 50 bytes per facet.
std::string binary_stl(const std::vector<std::array<Vec3, 3>>& tris) {
  std::string s(80, ' ');
  const auto n = static_cast<std::uint32_t>(tris.size());
  s.append(reinterpret_cast<const char*>(&n), 4);
  for (const auto& t : tris) {
    float rec[12] = {0, 0, 0};
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c) rec[3 + 3 * k + c] = static_cast<float>(t[k][c]);
    s.append(reinterpret_cast<const char*>(rec), 48);
    s.append(2, '\0');
  }
  return s;
}

std::vector<std::array<Vec3, 3>> triangles_of(const TriMesh& m) {
  std::vector<std::array<Vec3, 3>> out;
  for (std::size_t f = 0; f < m.faces().size(); ++f) out.push_back({m.vertex(f, 0), m.vertex(f, 1), m.vertex(f, 2)});
  return out;
}

void expect_unit_normals(const TriMesh& m) {
  for (const auto& n : m.face_normals()) EXPECT_NEAR(n.squaredNorm(), 1.0, 1e-6);
}

}  // namespace

TEST(LoadMesh, SingleTriangleObj) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
  ASSERT_EQ(m.faces().size(), 1u);
  EXPECT_TRUE(m.face_normals()[0].isApprox(Vec3(0, 0, 1)));
}

TEST(LoadMesh, ObjIndexZeroIsOutOfRange) {
  try {
    parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n", "zero.obj");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("index out of range"), std::string::npos);
    EXPECT_EQ(e.line(), 4u);
  }
}

TEST(LoadMesh, ObjIndexPastEndNamesLine) {
  try {
    parse_obj("v 0 0 0\nv 1 0 0\n# comment\nv 0 1 0\nf 1 2 9\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
  }
}

TEST(LoadMesh, ObjPolygonsAreFanTriangulated) {
  LoadReport r;
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n", "quad", &r);
  EXPECT_EQ(m.faces().size(), 2u);
  EXPECT_EQ(r.polygons_triangulated, 1u);
  EXPECT_NEAR(m.surface_area(), 1.0, 1e-15);
}

TEST(LoadMesh, ObjNegativeIndices) {
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
  EXPECT_EQ(m.faces()[0], (Face{0, 1, 2}));
}

TEST(LoadMesh, DegenerateFacesDroppedAndCounted) {
  LoadReport r;
  const TriMesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 2 0 0\nf 1 2 3\nf 1 2 4\n", "d", &r);
  EXPECT_EQ(m.faces().size(), 1u);
  EXPECT_EQ(r.degenerate_dropped, 1u);
}

TEST(LoadMesh, DegenerateOnlyGeometryRejected) {
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n"), GeometryError);
  EXPECT_THROW(parse_obj("v 0 0 0\n"), ParseError);
}

TEST(LoadMesh, NonFiniteCoordinateRejected) {
  EXPECT_THROW(parse_obj("v 0 0 nan\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"), Error);
}

TEST(LoadMesh, BinaryStlCubeWelds) {
  const auto tris = triangles_of(orthorep::testing::unit_cube());
  std::set<std::array<float, 3>> unique;  // independent count of distinct corners
  for (const auto& t : tris)
    for (const auto& v : t) unique.insert({static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())});
  LoadReport r;
  const TriMesh m = parse_stl(binary_stl(tris), "cube.stl", &r);
  EXPECT_EQ(m.faces().size(), 12u);
  EXPECT_EQ(m.vertices().size(), unique.size());
  EXPECT_EQ(m.vertices().size(), 8u);
  EXPECT_EQ(r.vertices_welded, 36u - 8u);
}

TEST(LoadMesh, AsciiStl) {
  const std::string text =
      "solid t\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n"
      "  endloop\n endfacet\nendsolid t\n";
  const TriMesh m = parse_stl(text);
  ASSERT_EQ(m.faces().size(), 1u);
  EXPECT_TRUE(m.face_normals()[0].isApprox(Vec3(0, 0, 1)));
}

TEST(LoadMesh, MissingFileNamesPath) {
  try {
    load_mesh("/nonexistent/dir/car.obj");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/car.obj"), std::string::npos);
  }
}

TEST(LoadMesh, SaveLoadRoundTrip) {
  TempDir dir;
  SplitMix64 g(4);
  const TriMesh m = orthorep::testing::random_convex_hull(g);
  save_obj(m, dir / "m.obj");
  const TriMesh a = load_mesh(dir / "m.obj");
  save_obj(a, dir / "a.obj");
  const TriMesh b = load_mesh(dir / "a.obj");
  ASSERT_EQ(a.faces(), b.faces());
  ASSERT_EQ(m.vertices().size(), a.vertices().size());
  for (std::size_t i = 0; i < m.vertices().size(); ++i) EXPECT_LE((m.vertices()[i] - a.vertices()[i]).norm(), 1e-9);

  save_stl(m, dir / "m.stl");
  const TriMesh s = load_mesh(dir / "m.stl");
  EXPECT_EQ(s.faces().size(), m.faces().size());
  EXPECT_NEAR(s.surface_area(), m.surface_area(), 1e-5);
}

TEST(NormalizeLength, UnitCubeScalesUniformly) {
  const TriMesh m = normalize_length(orthorep::testing::unit_cube(), 3.5);
  const Vec3 e = m.bounds().extent();
  EXPECT_NEAR(e.x(), 3.5, 1e-9);
  EXPECT_NEAR(e.y(), 3.5, 1e-9);
  EXPECT_NEAR(e.z(), 3.5, 1e-9);
}

TEST(NormalizeLength, AlreadyAtTargetIsIdentical) {
  const TriMesh m = normalize_length(orthorep::testing::unit_cube(), 1.0);
  EXPECT_EQ(m.vertices(), orthorep::testing::unit_cube().vertices());
}

TEST(NormalizeLength, ScalesEveryCoordinate) {
  SplitMix64 g(9);
  const TriMesh raw = orthorep::testing::random_convex_hull(g, 20, Vec3(2.1, 0.9, 0.7));
  const TriMesh m = normalize_length(raw.transformed([&](const Vec3& p) { return Vec3(p * (4.2 / raw.bounds().extent().x())); }), 3.5);
  // Independent min/max scan over vertices.
  double lo = 1e300, hi = -1e300;
  for (const auto& v : m.vertices()) {
    lo = std::min(lo, v.x());
    hi = std::max(hi, v.x());
  }
  EXPECT_NEAR(hi - lo, 3.5, 1e-9);
}

TEST(NormalizeLength, IdempotentAndNormalsUnchanged) {
  SplitMix64 g(2);
  const TriMesh raw = orthorep::testing::random_convex_hull(g);
  const TriMesh once = normalize_length(raw, 3.5);
  const TriMesh twice = normalize_length(once, 3.5);
  for (std::size_t i = 0; i < once.vertices().size(); ++i)
    EXPECT_LE((once.vertices()[i] - twice.vertices()[i]).norm(), 1e-12);
  EXPECT_EQ(once.face_normals(), raw.face_normals());
}

TEST(NormalizeLength, ZeroExtentRejected) {
  const TriMesh flat = parse_obj("v 0 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\n");
  EXPECT_THROW(normalize_length(flat, 3.5), GeometryError);
}

TEST(Augmentation, IdentityReturnsEqualMesh) {
  const TriMesh c = orthorep::testing::unit_cube();
  const TriMesh m = apply_augmentation(c, Augmentation::identity());
  EXPECT_EQ(m.vertices(), c.vertices());
  EXPECT_EQ(m.faces(), c.faces());
}

TEST(Augmentation, FlipIsAnInvolution) {
  SplitMix64 g(8);
  const TriMesh m = orthorep::testing::random_convex_hull(g);
  const TriMesh twice = apply_augmentation(m, AugmentationChain{Augmentation::bilateral_flip(), Augmentation::bilateral_flip()});
  for (std::size_t i = 0; i < m.vertices().size(); ++i) EXPECT_LE((m.vertices()[i] - twice.vertices()[i]).norm(), 1e-12);
  for (std::size_t i = 0; i < m.faces().size(); ++i)
    EXPECT_LE((m.face_normals()[i] - twice.face_normals()[i]).norm(), 1e-12);
}

TEST(Augmentation, FlipPreservesAreaAndOutwardNormals) {
  SplitMix64 g(5);
  const TriMesh m = orthorep::testing::random_convex_hull(g);
  const TriMesh f = apply_augmentation(m, Augmentation::bilateral_flip());
  EXPECT_NEAR(f.surface_area(), m.surface_area(), 1e-9 * m.surface_area());
  const Vec3 c = f.bounds().center();
  for (std::size_t i = 0; i < f.faces().size(); ++i) EXPECT_GT(f.face_normals()[i].dot(f.vertex(i, 0) - c), 0.0);
  expect_unit_normals(f);
}

TEST(Augmentation, WidthResizeOnUnitCube) {
  const TriMesh m = apply_augmentation(orthorep::testing::unit_cube(), Augmentation::width_resize(1.2));
  double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
  for (const auto& v : m.vertices())
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], v[k]);
      hi[k] = std::max(hi[k], v[k]);
    }
  EXPECT_NEAR(hi[0] - lo[0], 1.0, 1e-15);
  EXPECT_NEAR(hi[1] - lo[1], 1.2, 1e-15);
  EXPECT_NEAR(hi[2] - lo[2], 1.0, 1e-15);
  for (std::size_t i = 0; i < m.faces().size(); ++i) EXPECT_TRUE(std::isfinite(m.face_area(i)));
  expect_unit_normals(m);
}

TEST(Augmentation, WidthFactorOutOfRange) {
  const TriMesh c = orthorep::testing::unit_cube();
  EXPECT_THROW(apply_augmentation(c, Augmentation::width_resize(1.21)), ConfigError);
  EXPECT_THROW(apply_augmentation(c, Augmentation::width_resize(0.8)), ConfigError);
  EXPECT_NO_THROW(apply_augmentation(c, Augmentation::width_resize(1.0 / 1.2)));
}

TEST(AxisFrame, ParseAndApply) {
  const AxisFrame f = AxisFrame::parse("-z,+x,+y");
  EXPECT_EQ(f.to_string(), "-z,+x,+y");
  const TriMesh m = apply_axis_frame(parse_obj("v 0 0 1\nv 1 0 1\nv 0 1 1\nf 1 2 3\n"), f);
  EXPECT_TRUE(m.vertices()[0].isApprox(Vec3(-1, 0, 0)));
  EXPECT_TRUE(AxisFrame::parse("+x,+y,+z").is_identity());
  EXPECT_THROW(AxisFrame::parse("+x,+x,+z"), ConfigError);
  EXPECT_THROW(AxisFrame::parse("+x,+y"), ConfigError);
}

TEST(AxisFrame, MirroringFrameKeepsOutwardWinding) {
  const TriMesh c = orthorep::testing::unit_cube();
  const TriMesh m = apply_axis_frame(c, AxisFrame::parse("+y,+x,+z"));
  for (std::size_t i = 0; i < m.faces().size(); ++i) EXPECT_GT(m.face_normals()[i].dot(m.vertex(i, 0)), 0.0);
}
