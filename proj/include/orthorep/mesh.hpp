#pragma once

// Triangle meshes: loading (OBJ, STL), validation, length normalization and
// the two dataset augmentations (width resize, bilateral flip).
//
// Canonical frame: +x longitudinal (front of the car at +x), +y lateral
// (left), +z up. `AxisFrame` remaps other conventions onto this one.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "orthorep/error.hpp"

namespace orthorep {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::uint32_t, 3>;

/// Faces with area at or below this are dropped on construction (m^2).
inline constexpr double kDegenerateArea = 1e-12;
/// STL vertices closer than this (per coordinate) are merged (m).
inline constexpr double kWeldTolerance = 1e-8;

struct Bounds {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool valid() const { return (max.array() >= min.array()).all(); }
  Vec3 extent() const { return valid() ? Vec3(max - min) : Vec3::Zero(); }
  Vec3 center() const { return valid() ? Vec3(0.5 * (max + min)) : Vec3::Zero(); }
  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
};

/// Indexed triangle mesh with one unit normal per face (right-hand rule on the
/// winding). Immutable: every operation returns a new mesh.
class TriMesh {
 public:
  TriMesh() = default;

  /// Validates indices and coordinates, drops faces with area <= 1e-12 and
  /// computes face normals. `dropped`, when given, receives the number of
  /// degenerate faces removed.
  static TriMesh from_faces(std::vector<Vec3> vertices, std::vector<Face> faces,
                            std::size_t* dropped = nullptr) {
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (!vertices[i].allFinite())
        throw GeometryError("vertex " + std::to_string(i) + " has a non-finite coordinate");
    }
    TriMesh m;
    m.vertices_ = std::move(vertices);
    m.faces_.reserve(faces.size());
    m.normals_.reserve(faces.size());
    std::size_t n_dropped = 0;
    for (std::size_t i = 0; i < faces.size(); ++i) {
      const Face& f = faces[i];
      for (auto idx : f) {
        if (idx >= m.vertices_.size())
          throw GeometryError("face " + std::to_string(i) + ": index out of range");
      }
      const Vec3 c = (m.vertices_[f[1]] - m.vertices_[f[0]]).cross(m.vertices_[f[2]] - m.vertices_[f[0]]);
      const double len = c.norm();
      if (!(0.5 * len > kDegenerateArea)) {
        ++n_dropped;
        continue;
      }
      m.faces_.push_back(f);
      m.normals_.push_back(c / len);
    }
    if (dropped) *dropped = n_dropped;
    return m;
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Vec3>& face_normals() const { return normals_; }

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }
  bool empty() const { return faces_.empty(); }

  const Vec3& vertex(std::size_t face, int corner) const { return vertices_[faces_[face][corner]]; }

  double face_area(std::size_t i) const {
    return 0.5 * (vertex(i, 1) - vertex(i, 0)).cross(vertex(i, 2) - vertex(i, 0)).norm();
  }

  double surface_area() const {
    double a = 0.0;
    for (std::size_t i = 0; i < faces_.size(); ++i) a += face_area(i);
    return a;
  }

  /// Bounds over vertices referenced by at least one face.
  Bounds bounds() const {
    Bounds b;
    for (const auto& f : faces_)
      for (auto idx : f) b.expand(vertices_[idx]);
    return b;
  }

  /// Area-weighted vertex normals (only used when smooth shading is requested).
  std::vector<Vec3> vertex_normals() const {
    std::vector<Vec3> vn(vertices_.size(), Vec3::Zero());
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      const double a = face_area(i);
      for (auto idx : faces_[i]) vn[idx] += a * normals_[i];
    }
    for (auto& n : vn) {
      const double len = n.norm();
      n = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
    }
    return vn;
  }

  /// Copy with every vertex mapped through `fn`. Normals are recomputed, and
  /// when `reverse_winding` is set every face swaps its last two corners.
  template <typename Fn>
  TriMesh transformed(Fn&& fn, bool reverse_winding = false) const {
    std::vector<Vec3> v;
    v.reserve(vertices_.size());
    for (const auto& p : vertices_) v.push_back(fn(p));
    std::vector<Face> f = faces_;
    if (reverse_winding)
      for (auto& face : f) std::swap(face[1], face[2]);
    return from_faces(std::move(v), std::move(f));
  }

 private:
  friend TriMesh normalize_length(const TriMesh&, double);

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<Vec3> normals_;
};

// ---------------------------------------------------------------------------
// Loading and saving

enum class MeshFormat { obj, stl };

struct LoadReport {
  std::size_t degenerate_dropped = 0;
  std::size_t polygons_triangulated = 0;  // OBJ faces with more than 3 corners
  std::size_t vertices_welded = 0;        // STL duplicate vertices merged
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && !tmp.empty();
}

inline bool parse_long(std::string_view s, long long& out) {
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtoll(tmp.c_str(), &end, 10);
  return end == tmp.c_str() + tmp.size() && !tmp.empty();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Merges vertices whose coordinates agree within `tol` (Chebyshev distance).
class VertexWelder {
 public:
  explicit VertexWelder(double tol) : tol_(tol) {}

  std::uint32_t add(const Vec3& p) {
    const Key k = key(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(Key{k[0] + dx, k[1] + dy, k[2] + dz});
          if (it == cells_.end()) continue;
          for (auto idx : it->second)
            if ((vertices_[idx] - p).cwiseAbs().maxCoeff() <= tol_) {
              ++merged_;
              return idx;
            }
        }
    const auto idx = static_cast<std::uint32_t>(vertices_.size());
    vertices_.push_back(p);
    cells_[k].push_back(idx);
    return idx;
  }

  std::vector<Vec3> take() { return std::move(vertices_); }
  std::size_t merged() const { return merged_; }

 private:
  using Key = std::array<long long, 3>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      std::size_t h = 1469598103934665603ULL;
      for (auto v : k) h = (h ^ static_cast<std::size_t>(v)) * 1099511628211ULL;
      return h;
    }
  };
  Key key(const Vec3& p) const {
    return {std::llround(std::floor(p.x() / tol_)), std::llround(std::floor(p.y() / tol_)),
            std::llround(std::floor(p.z() / tol_))};
  }

  double tol_;
  std::vector<Vec3> vertices_;
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> cells_;
  std::size_t merged_ = 0;
};

inline TriMesh finish_load(const std::string& source, std::vector<Vec3> v, std::vector<Face> f,
                           LoadReport* report) {
  if (f.empty()) throw ParseError(source, 0, 0, "no faces");
  std::size_t dropped = 0;
  TriMesh m = TriMesh::from_faces(std::move(v), std::move(f), &dropped);
  if (report) report->degenerate_dropped = dropped;
  if (m.empty()) throw GeometryError(source + ": all faces are degenerate");
  return m;
}

}  // namespace detail

/// Parses ASCII OBJ text (v and f records; other records ignored). Polygons
/// are fan-triangulated; 1-based and negative (relative) indices accepted.
inline TriMesh parse_obj(std::string_view text, const std::string& source = "<obj>",
                         LoadReport* report = nullptr) {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  struct PendingRef {
    long long index;
    std::size_t line;
  };
  std::vector<std::array<PendingRef, 3>> pending;
  std::size_t line_no = 0, polys = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto tok = detail::split_ws(line);
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(source, line_no, 0, "vertex needs 3 coordinates");
      Vec3 p;
      for (int k = 0; k < 3; ++k)
        if (!detail::parse_double(tok[k + 1], p[k]))
          throw ParseError(source, line_no, 0, "bad coordinate '" + std::string(tok[k + 1]) + "'");
      vertices.push_back(p);
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError(source, line_no, 0, "face needs at least 3 vertices");
      std::vector<long long> idx;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        std::string_view ref = tok[k].substr(0, tok[k].find('/'));
        long long i;
        if (!detail::parse_long(ref, i))
          throw ParseError(source, line_no, 0, "bad face index '" + std::string(tok[k]) + "'");
        if (i == 0) throw ParseError(source, line_no, 0, "index out of range (OBJ indices are 1-based)");
        if (i < 0) {
          i = static_cast<long long>(vertices.size()) + i;
          if (i < 0) throw ParseError(source, line_no, 0, "index out of range");
        } else {
          i -= 1;
        }
        idx.push_back(i);
      }
      if (idx.size() > 3) ++polys;
      for (std::size_t k = 1; k + 1 < idx.size(); ++k)
        pending.push_back({PendingRef{idx[0], line_no}, PendingRef{idx[k], line_no},
                           PendingRef{idx[k + 1], line_no}});
    }
  }
  faces.reserve(pending.size());
  for (const auto& p : pending) {
    Face f;
    for (int k = 0; k < 3; ++k) {
      if (p[k].index >= static_cast<long long>(vertices.size()))
        throw ParseError(source, p[k].line, 0, "index out of range");
      f[k] = static_cast<std::uint32_t>(p[k].index);
    }
    faces.push_back(f);
  }
  if (report) report->polygons_triangulated = polys;
  return detail::finish_load(source, std::move(vertices), std::move(faces), report);
}

/// Parses binary or ASCII STL. Per-facet vertices are welded at 1e-8 m; the
/// stored facet normals are ignored in favour of the winding.
inline TriMesh parse_stl(std::string_view data, const std::string& source = "<stl>",
                         LoadReport* report = nullptr) {
  detail::VertexWelder welder(kWeldTolerance);
  std::vector<Face> faces;

  bool binary = false;
  if (data.size() >= 84) {
    std::uint32_t n;
    std::memcpy(&n, data.data() + 80, 4);
    binary = 84 + 50ULL * n == data.size();
  }
  const bool looks_ascii = detail::trim(data.substr(0, std::min<std::size_t>(data.size(), 80))).starts_with("solid");

  if (binary) {
    std::uint32_t n;
    std::memcpy(&n, data.data() + 80, 4);
    faces.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::size_t off = 84 + 50ULL * i + 12;
      Face f;
      for (int k = 0; k < 3; ++k) {
        float xyz[3];
        std::memcpy(xyz, data.data() + off + 12 * k, 12);
        f[k] = welder.add(Vec3(xyz[0], xyz[1], xyz[2]));
      }
      faces.push_back(f);
    }
  } else if (looks_ascii) {
    std::size_t line_no = 0, pos = 0;
    std::vector<std::uint32_t> corners;
    while (pos <= data.size()) {
      std::size_t nl = data.find('\n', pos);
      if (nl == std::string_view::npos) nl = data.size();
      std::string_view line = detail::trim(data.substr(pos, nl - pos));
      pos = nl + 1;
      ++line_no;
      auto tok = detail::split_ws(line);
      if (tok.empty()) continue;
      if (tok[0] == "vertex") {
        if (tok.size() != 4) throw ParseError(source, line_no, 0, "vertex needs 3 coordinates");
        Vec3 p;
        for (int k = 0; k < 3; ++k)
          if (!detail::parse_double(tok[k + 1], p[k]))
            throw ParseError(source, line_no, 0, "bad coordinate '" + std::string(tok[k + 1]) + "'");
        corners.push_back(welder.add(p));
      } else if (tok[0] == "endloop") {
        if (corners.size() < 3) throw ParseError(source, line_no, 0, "facet with fewer than 3 vertices");
        for (std::size_t k = 1; k + 1 < corners.size(); ++k) faces.push_back({corners[0], corners[k], corners[k + 1]});
        corners.clear();
      }
    }
  } else {
    throw ParseError(source, 0, 80, "not a binary STL (size mismatch) and not ASCII 'solid'");
  }
  if (report) report->vertices_welded = welder.merged();
  return detail::finish_load(source, welder.take(), std::move(faces), report);
}

inline MeshFormat format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".obj") return MeshFormat::obj;
  if (ext == ".stl") return MeshFormat::stl;
  throw ConfigError("unknown mesh format for " + path.string() + " (expected .obj or .stl)");
}

inline TriMesh load_mesh(const std::filesystem::path& path, MeshFormat format, LoadReport* report = nullptr) {
  if (!std::filesystem::exists(path)) throw Error("mesh file not found: " + path.string());
  const std::string data = detail::read_file(path);
  return format == MeshFormat::obj ? parse_obj(data, path.string(), report)
                                   : parse_stl(data, path.string(), report);
}

inline TriMesh load_mesh(const std::filesystem::path& path, LoadReport* report = nullptr) {
  return load_mesh(path, format_from_path(path), report);
}

inline std::string to_obj(const TriMesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices()) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return out.str();
}

inline void save_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_obj(mesh);
  if (!out) throw Error("write failed: " + path.string());
}

/// Binary STL writer (float32 coordinates, so not lossless for doubles).
inline void save_stl(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  char header[80] = {};
  std::memcpy(header, "orthorep binary stl", 19);
  out.write(header, 80);
  const auto n = static_cast<std::uint32_t>(mesh.face_count());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (std::size_t i = 0; i < mesh.face_count(); ++i) {
    float buf[12];
    for (int k = 0; k < 3; ++k) buf[k] = static_cast<float>(mesh.face_normals()[i][k]);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) buf[3 + 3 * c + k] = static_cast<float>(mesh.vertex(i, c)[k]);
    out.write(reinterpret_cast<const char*>(buf), sizeof buf);
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

// ---------------------------------------------------------------------------
// Frame, normalization, augmentation

/// Signed axis permutation mapping an input mesh frame onto the canonical
/// (longitudinal, lateral, up) = (+x, +y, +z) frame. Written as three signed
/// source axes, e.g. "+x,+y,+z" (identity) or "-z,+x,+y".
struct AxisFrame {
  std::array<int, 3> source_axis{0, 1, 2};
  std::array<int, 3> sign{1, 1, 1};

  static AxisFrame parse(std::string_view text) {
    AxisFrame f;
    std::array<bool, 3> used{};
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      while (pos < text.size() && (text[pos] == ',' || text[pos] == ' ')) ++pos;
      int s = 1;
      if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) s = text[pos++] == '-' ? -1 : 1;
      if (pos >= text.size()) throw ConfigError("axis frame '" + std::string(text) + "': expected 3 axes");
      const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[pos++])));
      if (c < 'x' || c > 'z') throw ConfigError("axis frame '" + std::string(text) + "': bad axis '" + c + "'");
      const int a = c - 'x';
      if (used[a]) throw ConfigError("axis frame '" + std::string(text) + "': repeated axis");
      used[a] = true;
      f.source_axis[k] = a;
      f.sign[k] = s;
    }
    while (pos < text.size() && text[pos] == ' ') ++pos;
    if (pos != text.size()) throw ConfigError("axis frame '" + std::string(text) + "': trailing characters");
    return f;
  }

  std::string to_string() const {
    std::string s;
    for (int k = 0; k < 3; ++k) {
      if (k) s += ',';
      s += sign[k] < 0 ? '-' : '+';
      s += static_cast<char>('x' + source_axis[k]);
    }
    return s;
  }

  bool is_identity() const { return source_axis == std::array<int, 3>{0, 1, 2} && sign == std::array<int, 3>{1, 1, 1}; }

  /// True when the map is a reflection (winding must be reversed).
  bool mirrors() const {
    int inversions = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) inversions += source_axis[i] > source_axis[j];
    return (inversions % 2 == 1) != (sign[0] * sign[1] * sign[2] < 0);
  }
};

inline TriMesh apply_axis_frame(const TriMesh& mesh, const AxisFrame& frame) {
  if (frame.is_identity()) return mesh;
  return mesh.transformed(
      [&](const Vec3& p) {
        return Vec3(frame.sign[0] * p[frame.source_axis[0]], frame.sign[1] * p[frame.source_axis[1]],
                    frame.sign[2] * p[frame.source_axis[2]]);
      },
      frame.mirrors());
}

/// Uniformly scales about the origin so the x extent equals `target_length`.
inline TriMesh normalize_length(const TriMesh& mesh, double target_length) {
  if (mesh.empty()) throw GeometryError("normalize_length: empty mesh");
  if (!(target_length > 0.0)) throw ConfigError("normalize_length: target length must be positive");
  const double extent = mesh.bounds().extent().x();
  if (!(extent > 0.0)) throw GeometryError("normalize_length: zero longitudinal extent");
  const double s = target_length / extent;
  TriMesh out = mesh;
  if (s == 1.0) return out;
  for (auto& v : out.vertices_) v *= s;
  return out;
}

enum class AugmentationKind { identity, width_resize, bilateral_flip };

inline constexpr double kMaxWidthFactor = 1.2;
inline constexpr double kMinWidthFactor = 1.0 / 1.2;

/// One augmentation step. Chains are applied in order (see AugmentationChain).
struct Augmentation {
  AugmentationKind kind = AugmentationKind::identity;
  double factor = 1.0;  // width_resize only

  static Augmentation identity() { return {}; }
  static Augmentation width_resize(double f) { return {AugmentationKind::width_resize, f}; }
  static Augmentation bilateral_flip() { return {AugmentationKind::bilateral_flip, 1.0}; }

  bool operator==(const Augmentation&) const = default;
};

using AugmentationChain = std::vector<Augmentation>;

inline const char* to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::identity: return "identity";
    case AugmentationKind::width_resize: return "width_resize";
    case AugmentationKind::bilateral_flip: return "bilateral_flip";
  }
  return "?";
}

inline AugmentationKind parse_augmentation_kind(std::string_view s) {
  if (s == "identity") return AugmentationKind::identity;
  if (s == "width_resize") return AugmentationKind::width_resize;
  if (s == "bilateral_flip") return AugmentationKind::bilateral_flip;
  throw ConfigError("unknown augmentation kind '" + std::string(s) + "'");
}

inline bool width_factor_in_range(double f) {
  return std::isfinite(f) && f >= kMinWidthFactor - 1e-12 && f <= kMaxWidthFactor + 1e-12;
}

inline TriMesh apply_augmentation(const TriMesh& mesh, const Augmentation& aug) {
  switch (aug.kind) {
    case AugmentationKind::identity:
      return mesh;
    case AugmentationKind::width_resize: {
      if (!width_factor_in_range(aug.factor))
        throw ConfigError("width_resize factor " + std::to_string(aug.factor) + " outside [1/1.2, 1.2]");
      const double f = aug.factor;
      return mesh.transformed([f](const Vec3& p) { return Vec3(p.x(), f * p.y(), p.z()); });
    }
    case AugmentationKind::bilateral_flip:
      return mesh.transformed([](const Vec3& p) { return Vec3(p.x(), -p.y(), p.z()); }, true);
  }
  return mesh;
}

inline TriMesh apply_augmentation(const TriMesh& mesh, const AugmentationChain& chain) {
  TriMesh m = mesh;
  for (const auto& a : chain) m = apply_augmentation(m, a);
  return m;
}

}  // namespace orthorep
