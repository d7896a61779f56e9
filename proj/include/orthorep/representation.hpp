#pragma once

// Six-view orthographic normal/depth representation.
//
// Codecs:
//   normal: color = (n + 1) / 2 per channel, background (0.5, 0.5, 0.5)
//   depth:  gray  = (d - d_min) / (d_max - d_min), R = G = B, background 1
// with (d_min, d_max) taken per view from the covered depths.
//
// Canvas layout (2 rows x 3 columns): [front, rear, top; bottom, left, right].
// On a 384x384 canvas every tile is 128 wide and 192 tall. All six views
// share one pixels-per-meter scale and are centered on the mesh bounding box.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "orthorep/error.hpp"
#include "orthorep/mesh.hpp"
#include "orthorep/png.hpp"
#include "orthorep/rasterizer.hpp"

namespace orthorep {

enum class RenderingKind { normal, depth };

inline const char* to_string(RenderingKind k) { return k == RenderingKind::normal ? "normal" : "depth"; }

inline RenderingKind parse_rendering_kind(std::string_view s) {
  if (s == "normal") return RenderingKind::normal;
  if (s == "depth") return RenderingKind::depth;
  throw ConfigError("unknown rendering kind '" + std::string(s) + "'");
}

using Rgb = std::array<float, 3>;

inline constexpr Rgb kNormalBackground{0.5f, 0.5f, 0.5f};
inline constexpr Rgb kDepthBackground{1.0f, 1.0f, 1.0f};
/// A constant-depth view gets d_max = d_min + this (meters).
inline constexpr double kDepthRangeEpsilon = 1e-6;

struct DepthRange {
  double d_min = 0.0;
  double d_max = 1.0;
  bool operator==(const DepthRange&) const = default;
};

// ---------------------------------------------------------------------------
// Scalar codecs

inline Rgb normal_to_color(const Vec3& n) {
  return {static_cast<float>(0.5 * (n.x() + 1.0)), static_cast<float>(0.5 * (n.y() + 1.0)),
          static_cast<float>(0.5 * (n.z() + 1.0))};
}

/// Inverse of the normal codec, renormalized to unit length. Returns zero for
/// the background color.
inline Vec3 color_to_normal(const Rgb& c) {
  Vec3 n(2.0 * c[0] - 1.0, 2.0 * c[1] - 1.0, 2.0 * c[2] - 1.0);
  const double len = n.norm();
  return len > 1e-6 ? Vec3(n / len) : Vec3::Zero();
}

inline double depth_to_gray(double d, const DepthRange& r) {
  return std::clamp((d - r.d_min) / (r.d_max - r.d_min), 0.0, 1.0);
}

inline double gray_to_depth(double g, const DepthRange& r) { return r.d_min + g * (r.d_max - r.d_min); }

inline std::uint16_t quantize(double v, int bit_depth) {
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxv));
}

inline double dequantize(std::uint16_t q, int bit_depth) { return q / (bit_depth == 16 ? 65535.0 : 255.0); }

/// True when a decoded normal-image color is distinguishable from the
/// background. Any unit normal has a component of magnitude >= 1/sqrt(3),
/// i.e. a channel at least 0.28 away from 0.5.
inline bool is_normal_foreground(const Rgb& c) {
  return std::max({std::abs(c[0] - 0.5f), std::abs(c[1] - 0.5f), std::abs(c[2] - 0.5f)}) > 0.125f;
}

// ---------------------------------------------------------------------------
// Images

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // row-major, RGB interleaved, values in [0, 1]

  RgbImage() = default;
  RgbImage(int w, int h, const Rgb& fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + i);
  }

  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  Rgb at(int x, int y) const {
    const std::size_t o = offset(x, y);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
  void set(int x, int y, const Rgb& c) {
    const std::size_t o = offset(x, y);
    pixels[o] = c[0];
    pixels[o + 1] = c[1];
    pixels[o + 2] = c[2];
  }
};

/// A single view after the normal or depth color codec.
struct EncodedRendering : RgbImage {
  RenderingKind kind = RenderingKind::normal;
  std::optional<DepthRange> depth_range;  // depth renderings only
  Rgb background = kNormalBackground;
};

inline EncodedRendering encode_normal(const ViewRendering& view) {
  EncodedRendering out;
  static_cast<RgbImage&>(out) = RgbImage(view.width, view.height, kNormalBackground);
  out.kind = RenderingKind::normal;
  out.background = kNormalBackground;
  for (int j = 0; j < view.height; ++j)
    for (int i = 0; i < view.width; ++i)
      if (view.covered(i, j)) out.set(i, j, normal_to_color(view.normal[view.index(i, j)]));
  return out;
}

/// Depth range of the covered pixels, widened by kDepthRangeEpsilon when the
/// view is flat. Empty when nothing is covered.
inline std::optional<DepthRange> covered_depth_range(const ViewRendering& view) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < view.depth.size(); ++k)
    if (view.coverage[k]) {
      lo = std::min(lo, view.depth[k]);
      hi = std::max(hi, view.depth[k]);
    }
  if (!(hi >= lo)) return std::nullopt;
  if (hi - lo < kDepthRangeEpsilon) hi = lo + kDepthRangeEpsilon;
  return DepthRange{lo, hi};
}

inline EncodedRendering encode_depth(const ViewRendering& view, std::optional<DepthRange> range = std::nullopt) {
  if (range) {
    if (!std::isfinite(range->d_min) || !std::isfinite(range->d_max) || range->d_max < range->d_min)
      throw ConfigError("encode_depth: invalid explicit depth range");
    if (range->d_max == range->d_min) {
      const auto own = covered_depth_range(view);
      if (own && own->d_max - own->d_min > kDepthRangeEpsilon)
        throw ConfigError("encode_depth: d_max == d_min but the view has more than one depth value");
      range->d_max = range->d_min + kDepthRangeEpsilon;
    }
  } else {
    range = covered_depth_range(view);
    if (!range) throw ConfigError("encode_depth: no covered pixels and no explicit depth range");
  }
  EncodedRendering out;
  static_cast<RgbImage&>(out) = RgbImage(view.width, view.height, kDepthBackground);
  out.kind = RenderingKind::depth;
  out.depth_range = range;
  out.background = kDepthBackground;
  for (int j = 0; j < view.height; ++j)
    for (int i = 0; i < view.width; ++i)
      if (view.covered(i, j)) {
        const auto g = static_cast<float>(depth_to_gray(view.depth[view.index(i, j)], *range));
        out.set(i, j, {g, g, g});
      }
  return out;
}

/// Decodes depths at pixels marked in `coverage`; other pixels get +inf.
inline std::vector<double> decode_depth(const EncodedRendering& r, const std::vector<std::uint8_t>& coverage) {
  if (r.kind != RenderingKind::depth || !r.depth_range) throw ConfigError("decode_depth: not a depth rendering");
  std::vector<double> d(static_cast<std::size_t>(r.width) * r.height, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < d.size(); ++k)
    if (coverage[k]) d[k] = gray_to_depth(r.pixels[3 * k], *r.depth_range);
  return d;
}

// ---------------------------------------------------------------------------
// Six-view layout

enum class ViewName { front, rear, top, bottom, left, right };

inline constexpr std::array<ViewName, 6> kViewOrder{ViewName::front, ViewName::rear,  ViewName::top,
                                                    ViewName::bottom, ViewName::left, ViewName::right};

inline const char* to_string(ViewName v) {
  static constexpr const char* names[] = {"front", "rear", "top", "bottom", "left", "right"};
  return names[static_cast<int>(v)];
}

inline ViewName parse_view_name(std::string_view s) {
  for (auto v : kViewOrder)
    if (s == to_string(v)) return v;
  throw ConfigError("unknown view '" + std::string(s) + "'");
}

/// View direction of each camera in the canonical frame.
inline Vec3 view_direction(ViewName v) {
  switch (v) {
    case ViewName::front: return Vec3(-1, 0, 0);
    case ViewName::rear: return Vec3(1, 0, 0);
    case ViewName::top: return Vec3(0, 0, -1);
    case ViewName::bottom: return Vec3(0, 0, 1);
    case ViewName::left: return Vec3(0, -1, 0);
    case ViewName::right: return Vec3(0, 1, 0);
  }
  return Vec3::Zero();
}

inline Vec3 view_up(ViewName v) {
  return v == ViewName::top || v == ViewName::bottom ? Vec3(1, 0, 0) : Vec3(0, 0, 1);
}

struct TileRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  bool operator==(const TileRect&) const = default;
  bool contains(int px, int py) const { return px >= x && px < x + width && py >= y && py < y + height; }
};

/// Columns are (W - 2*floor(W/3), floor(W/3), floor(W/3)) wide and rows
/// (H - floor(H/2), floor(H/2)) tall, so the left and right tiles always
/// have equal size.
inline std::array<TileRect, 6> tile_rects(int width, int height) {
  const int c = width / 3, c0 = width - 2 * c;
  const int r = height / 2, r0 = height - r;
  const int xs[3] = {0, c0, c0 + c}, ws[3] = {c0, c, c};
  const int ys[2] = {0, r0}, hs[2] = {r0, r};
  std::array<TileRect, 6> out;
  for (int k = 0; k < 6; ++k) out[k] = {xs[k % 3], ys[k / 3], ws[k % 3], hs[k / 3]};
  return out;
}

struct TileLayout {
  ViewName view = ViewName::front;
  TileRect rect;
  OrthoCamera camera;
  bool operator==(const TileLayout&) const = default;
};

struct CanvasLayout {
  int width = 0;
  int height = 0;
  std::array<TileLayout, 6> tiles;

  bool operator==(const CanvasLayout&) const = default;
  const TileLayout& tile(ViewName v) const { return tiles[static_cast<int>(v)]; }
};

inline nlohmann::json to_json(const CanvasLayout& l) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& t : l.tiles) {
    const auto& c = t.camera;
    views.push_back({{"name", to_string(t.view)},
                     {"rect", {t.rect.x, t.rect.y, t.rect.width, t.rect.height}},
                     {"view_dir", {c.view_dir.x(), c.view_dir.y(), c.view_dir.z()}},
                     {"up", {c.up.x(), c.up.y(), c.up.z()}},
                     {"center", {c.center.x(), c.center.y(), c.center.z()}},
                     {"scale", {c.scale_x, c.scale_y}},
                     {"near_plane_offset", c.near_plane_offset}});
  }
  return {{"canvas", {l.width, l.height}}, {"views", views}};
}

inline CanvasLayout layout_from_json(const nlohmann::json& j) {
  try {
    CanvasLayout l;
    l.width = j.at("canvas").at(0).get<int>();
    l.height = j.at("canvas").at(1).get<int>();
    const auto& views = j.at("views");
    if (views.size() != 6) throw ConfigError("layout must list exactly six views");
    auto vec = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
    for (std::size_t k = 0; k < 6; ++k) {
      const auto& v = views[k];
      TileLayout t;
      t.view = parse_view_name(v.at("name").get<std::string>());
      if (t.view != kViewOrder[k]) throw ConfigError("layout order must be front, rear, top, bottom, left, right");
      const auto& r = v.at("rect");
      t.rect = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()};
      t.camera.view_dir = vec(v.at("view_dir"));
      t.camera.up = vec(v.at("up"));
      t.camera.center = vec(v.at("center"));
      t.camera.scale_x = v.at("scale").at(0).get<double>();
      t.camera.scale_y = v.at("scale").at(1).get<double>();
      t.camera.near_plane_offset = v.at("near_plane_offset").get<double>();
      t.camera.width = t.rect.width;
      t.camera.height = t.rect.height;
      t.camera.validate();
      l.tiles[k] = t;
    }
    return l;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed layout metadata: ") + e.what());
  }
}

struct RenderOptions {
  int resolution = 384;
  /// Fixed scale for every view. When unset, the largest scale that fits all
  /// six views into their tiles (times `fill`) is used.
  std::optional<double> pixels_per_meter;
  double fill = 0.95;
  RasterOptions raster;
  int threads = 1;

  void validate() const {
    if (resolution < 6) throw ConfigError("resolution must be at least 6 pixels");
    if (pixels_per_meter && !(*pixels_per_meter > 0.0)) throw ConfigError("pixels_per_meter must be positive");
    if (!(fill > 0.0 && fill <= 1.0)) throw ConfigError("fill must be in (0, 1]");
    if (threads < 1) throw ConfigError("threads must be >= 1");
  }
};

namespace detail {
/// Extent of an axis-aligned box along a unit axis.
inline double extent_along(const Vec3& extent, const Vec3& axis) { return axis.cwiseAbs().dot(extent); }
}  // namespace detail

inline CanvasLayout make_layout(const TriMesh& mesh, const RenderOptions& opts) {
  opts.validate();
  const Bounds b = mesh.bounds();
  const Vec3 center = b.center();
  const Vec3 ext = b.extent();
  const auto rects = tile_rects(opts.resolution, opts.resolution);

  double scale = 0.0;
  if (opts.pixels_per_meter) {
    scale = *opts.pixels_per_meter;
  } else {
    double s = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 6; ++k) {
      const Vec3 v = view_direction(kViewOrder[k]), u = view_up(kViewOrder[k]);
      const double eh = detail::extent_along(ext, u.cross(v)), ev = detail::extent_along(ext, u);
      if (eh > 0.0) s = std::min(s, rects[k].width / eh);
      if (ev > 0.0) s = std::min(s, rects[k].height / ev);
    }
    scale = std::isfinite(s) ? opts.fill * s : 1.0;
  }

  CanvasLayout l;
  l.width = l.height = opts.resolution;
  for (int k = 0; k < 6; ++k) {
    TileLayout& t = l.tiles[k];
    t.view = kViewOrder[k];
    t.rect = rects[k];
    t.camera.view_dir = view_direction(t.view);
    t.camera.up = view_up(t.view);
    t.camera.center = center;
    t.camera.scale_x = t.camera.scale_y = scale;
    t.camera.width = t.rect.width;
    t.camera.height = t.rect.height;
    t.camera.near_plane_offset = -0.5 * detail::extent_along(ext, t.camera.view_dir);
  }
  return l;
}

/// Raw buffers of all six views plus the layout they were rendered with.
struct SixViews {
  CanvasLayout layout;
  std::array<ViewRendering, 6> views;

  const ViewRendering& view(ViewName v) const { return views[static_cast<int>(v)]; }
};

inline SixViews rasterize_six_views(const TriMesh& mesh, const RenderOptions& opts = {}) {
  SixViews out;
  out.layout = make_layout(mesh, opts);
  if (opts.threads <= 1) {
    for (int k = 0; k < 6; ++k) out.views[k] = rasterize(mesh, out.layout.tiles[k].camera, opts.raster);
  } else {
    std::array<std::future<ViewRendering>, 6> jobs;
    for (int k = 0; k < 6; ++k)
      jobs[k] = std::async(std::launch::async, [&, k] { return rasterize(mesh, out.layout.tiles[k].camera, opts.raster); });
    for (int k = 0; k < 6; ++k) out.views[k] = jobs[k].get();
  }
  return out;
}

/// Tiled six-view rendering (the surrogate's input).
struct IntegratedImage : RgbImage {
  RenderingKind kind = RenderingKind::normal;
  CanvasLayout layout;
  /// Per-view depth encoding range (depth images only).
  std::array<std::optional<DepthRange>, 6> depth_ranges;
  Rgb background = kNormalBackground;
};

inline IntegratedImage integrate(const SixViews& six, RenderingKind kind) {
  IntegratedImage img;
  img.kind = kind;
  img.layout = six.layout;
  img.background = kind == RenderingKind::normal ? kNormalBackground : kDepthBackground;
  static_cast<RgbImage&>(img) = RgbImage(six.layout.width, six.layout.height, img.background);
  for (int k = 0; k < 6; ++k) {
    const ViewRendering& v = six.views[k];
    EncodedRendering enc;
    if (kind == RenderingKind::normal) {
      enc = encode_normal(v);
    } else {
      // Views with nothing covered get a nominal range so the image stays decodable.
      const auto own = covered_depth_range(v);
      enc = encode_depth(v, own ? own : std::optional<DepthRange>(DepthRange{0.0, 1.0}));
      img.depth_ranges[k] = enc.depth_range;
    }
    const TileRect& r = six.layout.tiles[k].rect;
    for (int j = 0; j < r.height; ++j)
      for (int i = 0; i < r.width; ++i) img.set(r.x + i, r.y + j, enc.at(i, j));
  }
  return img;
}

inline IntegratedImage render_six_views(const TriMesh& mesh, RenderingKind kind, const RenderOptions& opts = {}) {
  return integrate(rasterize_six_views(mesh, opts), kind);
}

/// Image the bilaterally flipped mesh is expected to produce: left and right
/// tiles swapped, every tile mirrored horizontally and, for normal images,
/// the lateral channel inverted (G -> 1 - G).
inline IntegratedImage mirror_integrated(const IntegratedImage& img) {
  IntegratedImage out = img;
  const int L = static_cast<int>(ViewName::left), R = static_cast<int>(ViewName::right);
  for (int k = 0; k < 6; ++k) {
    const int src = k == L ? R : k == R ? L : k;
    const TileRect& dr = img.layout.tiles[k].rect;
    const TileRect& sr = img.layout.tiles[src].rect;
    if (dr.width != sr.width || dr.height != sr.height) throw ConfigError("mirror_integrated: left/right tiles differ in size");
    for (int j = 0; j < dr.height; ++j)
      for (int i = 0; i < dr.width; ++i) {
        Rgb c = img.at(sr.x + (sr.width - 1 - i), sr.y + j);
        if (img.kind == RenderingKind::normal) c[1] = 1.0f - c[1];
        out.set(dr.x + i, dr.y + j, c);
      }
    out.depth_ranges[k] = img.depth_ranges[src];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG interchange

inline const std::string kLayoutKey = "orthorep:layout";

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline PngImage to_png(const IntegratedImage& img, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("bit depth must be 8 or 16");
  PngImage png;
  png.width = static_cast<std::uint32_t>(img.width);
  png.height = static_cast<std::uint32_t>(img.height);
  png.bit_depth = bit_depth;
  png.rgb.reserve(img.pixels.size());
  for (float v : img.pixels) png.rgb.push_back(quantize(v, bit_depth));
  nlohmann::json layout = to_json(img.layout);
  layout["kind"] = to_string(img.kind);
  png.text.emplace_back(kLayoutKey, layout.dump());
  if (img.kind == RenderingKind::depth) {
    for (int k = 0; k < 6; ++k) {
      if (!img.depth_ranges[k]) continue;
      const std::string name = to_string(kViewOrder[k]);
      png.text.emplace_back("orthorep:dmin:" + name, format_double(img.depth_ranges[k]->d_min));
      png.text.emplace_back("orthorep:dmax:" + name, format_double(img.depth_ranges[k]->d_max));
    }
  }
  return png;
}

inline IntegratedImage from_png(const PngImage& png) {
  const std::string* layout_text = png.find_text(kLayoutKey);
  if (!layout_text) throw ConfigError("PNG has no " + kLayoutKey + " metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(*layout_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed layout metadata: ") + e.what());
  }
  IntegratedImage img;
  img.layout = layout_from_json(j);
  img.kind = parse_rendering_kind(j.value("kind", "normal"));
  img.background = img.kind == RenderingKind::normal ? kNormalBackground : kDepthBackground;
  if (img.layout.width != static_cast<int>(png.width) || img.layout.height != static_cast<int>(png.height))
    throw ConfigError("layout canvas size does not match PNG size");
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.pixels.reserve(png.rgb.size());
  for (auto q : png.rgb) img.pixels.push_back(static_cast<float>(dequantize(q, png.bit_depth)));
  if (img.kind == RenderingKind::depth) {
    for (int k = 0; k < 6; ++k) {
      const std::string name = to_string(kViewOrder[k]);
      const std::string* lo = png.find_text("orthorep:dmin:" + name);
      const std::string* hi = png.find_text("orthorep:dmax:" + name);
      if (lo && hi) img.depth_ranges[k] = DepthRange{std::stod(*lo), std::stod(*hi)};
    }
  }
  return img;
}

inline void write_integrated_png(const std::filesystem::path& path, const IntegratedImage& img, int bit_depth = 8) {
  write_png(path, to_png(img, bit_depth));
}

inline IntegratedImage read_integrated_png(const std::filesystem::path& path) { return from_png(read_png(path)); }

/// Round-trips an image through the PNG sample quantization without touching disk.
inline IntegratedImage quantized(const IntegratedImage& img, int bit_depth) {
  IntegratedImage out = img;
  for (auto& v : out.pixels) v = static_cast<float>(dequantize(quantize(v, bit_depth), bit_depth));
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction

struct OrientedPoint {
  Vec3 position;
  Vec3 normal;
  ViewName view;
};

struct OrientedPointCloud {
  std::vector<OrientedPoint> points;

  std::size_t count(ViewName v) const {
    return static_cast<std::size_t>(
        std::count_if(points.begin(), points.end(), [v](const OrientedPoint& p) { return p.view == v; }));
  }
};

/// Inverts the pipeline: every foreground pixel of the normal image becomes a
/// point placed at its decoded depth along the view ray, carrying the decoded
/// normal. Coverage is read from the normal image (its background decodes to
/// the zero vector, which no unit normal can produce).
inline OrientedPointCloud reconstruct(const IntegratedImage& normal_img, const IntegratedImage& depth_img) {
  if (normal_img.kind != RenderingKind::normal) throw ConfigError("reconstruct: first image is not a normal rendering");
  if (depth_img.kind != RenderingKind::depth) throw ConfigError("reconstruct: second image is not a depth rendering");
  if (!(normal_img.layout == depth_img.layout)) throw ConfigError("reconstruct: images have mismatched layouts");
  OrientedPointCloud cloud;
  for (int k = 0; k < 6; ++k) {
    const TileLayout& t = depth_img.layout.tiles[k];
    if (!depth_img.depth_ranges[k])
      throw ConfigError(std::string("reconstruct: missing depth encoding metadata for view ") + to_string(t.view));
    const DepthRange range = *depth_img.depth_ranges[k];
    for (int j = 0; j < t.rect.height; ++j)
      for (int i = 0; i < t.rect.width; ++i) {
        const Rgb nc = normal_img.at(t.rect.x + i, t.rect.y + j);
        if (!is_normal_foreground(nc)) continue;
        const Rgb dc = depth_img.at(t.rect.x + i, t.rect.y + j);
        const double depth = gray_to_depth((dc[0] + dc[1] + dc[2]) / 3.0, range);
        cloud.points.push_back({unproject(t.camera, i + 0.5, j + 0.5, depth), color_to_normal(nc), t.view});
      }
  }
  return cloud;
}

/// Re-renders a point cloud as a depth image with the layout and depth
/// ranges of `like`. Points splat to the pixel containing them, z-buffered.
/// Samples reconstructed from a view take precedence in that view's pixels:
/// each one is the first surface hit at its pixel center, while a sample from
/// another view lands off-center and on silhouettes can sit far in front.
inline IntegratedImage render_cloud_depth(const OrientedPointCloud& cloud, const IntegratedImage& like) {
  SixViews six;
  six.layout = like.layout;
  for (int k = 0; k < 6; ++k) {
    const TileLayout& t = like.layout.tiles[k];
    ViewRendering v(t.rect.width, t.rect.height);
    std::vector<std::uint8_t> own(v.depth.size(), 0);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& p : cloud.points) {
        if ((p.view == t.view) != (pass == 0)) continue;
        const Projection q = project(t.camera, p.position);
        const int i = static_cast<int>(std::floor(q.x)), j = static_cast<int>(std::floor(q.y));
        if (i < 0 || j < 0 || i >= v.width || j >= v.height) continue;
        const std::size_t idx = v.index(i, j);
        if (pass == 1 && own[idx]) continue;
        if (!v.coverage[idx] || q.depth < v.depth[idx]) {
          v.coverage[idx] = 1;
          v.depth[idx] = q.depth;
          v.normal[idx] = p.normal;
          own[idx] = pass == 0;
        }
      }
    six.views[k] = std::move(v);
  }
  IntegratedImage img;
  img.kind = RenderingKind::depth;
  img.layout = like.layout;
  img.background = kDepthBackground;
  static_cast<RgbImage&>(img) = RgbImage(like.width, like.height, kDepthBackground);
  for (int k = 0; k < 6; ++k) {
    const DepthRange range = like.depth_ranges[k].value_or(DepthRange{});
    const EncodedRendering enc = encode_depth(six.views[k], range);
    img.depth_ranges[k] = range;
    const TileRect& r = like.layout.tiles[k].rect;
    for (int j = 0; j < r.height; ++j)
      for (int i = 0; i < r.width; ++i) img.set(r.x + i, r.y + j, enc.at(i, j));
  }
  return img;
}

/// ASCII PLY with per-vertex normals and the source view index.
inline void write_ply(const OrientedPointCloud& cloud, std::ostream& out) {
  out << "ply\nformat ascii 1.0\ncomment orthorep reconstruction\n";
  out << "element vertex " << cloud.points.size() << '\n';
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property double nx\nproperty double ny\nproperty double nz\n";
  out << "property uchar view\nend_header\n";
  out << std::setprecision(10);
  for (const auto& p : cloud.points)
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << p.normal.x() << ' '
        << p.normal.y() << ' ' << p.normal.z() << ' ' << static_cast<int>(p.view) << '\n';
}

inline void write_ply(const OrientedPointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_ply(cloud, out);
  if (!out) throw Error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Ablation inputs

/// One orthographic view, normal- or depth-encoded, centered on a full
/// `resolution` x `resolution` canvas at a fixed scale.
inline RgbImage render_single_view(const TriMesh& mesh, ViewName view, RenderingKind kind, int resolution,
                                   double pixels_per_meter) {
  const Bounds b = mesh.bounds();
  OrthoCamera cam;
  cam.view_dir = view_direction(view);
  cam.up = view_up(view);
  cam.center = b.center();
  cam.scale_x = cam.scale_y = pixels_per_meter;
  cam.width = cam.height = resolution;
  cam.near_plane_offset = -0.5 * detail::extent_along(b.extent(), cam.view_dir);
  const ViewRendering v = rasterize(mesh, cam);
  if (kind == RenderingKind::normal) return encode_normal(v);
  const auto own = covered_depth_range(v);
  return encode_depth(v, own ? own : std::optional<DepthRange>(DepthRange{}));
}

/// Conventional perspective rendering: Lambertian gray shading under a fixed
/// directional light, white background.
inline RgbImage render_perspective_shaded(const TriMesh& mesh, const PerspectiveCamera& cam,
                                          const Vec3& light_dir = Vec3(0.4, 0.3, 1.0)) {
  const ViewRendering v = rasterize_perspective(mesh, cam);
  const Vec3 l = light_dir.normalized();
  RgbImage img(cam.width, cam.height, {1.0f, 1.0f, 1.0f});
  for (int j = 0; j < v.height; ++j)
    for (int i = 0; i < v.width; ++i)
      if (v.covered(i, j)) {
        const auto g = static_cast<float>(0.15 + 0.75 * std::max(0.0, v.normal[v.index(i, j)].dot(l)));
        img.set(i, j, {g, g, g});
      }
  return img;
}

}  // namespace orthorep
