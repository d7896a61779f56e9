// Acceptance run: one PASS/FAIL line per criterion. Exit status is non-zero
// when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "orthorep/dataset.hpp"
#include "orthorep/representation.hpp"
#include "support/gradient_check.hpp"
#include "support/oracles.hpp"
#include "support/synthetic_task.hpp"

using namespace orthorep;
namespace ot = orthorep::testing;
namespace sg = orthorep::surrogate;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

void rasterizer_oracle() {
  const auto t0 = Clock::now();
  SplitMix64 g(2024);
  std::size_t pixels = 0, depth_checked = 0, coverage_mismatch = 0, max_faces = 0;
  double worst_depth = 0.0;
  for (int m = 0; m < 50; ++m) {
    const TriMesh mesh = m % 2 ? ot::random_soup(g, 20 + static_cast<int>(g.below(181)))
                               : ot::random_convex_hull(g, 8 + static_cast<int>(g.below(33)),
                                                        Vec3(g.uniform(0.5, 2), g.uniform(0.5, 2), g.uniform(0.5, 2)));
    max_faces = std::max(max_faces, mesh.face_count());
    const Bounds b = mesh.bounds();
    for (ViewName v : kViewOrder) {
      OrthoCamera cam;
      cam.view_dir = view_direction(v);
      cam.up = view_up(v);
      cam.center = b.center();
      cam.width = cam.height = 64;
      cam.scale_x = cam.scale_y = 0.9 * 64 / b.extent().maxCoeff();
      cam.near_plane_offset = -0.5 * b.extent().cwiseProduct(cam.view_dir).cwiseAbs().sum() - 0.01;
      const ViewRendering r = rasterize(mesh, cam);
      const auto oracle = ot::ray_cast(mesh, cam);
      const auto edge = ot::edge_distance(mesh, cam);
      for (std::size_t p = 0; p < oracle.size(); ++p) {
        if (edge[p] <= 1e-9) continue;
        ++pixels;
        if (static_cast<bool>(r.coverage[p]) != oracle[p].covered) {
          ++coverage_mismatch;
          continue;
        }
        if (!oracle[p].covered) continue;
        ++depth_checked;
        worst_depth = std::max(worst_depth, std::abs(r.depth[p] - oracle[p].depth));
      }
    }
  }
  const double t = seconds_since(t0);
  report("rasterizer_oracle_equivalence",
         coverage_mismatch == 0 && worst_depth <= 1e-7 && max_faces <= 200 && depth_checked > 0 && t < 60,
         fmt("50 meshes (max %zu faces) x 6 views x 64x64: %zu pixels compared, %zu coverage mismatches, "
             "max depth error %.3g m on %zu covered pixels (tol 1e-7), %.1f s (limit 60 s)",
             max_faces, pixels, coverage_mismatch, worst_depth, depth_checked, t));
}

// ---------------------------------------------------------------------------

void codec_round_trip() {
  const auto t0 = Clock::now();
  SplitMix64 g(7);
  double worst[2] = {0, 0};  // 8-bit, 16-bit
  for (int i = 0; i < 1000; ++i) {
    Vec3 n;
    do n = Vec3(g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1));
    while (n.norm() < 0.1 || n.norm() > 1.0);
    n.normalize();
    const Rgb c = normal_to_color(n);
    for (int b = 0; b < 2; ++b) {
      const int bits = b ? 16 : 8;
      for (int k = 0; k < 3; ++k) {
        const double back = dequantize(quantize(c[k], bits), bits);
        // Channel error and the corresponding decoded-normal component error.
        worst[b] = std::max({worst[b], std::abs(back - c[k]), std::abs(2 * back - 1 - n[k]) / 2});
      }
    }
  }
  const DepthRange range{1.3, 5.8};
  double worst_depth[2] = {0, 0};  // gray error per channel
  for (int i = 0; i < 1000; ++i) {
    const double d = g.uniform(range.d_min, range.d_max);
    const double gray = depth_to_gray(d, range);
    for (int b = 0; b < 2; ++b) {
      const int bits = b ? 16 : 8;
      const double back = dequantize(quantize(gray, bits), bits);
      const double d_back = gray_to_depth(back, range);
      worst_depth[b] = std::max({worst_depth[b], std::abs(back - gray), std::abs(d_back - d) / (range.d_max - range.d_min)});
    }
  }
  const double t = seconds_since(t0);
  const bool pass = worst[0] <= 1.0 / 255 && worst_depth[0] <= 1.0 / 255 && worst[1] <= 1.0 / 65535 &&
                    worst_depth[1] <= 1.0 / 65535 && t < 5;
  report("codec_round_trip", pass,
         fmt("1000 normals, 1000 depths: 8-bit max error %.3g / %.3g (tol %.3g), 16-bit %.3g / %.3g (tol %.3g), %.2f s",
             worst[0], worst_depth[0], 1.0 / 255, worst[1], worst_depth[1], 1.0 / 65535, t));
}

// ---------------------------------------------------------------------------

void reconstruction_bound() {
  const auto t0 = Clock::now();
  SplitMix64 g(99);
  std::vector<std::pair<std::string, TriMesh>> meshes{{"cube", ot::unit_cube()}};
  for (int k = 0; k < 4; ++k) meshes.emplace_back("hull" + std::to_string(k), normalize_length(ot::random_convex_hull(g), 3.5));
  double worst_ratio = 0.0;
  std::size_t points = 0;
  for (const auto& [name, mesh] : meshes) {
    const IntegratedImage n = quantized(render_six_views(mesh, RenderingKind::normal), 8);
    const IntegratedImage d = quantized(render_six_views(mesh, RenderingKind::depth), 8);
    const OrientedPointCloud cloud = reconstruct(n, d);
    const double meters_per_pixel = 1.0 / n.layout.tiles[0].camera.scale_x;
    for (const auto& p : cloud.points) {
      const DepthRange& r = *d.depth_ranges[static_cast<int>(p.view)];
      const double bound = 2 * meters_per_pixel + (r.d_max - r.d_min) / 255;
      worst_ratio = std::max(worst_ratio, ot::distance_to_mesh(p.position, mesh) / bound);
    }
    points += cloud.points.size();
  }
  const double t = seconds_since(t0);
  report("reconstruction_bound", worst_ratio <= 1.0 && points > 0 && t < 30,
         fmt("cube + 4 convex hulls at 384x384, %zu points: max Hausdorff / bound = %.3f (must be <= 1), %.1f s (limit 30 s)",
             points, worst_ratio, t));
}

// ---------------------------------------------------------------------------

void flip_equivariance() {
  SplitMix64 g(5);
  double worst = 0.0;
  for (int m = 0; m < 10; ++m) {
    const TriMesh mesh = m % 2 ? synthetic::make_box_car(synthetic::sample_box_car(g))
                               : normalize_length(ot::random_convex_hull(g), 3.5);
    const TriMesh flipped = apply_augmentation(mesh, Augmentation::bilateral_flip());
    for (auto kind : {RenderingKind::normal, RenderingKind::depth}) {
      const IntegratedImage expected = quantized(mirror_integrated(render_six_views(mesh, kind)), 8);
      const IntegratedImage actual = quantized(render_six_views(flipped, kind), 8);
      for (std::size_t k = 0; k < expected.pixels.size(); ++k)
        worst = std::max(worst, static_cast<double>(std::abs(expected.pixels[k] - actual.pixels[k])));
    }
  }
  report("flip_equivariance", worst <= 1.0 / 255 + 1e-7,
         fmt("10 meshes, normal and depth images: max pixel difference %.4g (tol 1/255 = %.4g)", worst, 1.0 / 255));
}

// ---------------------------------------------------------------------------

void gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t components = 0;
  for (auto streams : {sg::Streams::normal_only, sg::Streams::depth_only, sg::Streams::fused})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = ot::gradient_check(streams, seed);
      components += r.components;
      if (r.worst_relative_error > worst) {
        worst = r.worst_relative_error;
        where = std::string(sg::to_string(streams)) + "/" + r.worst_tensor;
      }
    }
  const double t = seconds_since(t0);
  report("gradient_check", worst < 1e-4 && t < 300,
         fmt("single-stream and fused, 5 seeds, %zu components: max relative error %.3g at %s (tol 1e-4), %.1f s (limit 300 s)",
             components, worst, where.c_str(), t));
}

// ---------------------------------------------------------------------------

struct LearningResults {
  ot::SyntheticTask task;
  double normal_r2 = 0.0;
};

// Epoch budgets (the criterion allows up to 200) chosen to fit the time limit;
// early stopping still applies.
constexpr int kSingleStreamEpochs = 60;
constexpr int kFusedEpochs = 60;
constexpr double kFusedLearningRate = 1e-4;

LearningResults synthetic_learning() {
  const auto t0 = Clock::now();
  LearningResults out;
  out.task = ot::make_task(250, 2024, 7);
  sg::ModelConfig nc;
  nc.streams = sg::Streams::normal_only;
  sg::ModelConfig dc = nc;
  dc.streams = sg::Streams::depth_only;
  sg::ModelConfig fc = nc;
  fc.streams = sg::Streams::fused;
  fc.parameter_init_seed = 1;
  const auto data = ot::make_examples(out.task, fc, synthetic::InputSource::six_view_normal,
                                      synthetic::InputSource::six_view_depth);
  sg::TrainConfig tc;
  tc.max_epochs = kSingleStreamEpochs;
  const auto n = ot::fit(nc, tc, data);
  const auto d = ot::fit(dc, tc, data);
  sg::TrainConfig ftc = tc;
  ftc.max_epochs = kFusedEpochs;
  ftc.learning_rate = kFusedLearningRate;
  const auto f = ot::fit(fc, ftc, data, sg::init_fused_from_streams(n.state, nc, d.state, dc, fc));
  const double t = seconds_since(t0);
  const double best_single = std::max(n.test_r2, d.test_r2);
  out.normal_r2 = n.test_r2;
  report("synthetic_learning", n.test_r2 >= 0.90 && f.test_r2 >= best_single - 0.02 && t < 900,
         fmt("%zu meshes (train/val/test %zu/%zu/%zu): normal R2 %.4f (>= 0.90, %d epochs), depth R2 %.4f (%d epochs), "
             "fused R2 %.4f (>= %.4f, %d epochs), %.0f s (limit 900 s)",
             out.task.cars.size(), data.train.size(), data.val.size(), data.test.size(), n.test_r2, n.epochs, d.test_r2,
             d.epochs, f.test_r2, best_single - 0.02, f.epochs, t));
  return out;
}

void ablation(const LearningResults& base) {
  const auto t0 = Clock::now();
  sg::ModelConfig nc;
  sg::TrainConfig tc;
  tc.max_epochs = kSingleStreamEpochs;
  const auto p = ot::fit(nc, tc, ot::make_examples(base.task, nc, synthetic::InputSource::perspective));
  const auto b = ot::fit(nc, tc, ot::make_examples(base.task, nc, synthetic::InputSource::bottom_only));
  report("ablation_direction", base.normal_r2 > p.test_r2 && base.normal_r2 > b.test_r2,
         fmt("six-view R2 %.4f vs perspective %.4f and bottom-only %.4f, %.0f s", base.normal_r2, p.test_r2, b.test_r2,
             seconds_since(t0)));
}

// ---------------------------------------------------------------------------

void pipeline_cardinality() {
  bool pass = true;
  std::size_t worst_overlap = 0;
  const std::size_t sizes[] = {3, 10, 57, 2474};
  for (std::size_t n : sizes) {
    DatasetManifest m;
    for (std::size_t k = 0; k < n; ++k) {
      ManifestEntry e;
      e.id = e.group_id = "car" + std::to_string(k);
      e.drag_coefficient = 0.3;
      m.entries.push_back(e);
    }
    pass = pass && augment_manifest(m, n).entries.size() == 4 * n;
  }
  DatasetManifest m;
  for (int k = 0; k < 60; ++k) {
    ManifestEntry e;
    e.id = e.group_id = "car" + std::to_string(k);
    m.entries.push_back(e);
  }
  const DatasetManifest aug = augment_manifest(m, 1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const DatasetManifest s = assign_splits(aug, {{0.7, 0.15, 0.15}, seed});
    std::set<std::string> groups[3];
    for (const auto& e : s.entries) {
      if (e.split == Split::unassigned) pass = false;
      else groups[static_cast<int>(e.split) - 1].insert(e.group_id);
    }
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        for (const auto& gid : groups[a]) worst_overlap = std::max<std::size_t>(worst_overlap, groups[b].count(gid));
  }
  report("pipeline_cardinality", pass && worst_overlap == 0,
         fmt("augment: 4N entries for N in {3, 10, 57, 2474}: %s; group overlap across splits over 100 seeds: %zu",
             pass ? "yes" : "no", worst_overlap));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  rasterizer_oracle();
  codec_round_trip();
  reconstruction_bound();
  flip_equivariance();
  gradient_check();
  pipeline_cardinality();
  const LearningResults learned = synthetic_learning();
  ablation(learned);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << fmt("  (%.0f s total)", seconds_since(t0))
            << std::endl;
  return failures == 0 ? 0 : 1;
}
