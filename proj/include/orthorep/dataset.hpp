#pragma once

// Dataset manifest: mesh/label bookkeeping, augmentation expansion,
// leakage-safe (group-level) splits and batch rendering.
//
// Every entry belongs to the group of the original, un-augmented mesh it was
// derived from; splits are assigned per group so augmented twins never
// straddle train/val/test.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "orthorep/error.hpp"
#include "orthorep/mesh.hpp"
#include "orthorep/representation.hpp"
#include "orthorep/rng.hpp"

namespace orthorep {

enum class Split { unassigned, train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "unassigned") return Split::unassigned;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

/// Drag labels outside this interval are rejected as malformed.
inline constexpr double kMinDragLabel = 0.0;
inline constexpr double kMaxDragLabel = 2.0;

/// Normalized car length (meters) applied before augmentation and rendering.
inline constexpr double kCarLength = 3.5;

struct ManifestEntry {
  std::string id;
  std::string group_id;
  AugmentationChain augmentation;  // empty = identity
  std::string mesh_path;
  std::string normal_img_path;
  std::string depth_img_path;
  std::optional<double> drag_coefficient;
  Split split = Split::unassigned;
  std::vector<std::string> flags;  // e.g. "missing_label", "render_failed: ..."

  bool is_original() const {
    return std::all_of(augmentation.begin(), augmentation.end(),
                       [](const Augmentation& a) { return a.kind == AugmentationKind::identity; });
  }
  bool has_flag_prefix(std::string_view prefix) const {
    return std::any_of(flags.begin(), flags.end(), [&](const std::string& f) { return f.starts_with(prefix); });
  }
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  /// Non-fatal problems found while building (malformed CSV rows, ...).
  std::vector<std::string> warnings;

  std::size_t flagged(std::string_view prefix) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(),
                                                  [&](const ManifestEntry& e) { return e.has_flag_prefix(prefix); }));
  }
  std::vector<const ManifestEntry*> in_split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Serialization (one JSON object per line)

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json aug = nlohmann::json::array();
  for (const auto& a : e.augmentation) {
    nlohmann::json step = {{"kind", to_string(a.kind)}};
    if (a.kind == AugmentationKind::width_resize) step["factor"] = a.factor;
    aug.push_back(step);
  }
  return {{"id", e.id},
          {"group_id", e.group_id},
          {"augmentation", aug},
          {"mesh_path", e.mesh_path},
          {"normal_img_path", e.normal_img_path},
          {"depth_img_path", e.depth_img_path},
          {"drag_coefficient", e.drag_coefficient ? nlohmann::json(*e.drag_coefficient) : nlohmann::json(nullptr)},
          {"split", to_string(e.split)},
          {"flags", e.flags}};
}

inline ManifestEntry entry_from_json(const nlohmann::json& j) {
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  e.group_id = j.at("group_id").get<std::string>();
  for (const auto& step : j.value("augmentation", nlohmann::json::array())) {
    Augmentation a;
    a.kind = parse_augmentation_kind(step.at("kind").get<std::string>());
    if (a.kind == AugmentationKind::width_resize) a.factor = step.at("factor").get<double>();
    e.augmentation.push_back(a);
  }
  e.mesh_path = j.value("mesh_path", "");
  e.normal_img_path = j.value("normal_img_path", "");
  e.depth_img_path = j.value("depth_img_path", "");
  if (j.contains("drag_coefficient") && !j["drag_coefficient"].is_null())
    e.drag_coefficient = j["drag_coefficient"].get<double>();
  e.split = parse_split(j.value("split", "unassigned"));
  e.flags = j.value("flags", std::vector<std::string>{});
  return e;
}

inline std::string serialize_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries) out += to_json(e).dump() + '\n';
  return out;
}

inline DatasetManifest parse_manifest(std::string_view text, const std::string& source = "<manifest>") {
  DatasetManifest m;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      m.entries.push_back(entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line_no, 0, e.what());
    }
  }
  return m;
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << serialize_manifest(m);
  if (!out) throw Error("write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("manifest not found: " + path.string());
  return parse_manifest(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Labels

struct LabelTable {
  std::map<std::string, double> labels;
  std::vector<std::string> warnings;  // skipped rows, with line numbers
};

/// Parses `id,drag_coefficient` CSV. Malformed rows are skipped and reported;
/// a duplicate id is an error.
inline LabelTable parse_labels_csv(std::string_view text, const std::string& source = "<labels>") {
  LabelTable t;
  std::size_t line_no = 0, pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "id,drag_coefficient")
        throw ParseError(source, line_no, 0, "expected header 'id,drag_coefficient'");
      continue;
    }
    const auto comma = line.find(',');
    const auto warn = [&](const std::string& why) {
      t.warnings.push_back(source + ":" + std::to_string(line_no) + ": " + why + " (row skipped)");
    };
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      warn("expected 2 columns");
      continue;
    }
    const std::string id(detail::trim(line.substr(0, comma)));
    double value;
    if (id.empty()) {
      warn("empty id");
      continue;
    }
    if (!detail::parse_double(detail::trim(line.substr(comma + 1)), value) || !std::isfinite(value)) {
      warn("drag_coefficient is not a number");
      continue;
    }
    if (value < kMinDragLabel || value > kMaxDragLabel) {
      warn("drag_coefficient outside [0, 2]");
      continue;
    }
    if (!t.labels.emplace(id, value).second) throw ParseError(source, line_no, 0, "duplicate id '" + id + "'");
  }
  return t;
}

inline LabelTable load_labels_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("label file not found: " + path.string());
  return parse_labels_csv(detail::read_file(path), path.string());
}

inline constexpr const char* kMissingLabelFlag = "missing_label";

/// One entry per .obj/.stl file in `mesh_dir` (id = file stem, sorted), with
/// labels joined by id. Unlabeled meshes are kept with a missing_label flag.
inline DatasetManifest build_manifest(const std::filesystem::path& mesh_dir, const std::filesystem::path& labels_csv) {
  if (!std::filesystem::is_directory(mesh_dir)) throw Error("mesh directory not found: " + mesh_dir.string());
  LabelTable labels = load_labels_csv(labels_csv);
  std::vector<std::filesystem::path> meshes;
  for (const auto& de : std::filesystem::directory_iterator(mesh_dir)) {
    if (!de.is_regular_file()) continue;
    std::string ext = de.path().extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".obj" || ext == ".stl") meshes.push_back(de.path());
  }
  std::sort(meshes.begin(), meshes.end());
  DatasetManifest m;
  m.warnings = std::move(labels.warnings);
  std::set<std::string> seen;
  for (const auto& p : meshes) {
    ManifestEntry e;
    e.id = p.stem().string();
    if (!seen.insert(e.id).second) throw ConfigError("duplicate mesh id '" + e.id + "' in " + mesh_dir.string());
    e.group_id = e.id;
    e.mesh_path = p.string();
    if (auto it = labels.labels.find(e.id); it != labels.labels.end())
      e.drag_coefficient = it->second;
    else
      e.flags.push_back(kMissingLabelFlag);
    m.entries.push_back(std::move(e));
  }
  for (const auto& [id, value] : labels.labels)
    if (!seen.count(id)) m.warnings.push_back("label for '" + id + "' has no matching mesh");
  return m;
}

/// Joins externally computed labels onto entries by id (used for resized
/// variants, whose drag differs from the original). Returns the count joined.
inline std::size_t join_labels(DatasetManifest& m, const LabelTable& labels) {
  std::size_t joined = 0;
  for (auto& e : m.entries) {
    auto it = labels.labels.find(e.id);
    if (it == labels.labels.end()) continue;
    e.drag_coefficient = it->second;
    std::erase(e.flags, std::string(kMissingLabelFlag));
    ++joined;
  }
  return joined;
}

// ---------------------------------------------------------------------------
// Augmentation

/// Width factor for an entry: uniform in [1/1.2, 1.2], derived from the seed
/// and the entry id so it does not depend on manifest order.
inline double width_factor_for(std::uint64_t seed, std::string_view id) {
  SplitMix64 g(mix_seed(seed, id));
  return g.uniform(kMinWidthFactor, kMaxWidthFactor);
}

/// Doubles the manifest with one width-resized variant per original, then
/// doubles again with a bilateral flip of every entry (N -> 2N -> 4N).
/// Flipped entries copy the source label; resized entries are unlabeled.
inline DatasetManifest augment_manifest(const DatasetManifest& m, std::uint64_t resize_seed) {
  for (const auto& e : m.entries)
    if (!e.is_original()) throw ConfigError("augment_manifest: entry '" + e.id + "' is already augmented");
  DatasetManifest out;
  out.warnings = m.warnings;
  out.entries.reserve(4 * m.entries.size());
  for (const auto& e : m.entries) {
    ManifestEntry resized = e;
    resized.id = e.id + "_w";
    resized.augmentation = {Augmentation::width_resize(width_factor_for(resize_seed, e.id))};
    resized.drag_coefficient.reset();
    resized.normal_img_path.clear();
    resized.depth_img_path.clear();
    std::erase(resized.flags, std::string(kMissingLabelFlag));
    resized.flags.push_back(kMissingLabelFlag);

    ManifestEntry original = e;
    original.augmentation.clear();
    for (const ManifestEntry* src : {&original, &resized}) {
      ManifestEntry flipped = *src;
      flipped.id = src->id + "_f";
      flipped.augmentation.push_back(Augmentation::bilateral_flip());
      flipped.normal_img_path.clear();
      flipped.depth_img_path.clear();
      out.entries.push_back(*src);
      out.entries.push_back(std::move(flipped));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::array<double, 3> ratios{0.7, 0.15, 0.15};  // train, val, test
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0.0;
    for (double r : ratios) {
      if (!(r > 0.0 && r < 1.0)) throw ConfigError("split ratios must each lie in (0, 1)");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  }

  static std::array<double, 3> parse_ratios(std::string_view text) {
    std::array<double, 3> r{};
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
      const std::size_t comma = k < 2 ? text.find(',', pos) : text.size();
      if (comma == std::string_view::npos) throw ConfigError("ratios must be three comma-separated numbers");
      if (!detail::parse_double(detail::trim(text.substr(pos, comma - pos)), r[k]))
        throw ConfigError("bad ratio in '" + std::string(text) + "'");
      pos = comma + 1;
    }
    if (pos < text.size()) throw ConfigError("ratios must be three comma-separated numbers");
    return r;
  }
};

/// Largest-remainder apportionment of `n` items. Ties in the fractional part
/// go to the earlier split (train, then val, then test).
inline std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double quota = ratios[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[k] = quota - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

/// Shuffles the distinct group ids (sorted first, so the result depends only
/// on the set of groups and the seed) and partitions them by ratio.
inline DatasetManifest assign_splits(const DatasetManifest& m, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::string> groups;
  {
    std::set<std::string> s;
    for (const auto& e : m.entries) {
      if (e.group_id.empty()) throw ConfigError("entry '" + e.id + "' has no group id");
      s.insert(e.group_id);
    }
    groups.assign(s.begin(), s.end());
  }
  if (groups.size() < 3) throw ConfigError("assign_splits: need at least 3 groups, got " + std::to_string(groups.size()));
  SplitMix64 rng(spec.seed);
  rng.shuffle(groups);
  const auto counts = split_counts(groups.size(), spec.ratios);
  std::map<std::string, Split> of_group;
  std::size_t k = 0;
  for (std::size_t i = 0; i < counts[0]; ++i) of_group[groups[k++]] = Split::train;
  for (std::size_t i = 0; i < counts[1]; ++i) of_group[groups[k++]] = Split::val;
  for (std::size_t i = 0; i < counts[2]; ++i) of_group[groups[k++]] = Split::test;
  DatasetManifest out = m;
  for (auto& e : out.entries) e.split = of_group.at(e.group_id);
  return out;
}

// ---------------------------------------------------------------------------
// Batch rendering

struct BatchRenderOptions {
  RenderOptions render;
  bool deep = false;  // 16-bit PNG
  int threads = 1;
  /// Normalize every mesh to this x extent before augmentation (0 disables).
  double target_length = kCarLength;
  /// Maps source axes onto the canonical frame before normalization.
  AxisFrame axis_frame;
};

struct BatchStats {
  std::size_t count = 0;
  std::size_t failures = 0;
  double wall_seconds = 0.0;
};

inline constexpr const char* kRenderFailedFlag = "render_failed";

/// Loads, normalizes, augments and renders one mesh for an entry.
inline SixViews render_entry(const ManifestEntry& e, const BatchRenderOptions& opts) {
  TriMesh mesh = load_mesh(e.mesh_path);
  if (!opts.axis_frame.is_identity()) mesh = apply_axis_frame(mesh, opts.axis_frame);
  if (opts.target_length > 0.0) mesh = normalize_length(mesh, opts.target_length);
  mesh = apply_augmentation(mesh, e.augmentation);
  RenderOptions ro = opts.render;
  ro.threads = 1;
  return rasterize_six_views(mesh, ro);
}

/// Writes <out_dir>/<id>_normal.png and <id>_depth.png for every entry.
/// A failing entry is flagged and skipped; the rest of the batch completes.
inline DatasetManifest batch_render(const DatasetManifest& m, const std::filesystem::path& out_dir,
                                    const BatchRenderOptions& opts, BatchStats* stats = nullptr) {
  opts.render.validate();
  if (opts.threads < 1) throw ConfigError("threads must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  {
    const auto probe = out_dir / ".orthorep_write_probe";
    std::ofstream f(probe);
    if (!f) throw Error("output directory is not writable: " + out_dir.string());
    f.close();
    std::filesystem::remove(probe, ec);
  }
  const auto t0 = std::chrono::steady_clock::now();
  DatasetManifest out = m;
  const int bits = opts.deep ? 16 : 8;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < out.entries.size(); i = next++) {
      ManifestEntry& e = out.entries[i];  // each index is owned by exactly one worker
      std::erase_if(e.flags, [](const std::string& f) { return f.starts_with(kRenderFailedFlag); });
      try {
        const SixViews six = render_entry(e, opts);
        const auto normal_path = out_dir / (e.id + "_normal.png");
        const auto depth_path = out_dir / (e.id + "_depth.png");
        write_integrated_png(normal_path, integrate(six, RenderingKind::normal), bits);
        write_integrated_png(depth_path, integrate(six, RenderingKind::depth), bits);
        e.normal_img_path = normal_path.string();
        e.depth_img_path = depth_path.string();
      } catch (const std::exception& ex) {
        e.normal_img_path.clear();
        e.depth_img_path.clear();
        e.flags.push_back(std::string(kRenderFailedFlag) + ": " + ex.what());
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(out.entries.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (stats) {
    stats->count = out.entries.size();
    stats->failures = out.flagged(kRenderFailedFlag);
    stats->wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return out;
}

}  // namespace orthorep
