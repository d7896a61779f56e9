#pragma once

// Manifest entries -> model examples.

#include <future>
#include <string>
#include <vector>

#include "orthorep/dataset.hpp"
#include "orthorep/representation.hpp"
#include "orthorep/surrogate/model.hpp"
#include "orthorep/surrogate/training.hpp"

namespace orthorep::surrogate {

/// Entries usable for a split: rendered, not flagged as failed.
/// When `require_label` is set, unlabeled entries are skipped too.
inline std::vector<const ManifestEntry*> usable_entries(const DatasetManifest& m, std::optional<Split> split,
                                                        bool require_label) {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : m.entries) {
    if (split && e.split != *split) continue;
    if (require_label && !e.drag_coefficient) continue;
    const bool failed = std::any_of(e.flags.begin(), e.flags.end(),
                                    [](const std::string& f) { return f.starts_with(kRenderFailedFlag); });
    if (failed || e.normal_img_path.empty() || e.depth_img_path.empty()) continue;
    out.push_back(&e);
  }
  return out;
}

inline ModelInput load_input(const ManifestEntry& e, const ModelConfig& c) {
  ModelInput in;
  if (c.uses_normal()) {
    const IntegratedImage img = read_integrated_png(e.normal_img_path);
    if (img.kind != RenderingKind::normal) throw ConfigError(e.normal_img_path + " is not a normal rendering");
    in.normal = image_to_patches(img, c);
  }
  if (c.uses_depth()) {
    const IntegratedImage img = read_integrated_png(e.depth_img_path);
    if (img.kind != RenderingKind::depth) throw ConfigError(e.depth_img_path + " is not a depth rendering");
    in.depth = image_to_patches(img, c);
  }
  return in;
}

/// Reads images for the given entries; unlabeled entries get label NaN.
inline std::vector<Example> load_examples(const std::vector<const ManifestEntry*>& entries, const ModelConfig& c,
                                          int threads = 1) {
  std::vector<Example> out(entries.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i].id = entries[i]->id;
      out[i].label = entries[i]->drag_coefficient.value_or(std::numeric_limits<double>::quiet_NaN());
      out[i].input = load_input(*entries[i], c);
    }
  };
  const std::size_t n = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1,
                                                std::max<std::size_t>(entries.size(), 1));
  if (n == 1) {
    run(0, entries.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (entries.size() + n - 1) / n;
    for (std::size_t b = 0; b < entries.size(); b += chunk)
      jobs.push_back(std::async(std::launch::async, run, b, std::min(entries.size(), b + chunk)));
    for (auto& j : jobs) j.get();
  }
  return out;
}

}  // namespace orthorep::surrogate
