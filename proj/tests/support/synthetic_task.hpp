#pragma once

// Synthetic box-car learning task shared by the acceptance binary and the
// integration tests.

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <vector>

#include "orthorep/dataset.hpp"
#include "orthorep/metrics.hpp"
#include "orthorep/surrogate/training.hpp"
#include "orthorep/synthetic.hpp"

namespace orthorep::testing {

namespace sg = orthorep::surrogate;

struct SyntheticTask {
  std::vector<synthetic::SyntheticCar> cars;
  std::vector<Split> split;  // parallel to cars
};

/// `base_shapes` cars plus flips, split by group with ratios 0.7/0.15/0.15.
inline SyntheticTask make_task(int base_shapes, std::uint64_t shape_seed, std::uint64_t split_seed) {
  SyntheticTask t;
  t.cars = synthetic::make_dataset(base_shapes, shape_seed);
  DatasetManifest m;
  for (const auto& c : t.cars) {
    ManifestEntry e;
    e.id = c.id;
    e.group_id = c.group_id;
    e.drag_coefficient = c.label;
    m.entries.push_back(e);
  }
  SplitSpec spec;
  spec.ratios = {0.7, 0.15, 0.15};
  spec.seed = split_seed;
  const DatasetManifest split = assign_splits(m, spec);
  std::map<std::string, Split> by_id;
  for (const auto& e : split.entries) by_id[e.id] = e.split;
  for (const auto& c : t.cars) t.split.push_back(by_id.at(c.id));
  return t;
}

struct SplitExamples {
  std::vector<sg::Example> train, val, test;
};

/// Patch inputs for one or two image sources (the second fills the depth slot).
inline SplitExamples make_examples(const SyntheticTask& t, const sg::ModelConfig& mc, synthetic::InputSource first,
                                   std::optional<synthetic::InputSource> second = std::nullopt, int resolution = 384) {
  SplitExamples out;
  for (std::size_t i = 0; i < t.cars.size(); ++i) {
    sg::Example ex;
    ex.id = t.cars[i].id;
    ex.label = t.cars[i].label;
    sg::PatchMatrix a = sg::image_to_patches(synthetic::render_input(t.cars[i].mesh, first, resolution), mc);
    if (mc.streams == sg::Streams::depth_only)
      ex.input.depth = std::move(a);
    else
      ex.input.normal = std::move(a);
    if (second) ex.input.depth = sg::image_to_patches(synthetic::render_input(t.cars[i].mesh, *second, resolution), mc);
    switch (t.split[i]) {
      case Split::train: out.train.push_back(std::move(ex)); break;
      case Split::val: out.val.push_back(std::move(ex)); break;
      case Split::test: out.test.push_back(std::move(ex)); break;
      default: break;
    }
  }
  return out;
}

struct FitResult {
  sg::ModelState state;
  double test_r2 = 0.0;
  double test_mse = 0.0;
  int epochs = 0;
  int best_epoch = 0;
  double seconds = 0.0;
};

inline FitResult fit(const sg::ModelConfig& mc, const sg::TrainConfig& tc, const SplitExamples& data,
                     std::optional<sg::ModelState> init = std::nullopt, bool verbose = false) {
  const auto t0 = std::chrono::steady_clock::now();
  sg::EpochCallback cb;
  if (verbose)
    cb = [](const sg::EpochLog& e) {
      if (e.epoch % 10 == 0) std::cerr << "    epoch " << e.epoch << " train " << e.train_mse << " val " << e.val_mse << '\n';
    };
  auto r = sg::train(init ? *init : sg::init_model(mc), mc, tc, data.train, data.val, cb);
  FitResult f;
  f.state = std::move(r.best_state);
  f.epochs = static_cast<int>(r.log.size());
  f.best_epoch = r.best_epoch;
  const auto preds = sg::predict_examples(f.state, mc, data.test);
  std::vector<double> labels;
  for (const auto& e : data.test) labels.push_back(e.label);
  f.test_r2 = r_squared(preds, labels);
  f.test_mse = mse(preds, labels);
  f.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return f;
}

}  // namespace orthorep::testing
