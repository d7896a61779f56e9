#pragma once

// Central finite-difference check of loss_and_grad on a tiny model.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "orthorep/surrogate/model.hpp"

namespace orthorep::testing {

namespace sg = orthorep::surrogate;

struct GradientCheck {
  double worst_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t components = 0;
};

inline sg::ModelConfig tiny_config(sg::Streams streams, std::uint64_t seed) {
  sg::ModelConfig c;
  c.input_resolution = 8;
  c.patch_size = 4;
  c.embed_dim = 6;
  c.attention_dim = 8;
  c.heads = 2;
  c.head_hidden = 5;
  c.streams = streams;
  c.parameter_init_seed = seed;
  return c;
}

inline std::vector<sg::ModelInput> random_inputs(const sg::ModelConfig& c, std::size_t n, std::uint64_t seed) {
  SplitMix64 g(seed);
  std::vector<sg::ModelInput> out(n);
  for (auto& in : out) {
    in.normal = sg::Mat(c.tokens(), c.patch_dim());
    in.depth = sg::Mat(c.tokens(), c.patch_dim());
    for (auto* m : {&in.normal, &in.depth})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = g.uniform(-1, 1);
  }
  return out;
}

/// Relative error |num - ana| / max(|num|, |ana|, 1e-8) over every weight,
/// with step h = 1e-4, on a 2-example batch.
inline GradientCheck gradient_check(sg::Streams streams, std::uint64_t seed) {
  const sg::ModelConfig c = tiny_config(streams, seed);
  sg::ModelState s = sg::init_model(c);
  const auto batch = random_inputs(c, 2, seed + 100);
  const std::vector<double> labels{0.3, -0.2};
  const auto analytic = sg::loss_and_grad(s, c, batch, labels);
  GradientCheck r;
  const double h = 1e-4;
  for (auto& t : s.tensors) {
    const auto& ga = analytic.grad.get(t.name).data;
    for (std::size_t k = 0; k < t.data.size(); ++k) {
      const double w = t.data[k];
      t.data[k] = w + h;
      const double lp = sg::loss_and_grad(s, c, batch, labels).loss;
      t.data[k] = w - h;
      const double lm = sg::loss_and_grad(s, c, batch, labels).loss;
      t.data[k] = w;
      const double num = (lp - lm) / (2 * h);
      const double err = std::abs(num - ga[k]) / std::max({std::abs(num), std::abs(ga[k]), 1e-8});
      if (err > r.worst_relative_error) {
        r.worst_relative_error = err;
        r.worst_tensor = t.name;
      }
      ++r.components;
    }
  }
  return r;
}

}  // namespace orthorep::testing
