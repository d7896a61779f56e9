#pragma once

// Compact attention regressor over integrated six-view images.
//
// Per stream (normal and/or depth):
//   non-overlapping patches -> linear embedding + sinusoidal position code
//   -> multi-head self-attention with residual
// Single-stream: mean-pool tokens -> tanh(linear(head_hidden)) -> scalar.
// Fused: symmetric cross-attention with residual (normal tokens query the
// depth tokens and vice versa), each stream pooled and projected by its own
// hidden layer, the two hidden vectors concatenated -> scalar.
//
// All arithmetic is double precision; gradients are analytic.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "orthorep/error.hpp"
#include "orthorep/representation.hpp"
#include "orthorep/rng.hpp"

namespace orthorep::surrogate {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

enum class Streams { normal_only, depth_only, fused };

/// Applied token-wise to the patch embedding, before the position code.
enum class EmbedActivation { identity, gelu };

inline const char* to_string(EmbedActivation a) { return a == EmbedActivation::gelu ? "gelu" : "identity"; }

inline EmbedActivation parse_embed_activation(std::string_view s) {
  if (s == "gelu") return EmbedActivation::gelu;
  if (s == "identity" || s == "linear") return EmbedActivation::identity;
  throw ConfigError("unknown embed_activation '" + std::string(s) + "'");
}

inline const char* to_string(Streams s) {
  switch (s) {
    case Streams::normal_only: return "normal_only";
    case Streams::depth_only: return "depth_only";
    case Streams::fused: return "fused";
  }
  return "?";
}

inline Streams parse_streams(std::string_view s) {
  if (s == "normal_only" || s == "normal") return Streams::normal_only;
  if (s == "depth_only" || s == "depth") return Streams::depth_only;
  if (s == "fused") return Streams::fused;
  throw ConfigError("unknown streams '" + std::string(s) + "'");
}

struct ModelConfig {
  int input_resolution = 96;  // images are area-averaged down to this
  int patch_size = 8;
  int embed_dim = 64;
  int attention_dim = 128;
  int heads = 4;
  Streams streams = Streams::normal_only;
  int head_hidden = 128;
  std::uint64_t parameter_init_seed = 0;
  bool position_encoding = true;  // disabled only to test permutation invariance
  EmbedActivation embed_activation = EmbedActivation::gelu;

  int grid() const { return input_resolution / patch_size; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  bool uses_normal() const { return streams != Streams::depth_only; }
  bool uses_depth() const { return streams != Streams::normal_only; }

  void validate() const {
    if (input_resolution < 1 || patch_size < 1) throw ConfigError("input_resolution and patch_size must be positive");
    if (input_resolution % patch_size != 0) throw ConfigError("input_resolution must be divisible by patch_size");
    if (embed_dim < 1 || attention_dim < 1 || heads < 1 || head_hidden < 1)
      throw ConfigError("model dimensions must be positive");
    if (attention_dim % heads != 0) throw ConfigError("attention_dim must be divisible by heads");
  }

  /// Same architecture apart from the stream selection and init seed.
  bool compatible_with(const ModelConfig& o) const {
    return input_resolution == o.input_resolution && patch_size == o.patch_size && embed_dim == o.embed_dim &&
           attention_dim == o.attention_dim && heads == o.heads && head_hidden == o.head_hidden &&
           position_encoding == o.position_encoding && embed_activation == o.embed_activation;
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_resolution", c.input_resolution}, {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},               {"attention_dim", c.attention_dim},
          {"heads", c.heads},                       {"streams", to_string(c.streams)},
          {"head_hidden", c.head_hidden},           {"parameter_init_seed", c.parameter_init_seed},
          {"position_encoding", c.position_encoding},
          {"embed_activation", to_string(c.embed_activation)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_resolution = j.value("input_resolution", c.input_resolution);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.attention_dim = j.value("attention_dim", c.attention_dim);
    c.heads = j.value("heads", c.heads);
    c.streams = parse_streams(j.value("streams", std::string(to_string(c.streams))));
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.parameter_init_seed = j.value("parameter_init_seed", c.parameter_init_seed);
    c.position_encoding = j.value("position_encoding", c.position_encoding);
    c.embed_activation =
        parse_embed_activation(j.value("embed_activation", std::string(to_string(c.embed_activation))));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;  // 1 or 2 dims, row-major
  std::vector<double, Eigen::aligned_allocator<double>> data;  // aligned so vectorized reductions are reproducible

  std::int64_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::int64_t cols() const { return shape.back(); }
  bool operator==(const NamedTensor&) const = default;
};

/// Flat list of named weight tensors.
class ModelState {
 public:
  std::vector<NamedTensor> tensors;

  bool has(std::string_view name) const { return find(name) != nullptr; }

  const NamedTensor& get(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw ConfigError("model state has no tensor '" + std::string(name) + "'");
  }
  NamedTensor& get(std::string_view name) {
    return const_cast<NamedTensor&>(static_cast<const ModelState&>(*this).get(name));
  }

  Eigen::Map<Mat> mat(std::string_view name) {
    auto& t = get(name);
    return {t.data.data(), t.rows(), t.cols()};
  }
  Eigen::Map<const Mat> mat(std::string_view name) const {
    const auto& t = get(name);
    return {t.data.data(), t.rows(), t.cols()};
  }
  Eigen::Map<RowVec> vec(std::string_view name) {
    auto& t = get(name);
    return {t.data.data(), static_cast<Eigen::Index>(t.data.size())};
  }
  Eigen::Map<const RowVec> vec(std::string_view name) const {
    const auto& t = get(name);
    return {t.data.data(), static_cast<Eigen::Index>(t.data.size())};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
  }

  ModelState zeros_like() const {
    ModelState z = *this;
    for (auto& t : z.tensors) std::fill(t.data.begin(), t.data.end(), 0.0);
    return z;
  }

  bool all_finite() const {
    for (const auto& t : tensors)
      for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const ModelState&) const = default;

 private:
  const NamedTensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::string stream_prefix(bool depth) { return depth ? "depth" : "normal"; }

inline void add_uniform(ModelState& s, std::string name, std::vector<std::int64_t> shape, std::int64_t fan_in,
                        std::uint64_t seed) {
  NamedTensor t{std::move(name), std::move(shape), {}};
  std::int64_t n = 1;
  for (auto d : t.shape) n *= d;
  t.data.resize(static_cast<std::size_t>(n));
  // Each tensor draws from its own stream so adding tensors never shifts others.
  SplitMix64 g(mix_seed(seed, t.name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data) v = g.uniform(-bound, bound);
  s.tensors.push_back(std::move(t));
}

inline void add_attention(ModelState& s, const std::string& p, const ModelConfig& c, std::uint64_t seed) {
  add_uniform(s, p + ".wq", {c.embed_dim, c.attention_dim}, c.embed_dim, seed);
  add_uniform(s, p + ".wk", {c.embed_dim, c.attention_dim}, c.embed_dim, seed);
  add_uniform(s, p + ".wv", {c.embed_dim, c.attention_dim}, c.embed_dim, seed);
  add_uniform(s, p + ".wo", {c.attention_dim, c.embed_dim}, c.attention_dim, seed);
  add_uniform(s, p + ".bo", {c.embed_dim}, c.attention_dim, seed);
}

inline void add_stream(ModelState& s, bool depth, const ModelConfig& c, std::uint64_t seed) {
  const std::string p = stream_prefix(depth);
  add_uniform(s, p + ".embed.weight", {c.patch_dim(), c.embed_dim}, c.patch_dim(), seed);
  add_uniform(s, p + ".embed.bias", {c.embed_dim}, c.patch_dim(), seed);
  add_attention(s, p + ".self_attn", c, seed);
  add_uniform(s, p + ".head.weight", {c.embed_dim, c.head_hidden}, c.embed_dim, seed);
  add_uniform(s, p + ".head.bias", {c.head_hidden}, c.embed_dim, seed);
}

inline std::int64_t output_width(const ModelConfig& c) {
  return c.streams == Streams::fused ? 2 * c.head_hidden : c.head_hidden;
}

}  // namespace detail

/// Fresh weights, uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded by
/// config.parameter_init_seed.
inline ModelState init_model(const ModelConfig& c) {
  c.validate();
  ModelState s;
  const auto seed = c.parameter_init_seed;
  if (c.uses_normal()) detail::add_stream(s, false, c, seed);
  if (c.uses_depth()) detail::add_stream(s, true, c, seed);
  if (c.streams == Streams::fused) {
    detail::add_attention(s, "cross.normal", c, seed);
    detail::add_attention(s, "cross.depth", c, seed);
  }
  const auto k = detail::output_width(c);
  detail::add_uniform(s, "out.weight", {k}, k, seed);
  detail::add_uniform(s, "out.bias", {1}, k, seed);
  return s;
}

/// Throws if `s` does not have exactly the tensors `c` implies.
inline void check_state(const ModelState& s, const ModelConfig& c) {
  ModelConfig shape_only = c;
  const ModelState ref = init_model(shape_only);
  if (s.tensors.size() != ref.tensors.size())
    throw ConfigError("model state has " + std::to_string(s.tensors.size()) + " tensors, config implies " +
                      std::to_string(ref.tensors.size()));
  for (const auto& t : ref.tensors) {
    if (!s.has(t.name)) throw ConfigError("model state is missing tensor '" + t.name + "'");
    if (s.get(t.name).shape != t.shape) throw ConfigError("tensor '" + t.name + "' has the wrong shape");
  }
}

/// Fused model whose per-stream embedding, self-attention and hidden layers
/// are copied from single-stream donors; cross-attention and the output layer
/// are freshly initialized from fused_config.parameter_init_seed.
inline ModelState init_fused_from_streams(const ModelState& normal_state, const ModelConfig& normal_config,
                                          const ModelState& depth_state, const ModelConfig& depth_config,
                                          const ModelConfig& fused_config) {
  if (normal_config.streams != Streams::normal_only) throw ConfigError("normal donor must be a normal_only model");
  if (depth_config.streams != Streams::depth_only) throw ConfigError("depth donor must be a depth_only model");
  if (fused_config.streams != Streams::fused) throw ConfigError("target config must be fused");
  if (!normal_config.compatible_with(depth_config) || !normal_config.compatible_with(fused_config))
    throw ConfigError("donor and fused configs are incompatible");
  check_state(normal_state, normal_config);
  check_state(depth_state, depth_config);
  ModelState s = init_model(fused_config);
  for (auto& t : s.tensors) {
    if (t.name.starts_with("normal."))
      t.data = normal_state.get(t.name).data;
    else if (t.name.starts_with("depth."))
      t.data = depth_state.get(t.name).data;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Inputs

/// Patch matrix of one image: tokens x (3 * patch^2), token order row-major
/// over the patch grid, features ordered (row, column, channel) in a patch.
using PatchMatrix = Mat;

struct ModelInput {
  PatchMatrix normal;  // empty when the model does not use the stream
  PatchMatrix depth;
};

/// Area-averages `img` by an integer factor down to the configured input
/// resolution and cuts it into patches. Pixel values are mapped from [0, 1]
/// to [-1, 1], so the normal-image background becomes zero.
inline PatchMatrix image_to_patches(const RgbImage& img, const ModelConfig& c) {
  if (img.width != img.height) throw ConfigError("model input images must be square");
  if (img.width % c.input_resolution != 0)
    throw ConfigError("image size " + std::to_string(img.width) + " is not a multiple of input_resolution " +
                      std::to_string(c.input_resolution));
  const int f = img.width / c.input_resolution;
  const int r = c.input_resolution, p = c.patch_size, g = c.grid();
  std::vector<double> small(static_cast<std::size_t>(r) * r * 3, 0.0);
  const double inv = 1.0 / (f * f);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::size_t dst = (static_cast<std::size_t>(y / f) * r + x / f) * 3;
      const std::size_t src = img.offset(x, y);
      for (int ch = 0; ch < 3; ++ch) small[dst + ch] += inv * img.pixels[src + ch];
    }
  PatchMatrix out(c.tokens(), c.patch_dim());
  for (int ty = 0; ty < g; ++ty)
    for (int tx = 0; tx < g; ++tx) {
      const int token = ty * g + tx;
      int k = 0;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int ch = 0; ch < 3; ++ch)
            out(token, k++) = 2.0 * small[(static_cast<std::size_t>(ty * p + py) * r + tx * p + px) * 3 + ch] - 1.0;
    }
  return out;
}

/// Fixed sinusoidal code: even columns sin(t / 10000^(2i/E)), odd cos.
inline Mat position_encoding(int tokens, int dim) {
  Mat pe(tokens, dim);
  for (int t = 0; t < tokens; ++t)
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(t, i) = i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq);
    }
  return pe;
}

// ---------------------------------------------------------------------------
// Network

namespace detail {

inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double gelu_derivative(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2) + x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

struct AttentionCache {
  Mat q, k, v, concat;
  std::vector<Mat> probs;  // one tokens x tokens matrix per head
};

inline void check_finite(const Mat& m, const std::string& layer) {
  if (!m.allFinite()) throw NumericError("non-finite activation in " + layer);
}

/// Multi-head attention output (without residual): softmax(Q K^T / sqrt(d)) V Wo + bo.
inline Mat attention_forward(const ModelState& s, const std::string& p, int heads, const Mat& xq, const Mat& xkv,
                             AttentionCache& c) {
  c.q.noalias() = xq * s.mat(p + ".wq");
  c.k.noalias() = xkv * s.mat(p + ".wk");
  c.v.noalias() = xkv * s.mat(p + ".wv");
  const auto a = c.q.cols(), dh = a / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  c.concat.resize(xq.rows(), a);
  c.probs.resize(heads);
  for (int h = 0; h < heads; ++h) {
    Mat& sm = c.probs[h];
    sm.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
    sm *= scale;
    for (Eigen::Index r = 0; r < sm.rows(); ++r) {
      auto row = sm.row(r);
      row = (row.array() - row.maxCoeff()).exp();
      row /= row.sum();
    }
    c.concat.middleCols(h * dh, dh).noalias() = sm * c.v.middleCols(h * dh, dh);
  }
  Mat out = c.concat * s.mat(p + ".wo");
  out.rowwise() += s.vec(p + ".bo");
  return out;
}

/// Accumulates parameter gradients into `g` and input gradients into
/// `dxq` / `dxkv` (which may alias for self-attention).
inline void attention_backward(const ModelState& s, ModelState& g, const std::string& p, int heads, const Mat& xq,
                               const Mat& xkv, const AttentionCache& c, const Mat& dout, Mat& dxq, Mat& dxkv) {
  g.vec(p + ".bo") += dout.colwise().sum();
  g.mat(p + ".wo").noalias() += c.concat.transpose() * dout;
  const Mat dconcat = dout * s.mat(p + ".wo").transpose();
  const auto a = c.q.cols(), dh = a / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq(c.q.rows(), a), dk(c.k.rows(), a), dv(c.v.rows(), a);
  for (int h = 0; h < heads; ++h) {
    const Mat& pr = c.probs[h];
    const auto d_o = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = pr.transpose() * d_o;
    Mat dp = d_o * c.v.middleCols(h * dh, dh).transpose();
    const Eigen::VectorXd rowdot = (dp.array() * pr.array()).rowwise().sum();
    Mat ds = (pr.array() * (dp.colwise() - rowdot).array()).matrix() * scale;
    dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  g.mat(p + ".wq").noalias() += xq.transpose() * dq;
  g.mat(p + ".wk").noalias() += xkv.transpose() * dk;
  g.mat(p + ".wv").noalias() += xkv.transpose() * dv;
  dxq.noalias() += dq * s.mat(p + ".wq").transpose();
  dxkv.noalias() += dk * s.mat(p + ".wk").transpose();
  dxkv.noalias() += dv * s.mat(p + ".wv").transpose();
}

struct StreamCache {
  Mat x;    // embedded tokens
  Mat pre;  // embedding before the activation
  AttentionCache self;
  Mat h;  // after self-attention + residual
};

struct ForwardCache {
  StreamCache stream[2];  // [normal, depth]
  AttentionCache cross[2];
  Mat z[2];  // final token features per stream
  RowVec pooled[2];
  RowVec hidden[2];
  double output = 0.0;
};

class Network {
 public:
  Network(const ModelState& s, const ModelConfig& c) : s_(s), c_(c) {
    c.validate();
    if (c.position_encoding) pe_ = position_encoding(c.tokens(), c.embed_dim);
  }

  const ModelConfig& config() const { return c_; }

  /// Embedding + self-attention for one stream.
  void encode(bool depth, const PatchMatrix& patches, StreamCache& sc) const {
    const std::string p = stream_prefix(depth);
    if (patches.rows() != c_.tokens() || patches.cols() != c_.patch_dim())
      throw ConfigError(p + " input has shape " + std::to_string(patches.rows()) + "x" + std::to_string(patches.cols()) +
                        ", expected " + std::to_string(c_.tokens()) + "x" + std::to_string(c_.patch_dim()));
    sc.x.noalias() = patches * s_.mat(p + ".embed.weight");
    sc.x.rowwise() += s_.vec(p + ".embed.bias");
    if (c_.embed_activation == EmbedActivation::gelu) {
      sc.pre = sc.x;
      sc.x = sc.pre.unaryExpr([](double v) { return gelu(v); });
    }
    if (c_.position_encoding) sc.x += pe_;
    check_finite(sc.x, p + ".embed");
    sc.h = sc.x + attention_forward(s_, p + ".self_attn", c_.heads, sc.x, sc.x, sc.self);
    check_finite(sc.h, p + ".self_attn");
  }

  double forward(const ModelInput& in, ForwardCache& fc) const {
    const bool streams[2] = {c_.uses_normal(), c_.uses_depth()};
    for (int k = 0; k < 2; ++k)
      if (streams[k]) encode(k == 1, k == 0 ? in.normal : in.depth, fc.stream[k]);
    if (c_.streams == Streams::fused) {
      for (int k = 0; k < 2; ++k) {
        const std::string p = std::string("cross.") + stream_prefix(k == 1);
        fc.z[k] = fc.stream[k].h +
                  attention_forward(s_, p, c_.heads, fc.stream[k].h, fc.stream[1 - k].h, fc.cross[k]);
        check_finite(fc.z[k], p);
      }
    } else {
      for (int k = 0; k < 2; ++k)
        if (streams[k]) fc.z[k] = fc.stream[k].h;
    }
    RowVec features(detail::output_width(c_));
    Eigen::Index off = 0;
    for (int k = 0; k < 2; ++k) {
      if (!streams[k]) continue;
      const std::string p = stream_prefix(k == 1);
      fc.pooled[k] = fc.z[k].colwise().mean();
      fc.hidden[k] = (fc.pooled[k] * s_.mat(p + ".head.weight") + s_.vec(p + ".head.bias")).array().tanh().matrix();
      features.segment(off, c_.head_hidden) = fc.hidden[k];
      off += c_.head_hidden;
    }
    fc.output = features.dot(s_.vec("out.weight")) + s_.vec("out.bias")(0);
    if (!std::isfinite(fc.output)) throw NumericError("non-finite activation in out");
    return fc.output;
  }

  /// Adds d(output)/d(weights) * dy into `g`.
  void backward(const ModelInput& in, const ForwardCache& fc, double dy, ModelState& g) const {
    const bool streams[2] = {c_.uses_normal(), c_.uses_depth()};
    g.vec("out.bias")(0) += dy;
    Mat dz[2];
    Eigen::Index off = 0;
    const auto out_w = s_.vec("out.weight");
    for (int k = 0; k < 2; ++k) {
      if (!streams[k]) continue;
      const std::string p = stream_prefix(k == 1);
      g.vec("out.weight").segment(off, c_.head_hidden) += dy * fc.hidden[k];
      const RowVec dpre =
          (dy * out_w.segment(off, c_.head_hidden)).array() * (1.0 - fc.hidden[k].array().square());
      off += c_.head_hidden;
      g.mat(p + ".head.weight").noalias() += fc.pooled[k].transpose() * dpre;
      g.vec(p + ".head.bias") += dpre;
      const RowVec dpooled = dpre * s_.mat(p + ".head.weight").transpose();
      dz[k] = (dpooled / static_cast<double>(c_.tokens())).replicate(c_.tokens(), 1);
    }
    Mat dh[2];
    if (c_.streams == Streams::fused) {
      dh[0] = dz[0];
      dh[1] = dz[1];
      for (int k = 0; k < 2; ++k) {
        const std::string p = std::string("cross.") + stream_prefix(k == 1);
        attention_backward(s_, g, p, c_.heads, fc.stream[k].h, fc.stream[1 - k].h, fc.cross[k], dz[k], dh[k],
                           dh[1 - k]);
      }
    } else {
      for (int k = 0; k < 2; ++k)
        if (streams[k]) dh[k] = dz[k];
    }
    for (int k = 0; k < 2; ++k) {
      if (!streams[k]) continue;
      const std::string p = stream_prefix(k == 1);
      const StreamCache& sc = fc.stream[k];
      Mat dx = dh[k];
      attention_backward(s_, g, p + ".self_attn", c_.heads, sc.x, sc.x, sc.self, dh[k], dx, dx);
      if (c_.embed_activation == EmbedActivation::gelu)
        dx.array() *= sc.pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
      const PatchMatrix& patches = k == 0 ? in.normal : in.depth;
      g.mat(p + ".embed.weight").noalias() += patches.transpose() * dx;
      g.vec(p + ".embed.bias") += dx.colwise().sum();
    }
  }

 private:
  const ModelState& s_;
  const ModelConfig& c_;
  Mat pe_;
};

}  // namespace detail

/// Pooled token features and hidden activations of each active stream
/// (index 0 = normal, 1 = depth). Exposed for transfer-initialization checks.
struct StreamFeatures {
  RowVec pooled[2];
  RowVec hidden[2];
  double output = 0.0;
};

inline StreamFeatures features(const ModelState& s, const ModelConfig& c, const ModelInput& in) {
  detail::Network net(s, c);
  detail::ForwardCache fc;
  net.forward(in, fc);
  StreamFeatures f;
  for (int k = 0; k < 2; ++k) {
    f.pooled[k] = fc.pooled[k];
    f.hidden[k] = fc.hidden[k];
  }
  f.output = fc.output;
  return f;
}

/// Predictions for a batch. Examples are independent; with threads > 1 the
/// batch is split into contiguous chunks, which does not change any output.
inline std::vector<double> forward(const ModelState& s, const ModelConfig& c, std::span<const ModelInput> batch,
                                   int threads = 1) {
  check_state(s, c);
  std::vector<double> out(batch.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    detail::Network net(s, c);
    detail::ForwardCache fc;
    for (std::size_t i = begin; i < end; ++i) out[i] = net.forward(batch[i], fc);
  };
  const std::size_t n_threads = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(batch.size(), 1));
  if (n_threads == 1) {
    run(0, batch.size());
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t chunk = (batch.size() + n_threads - 1) / n_threads;
    for (std::size_t b = 0; b < batch.size(); b += chunk)
      jobs.push_back(std::async(std::launch::async, run, b, std::min(batch.size(), b + chunk)));
    for (auto& j : jobs) j.get();
  }
  return out;
}

struct LossAndGrad {
  double loss = 0.0;
  ModelState grad;
  std::vector<double> predictions;
};

/// Mean squared error over the batch and its analytic gradient.
inline LossAndGrad loss_and_grad(const ModelState& s, const ModelConfig& c, std::span<const ModelInput> batch,
                                 std::span<const double> labels) {
  if (batch.empty()) throw ConfigError("loss_and_grad: empty batch");
  if (batch.size() != labels.size()) throw ConfigError("loss_and_grad: one label per example required");
  for (double y : labels)
    if (!std::isfinite(y)) throw ConfigError("loss_and_grad: non-finite label");
  check_state(s, c);
  LossAndGrad r;
  r.grad = s.zeros_like();
  r.predictions.resize(batch.size());
  detail::Network net(s, c);
  detail::ForwardCache fc;
  const double n = static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double y = net.forward(batch[i], fc);
    r.predictions[i] = y;
    const double resid = y - labels[i];
    r.loss += resid * resid / n;
    net.backward(batch[i], fc, 2.0 * resid / n, r.grad);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Serialization: "ORWT", u32 version, u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u64 dims, f64 data (little-endian).

inline void save_weights(const ModelState& s, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  out.write("ORWT", 4);
  u32(1);
  u32(static_cast<std::uint32_t>(s.tensors.size()));
  for (const auto& t : s.tensors) {
    u32(static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) {
      const auto v = static_cast<std::uint64_t>(d);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(8 * t.data.size()));
  }
  if (!out) throw Error("write failed: " + path.string());
}

inline ModelState load_weights(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("weights file not found: " + path.string());
  const std::string bytes = orthorep::detail::read_file(path);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw ParseError(path.string(), 0, pos, "truncated weights file");
  };
  auto u32 = [&] {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  };
  need(4);
  if (bytes.compare(0, 4, "ORWT") != 0) throw ParseError(path.string(), 0, 0, "bad weights magic");
  pos = 4;
  if (u32() != 1) throw ParseError(path.string(), 0, 4, "unsupported weights version");
  const std::uint32_t count = u32();
  ModelState s;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t len = u32();
    need(len);
    t.name.assign(bytes.data() + pos, len);
    pos += len;
    const std::uint32_t rank = u32();
    if (rank < 1 || rank > 2) throw ParseError(path.string(), 0, pos, "tensor '" + t.name + "' has unsupported rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      need(8);
      std::uint64_t v;
      std::memcpy(&v, bytes.data() + pos, 8);
      pos += 8;
      t.shape.push_back(static_cast<std::int64_t>(v));
      n *= v;
    }
    need(8 * n);
    t.data.resize(n);
    std::memcpy(t.data.data(), bytes.data() + pos, 8 * n);
    pos += 8 * n;
    s.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw ParseError(path.string(), 0, pos, "trailing bytes in weights file");
  return s;
}

inline void save_model_config(const ModelConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

inline ModelConfig load_model_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return model_config_from_json(nlohmann::json::parse(orthorep::detail::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace orthorep::surrogate
