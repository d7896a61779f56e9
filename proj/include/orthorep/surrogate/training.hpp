#pragma once

// Mini-batch training with Adam (or plain momentum SGD), per-epoch
// learning-rate decay and early stopping on validation MSE.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "orthorep/error.hpp"
#include "orthorep/metrics.hpp"
#include "orthorep/rng.hpp"
#include "orthorep/surrogate/model.hpp"

namespace orthorep::surrogate {

enum class Optimizer { adam, sgd_momentum };

inline const char* to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd_momentum"; }

inline Optimizer parse_optimizer(std::string_view s) {
  if (s == "adam") return Optimizer::adam;
  if (s == "sgd_momentum" || s == "sgd") return Optimizer::sgd_momentum;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay_per_epoch = 0.96;
  int early_stop_patience = 20;
  int batch_size = 16;
  int max_epochs = 200;
  Optimizer optimizer = Optimizer::adam;
  double momentum = 0.9;  // first-moment decay for adam
  double beta2 = 0.999;   // adam only
  double epsilon = 1e-8;  // adam only
  std::uint64_t seed = 0;  // mini-batch order

  /// Small-step setting for continuing from transferred weights.
  static TrainConfig fine_tuning() {
    TrainConfig c;
    c.learning_rate = 5e-5;
    return c;
  }

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0))
      throw ConfigError("lr_decay_per_epoch must lie in (0, 1]");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"lr_decay_per_epoch", c.lr_decay_per_epoch},
          {"early_stop_patience", c.early_stop_patience}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs}, {"optimizer", to_string(c.optimizer)}, {"momentum", c.momentum},
          {"beta2", c.beta2}, {"epsilon", c.epsilon}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay_per_epoch = j.value("lr_decay_per_epoch", c.lr_decay_per_epoch);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.optimizer = parse_optimizer(j.value("optimizer", std::string(to_string(c.optimizer))));
    c.momentum = j.value("momentum", c.momentum);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Tracks the best validation loss; stop after `patience` epochs without a
/// strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be at least 1");
  }

  /// Returns true when `val_loss` is a new best.
  bool update(double val_loss) {
    ++epoch_;
    if (val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
      bad_epochs_ = 0;
      return true;
    }
    ++bad_epochs_;
    return false;
  }

  bool should_stop() const { return bad_epochs_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct Example {
  std::string id;
  ModelInput input;
  double label = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  ModelState best_state;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_mse = 0.0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochLog&)>;

inline std::vector<double> predict_examples(const ModelState& s, const ModelConfig& c, std::span<const Example> ex,
                                            int threads = 1) {
  std::vector<ModelInput> inputs;
  inputs.reserve(ex.size());
  for (const auto& e : ex) inputs.push_back(e.input);
  return forward(s, c, inputs, threads);
}

inline double examples_mse(const ModelState& s, const ModelConfig& c, std::span<const Example> ex, int threads = 1) {
  const auto preds = predict_examples(s, c, ex, threads);
  std::vector<double> labels;
  for (const auto& e : ex) labels.push_back(e.label);
  return mse(preds, labels);
}

/// Trains from `init`. Deterministic for a fixed config and example order.
/// The returned state is the one with the lowest validation MSE.
inline TrainResult train(ModelState init, const ModelConfig& mc, const TrainConfig& tc, std::span<const Example> train_set,
                         std::span<const Example> val_set, const EpochCallback& on_epoch = {}, int threads = 1) {
  tc.validate();
  check_state(init, mc);
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");

  ModelState state = std::move(init);
  ModelState first = state.zeros_like();
  ModelState second = state.zeros_like();
  long step = 0;
  TrainResult result;
  result.best_state = state;
  EarlyStopping stopper(tc.early_stop_patience);
  SplitMix64 rng(tc.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = tc.learning_rate;

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    rng.shuffle(order);
    double train_sse = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
      std::vector<ModelInput> batch;
      std::vector<double> labels;
      for (std::size_t i = b; i < e; ++i) {
        batch.push_back(train_set[order[i]].input);
        labels.push_back(train_set[order[i]].label);
      }
      const auto lg = loss_and_grad(state, mc, batch, labels);
      if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
      train_sse += lg.loss * static_cast<double>(e - b);
      ++step;
      const double c1 = 1.0 - std::pow(tc.momentum, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < state.tensors.size(); ++t) {
        auto& w = state.tensors[t].data;
        auto& m = first.tensors[t].data;
        auto& v = second.tensors[t].data;
        const auto& g = lg.grad.tensors[t].data;
        if (tc.optimizer == Optimizer::sgd_momentum) {
          for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = tc.momentum * m[k] + g[k];
            w[k] -= lr * m[k];
          }
        } else {
          for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = tc.momentum * m[k] + (1.0 - tc.momentum) * g[k];
            v[k] = tc.beta2 * v[k] + (1.0 - tc.beta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + tc.epsilon);
          }
        }
      }
      if (!state.all_finite()) throw NumericError("weights became non-finite at epoch " + std::to_string(epoch));
    }
    EpochLog entry{epoch, train_sse / static_cast<double>(order.size()), examples_mse(state, mc, val_set, threads), lr};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (stopper.update(entry.val_mse)) result.best_state = state;
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
    lr *= tc.lr_decay_per_epoch;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_mse = stopper.best();
  return result;
}

inline void write_training_log(const std::vector<EpochLog>& log, std::ostream& out) {
  out << "epoch,train_mse,val_mse,learning_rate\n" << std::setprecision(10);
  for (const auto& e : log) out << e.epoch << ',' << e.train_mse << ',' << e.val_mse << ',' << e.learning_rate << '\n';
}

inline void save_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_training_log(log, out);
}

struct TimedPredictions {
  std::vector<double> predictions;
  double seconds_per_example = 0.0;  // wall clock, forward pass only
};

inline TimedPredictions predict_timed(const ModelState& s, const ModelConfig& c, std::span<const ModelInput> batch,
                                      int threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  TimedPredictions r;
  r.predictions = forward(s, c, batch, threads);
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  r.seconds_per_example = batch.empty() ? 0.0 : dt.count() / static_cast<double>(batch.size());
  return r;
}

}  // namespace orthorep::surrogate
