// orthorep: render, reconstruct, dataset preparation, training, evaluation
// and prediction from one binary.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "orthorep/dataset.hpp"
#include "orthorep/metrics.hpp"
#include "orthorep/representation.hpp"
#include "orthorep/surrogate/data.hpp"
#include "orthorep/surrogate/model.hpp"
#include "orthorep/surrogate/training.hpp"

namespace fs = std::filesystem;
namespace sg = orthorep::surrogate;
using namespace orthorep;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string log_level = "info";
};

struct ModelFiles {
  fs::path dir;
  fs::path weights() const { return dir / "weights.orwt"; }
  fs::path config() const { return dir / "model.json"; }
  fs::path train_config() const { return dir / "train.json"; }
  fs::path log() const { return dir / "train_log.csv"; }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) ensure_dir(file.parent_path());
}

nlohmann::json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  try {
    return nlohmann::json::parse(orthorep::detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// render

struct RenderArgs {
  std::string mesh;
  std::string mode = "both";
  int resolution = 384;
  bool deep = false;
  std::string out = ".";
  std::string axis_frame = "+x,+y,+z";
  double length = kCarLength;
  std::optional<double> pixels_per_meter;
};

void run_render(const RenderArgs& a, const Globals& g) {
  if (a.mode != "normal" && a.mode != "depth" && a.mode != "both")
    throw ConfigError("--mode must be normal, depth or both");
  RenderOptions opts;
  opts.resolution = a.resolution;
  opts.pixels_per_meter = a.pixels_per_meter;
  opts.threads = g.threads;
  opts.validate();
  const AxisFrame frame = AxisFrame::parse(a.axis_frame);
  if (a.length < 0.0) throw ConfigError("--length must be >= 0");

  LoadReport report;
  TriMesh mesh = load_mesh(a.mesh, &report);
  spdlog::debug("loaded {}: {} faces, {} degenerate dropped", a.mesh, mesh.faces().size(), report.degenerate_dropped);
  if (!frame.is_identity()) mesh = apply_axis_frame(mesh, frame);
  if (a.length > 0.0) mesh = normalize_length(mesh, a.length);

  const SixViews six = rasterize_six_views(mesh, opts);
  ensure_dir(a.out);
  const std::string stem = fs::path(a.mesh).stem().string();
  const int bits = a.deep ? 16 : 8;
  for (const auto kind : {RenderingKind::normal, RenderingKind::depth}) {
    if (a.mode != "both" && a.mode != to_string(kind)) continue;
    const fs::path path = fs::path(a.out) / (stem + "_" + to_string(kind) + ".png");
    write_integrated_png(path, integrate(six, kind), bits);
    std::cout << path.string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// reconstruct

void run_reconstruct(const std::string& normal, const std::string& depth, const std::string& out) {
  const IntegratedImage n = read_integrated_png(normal);
  const IntegratedImage d = read_integrated_png(depth);
  const OrientedPointCloud cloud = reconstruct(n, d);
  ensure_parent(out);
  write_ply(cloud, fs::path(out));
  spdlog::info("wrote {} points to {}", cloud.points.size(), out);
}

// ---------------------------------------------------------------------------
// dataset

void log_warnings(const DatasetManifest& m) {
  for (const auto& w : m.warnings) spdlog::warn("{}", w);
}

void write_manifest(const DatasetManifest& m, const fs::path& out) {
  ensure_parent(out);
  save_manifest(m, out);
  spdlog::info("wrote {} entries to {}", m.entries.size(), out.string());
}

// ---------------------------------------------------------------------------
// train / eval / predict

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string streams = "normal_only";
  std::string config;
  std::string init_normal;
  std::string init_depth;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  std::optional<int> patience;
};

void run_train(const TrainArgs& a, const Globals& g, bool seed_given) {
  sg::ModelConfig mc;
  sg::TrainConfig tc;
  nlohmann::json cfg = nlohmann::json::object();
  if (!a.config.empty()) cfg = read_json_file(a.config);
  if (cfg.contains("model")) mc = sg::model_config_from_json(cfg["model"]);
  if (cfg.contains("train")) tc = sg::train_config_from_json(cfg["train"]);
  mc.streams = sg::parse_streams(a.streams);
  if (seed_given || !cfg.contains("model") || !cfg["model"].contains("parameter_init_seed"))
    mc.parameter_init_seed = g.seed;
  if (seed_given || !cfg.contains("train") || !cfg["train"].contains("seed")) tc.seed = g.seed;
  if (a.epochs) tc.max_epochs = *a.epochs;
  if (a.learning_rate) tc.learning_rate = *a.learning_rate;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.patience) tc.early_stop_patience = *a.patience;
  mc.validate();
  tc.validate();

  const bool transfer = !a.init_normal.empty() || !a.init_depth.empty();
  if (transfer && (mc.streams != sg::Streams::fused || a.init_normal.empty() || a.init_depth.empty()))
    throw ConfigError("--init-normal and --init-depth are both required, and only for --streams fused");

  const DatasetManifest m = load_manifest(a.manifest);
  const auto train_entries = sg::usable_entries(m, Split::train, true);
  const auto val_entries = sg::usable_entries(m, Split::val, true);
  if (train_entries.empty() || val_entries.empty())
    throw ConfigError("manifest has no labeled, rendered train or val entries (run `dataset split` and `dataset render`)");
  spdlog::info("loading {} train / {} val examples", train_entries.size(), val_entries.size());
  const auto train_set = sg::load_examples(train_entries, mc, g.threads);
  const auto val_set = sg::load_examples(val_entries, mc, g.threads);

  sg::ModelState init;
  if (transfer) {
    const ModelFiles n{a.init_normal}, d{a.init_depth};
    init = sg::init_fused_from_streams(sg::load_weights(n.weights()), sg::load_model_config(n.config()),
                                       sg::load_weights(d.weights()), sg::load_model_config(d.config()), mc);
  } else {
    init = sg::init_model(mc);
  }
  spdlog::info("training {} model, {} parameters", to_string(mc.streams), init.parameter_count());
  // Training runs single-threaded regardless of --threads.
  const auto result = sg::train(std::move(init), mc, tc, train_set, val_set, [](const sg::EpochLog& e) {
    spdlog::info("epoch {:4d}  train {:.6e}  val {:.6e}  lr {:.3e}", e.epoch, e.train_mse, e.val_mse, e.learning_rate);
  });
  const ModelFiles out{a.out};
  ensure_dir(out.dir);
  sg::save_weights(result.best_state, out.weights());
  sg::save_model_config(mc, out.config());
  {
    std::ofstream f(out.train_config());
    f << sg::to_json(tc).dump(2) << '\n';
  }
  sg::save_training_log(result.log, out.log());
  spdlog::info("best epoch {} (val MSE {:.6e}); wrote {}", result.best_epoch, result.best_val_mse, out.dir.string());
}

struct LoadedModel {
  sg::ModelConfig config;
  sg::ModelState state;
};

LoadedModel load_model(const std::string& dir) {
  const ModelFiles f{dir};
  LoadedModel m{sg::load_model_config(f.config()), sg::load_weights(f.weights())};
  sg::check_state(m.state, m.config);
  return m;
}

struct EvalArgs {
  std::string predictions;
  std::string model;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string scatter;
  bool reference = false;
};

/// Reads id,prediction,label rows.
void read_predictions_csv(const fs::path& path, std::vector<std::string>& ids, std::vector<double>& preds,
                          std::vector<double>& labels) {
  if (!fs::exists(path)) throw Error("predictions file not found: " + path.string());
  std::ifstream in(path);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = orthorep::detail::trim(line);
    if (t.empty()) continue;
    if (!header) {
      if (t != "id,prediction,label") throw ParseError(path.string(), line_no, 0, "expected header id,prediction,label");
      header = true;
      continue;
    }
    const auto c1 = t.find(','), c2 = t.find(',', c1 == std::string_view::npos ? c1 : c1 + 1);
    double p = 0.0, y = 0.0;
    if (c1 == std::string_view::npos || c2 == std::string_view::npos ||
        !orthorep::detail::parse_double(t.substr(c1 + 1, c2 - c1 - 1), p) ||
        !orthorep::detail::parse_double(t.substr(c2 + 1), y))
      throw ParseError(path.string(), line_no, 0, "malformed row");
    ids.emplace_back(t.substr(0, c1));
    preds.push_back(p);
    labels.push_back(y);
  }
  if (!header) throw ParseError(path.string(), 0, 0, "empty predictions file");
}

void run_eval(const EvalArgs& a, const Globals& g) {
  std::vector<std::string> ids;
  std::vector<double> preds, labels;
  if (!a.predictions.empty()) {
    if (!a.model.empty() || !a.manifest.empty()) throw ConfigError("use either --predictions or --model/--manifest");
    read_predictions_csv(a.predictions, ids, preds, labels);
  } else {
    if (a.model.empty() || a.manifest.empty()) throw ConfigError("eval needs --predictions or both --model and --manifest");
    const LoadedModel model = load_model(a.model);
    const DatasetManifest m = load_manifest(a.manifest);
    const auto entries = sg::usable_entries(m, parse_split(a.split), true);
    if (entries.empty()) throw ConfigError("no labeled, rendered entries in split " + a.split);
    const auto examples = sg::load_examples(entries, model.config, g.threads);
    preds = sg::predict_examples(model.state, model.config, examples, g.threads);
    for (const auto& e : examples) {
      ids.push_back(e.id);
      labels.push_back(e.label);
    }
  }
  const EvalReport report = evaluate(preds, labels);
  write_table(report, std::cout, a.reference);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream f(a.out);
    if (!f) throw Error("cannot write " + a.out);
    f << to_json(report).dump(2) << '\n';
  }
  if (!a.scatter.empty()) {
    ensure_parent(a.scatter);
    std::ofstream f(a.scatter);
    if (!f) throw Error("cannot write " + a.scatter);
    write_scatter_csv(preds, labels, f, ids);
  }
}

struct PredictArgs {
  std::string model;
  std::string normal;
  std::string depth;
  std::string manifest;
  std::string split;
  std::string out;
};

void run_predict(const PredictArgs& a, const Globals& g) {
  const LoadedModel model = load_model(a.model);
  std::vector<std::string> ids;
  std::vector<sg::ModelInput> inputs;
  if (!a.manifest.empty()) {
    const DatasetManifest m = load_manifest(a.manifest);
    const auto entries = sg::usable_entries(m, a.split.empty() ? std::nullopt : std::optional(parse_split(a.split)), false);
    auto examples = sg::load_examples(entries, model.config, g.threads);
    for (auto& e : examples) {
      ids.push_back(e.id);
      inputs.push_back(std::move(e.input));
    }
  } else {
    if (model.config.uses_normal() && a.normal.empty()) throw ConfigError("this model needs --normal");
    if (model.config.uses_depth() && a.depth.empty()) throw ConfigError("this model needs --depth");
    ManifestEntry e;
    e.id = fs::path(a.normal.empty() ? a.depth : a.normal).stem().string();
    e.normal_img_path = a.normal;
    e.depth_img_path = a.depth;
    ids.push_back(e.id);
    inputs.push_back(sg::load_input(e, model.config));
  }
  const auto timed = sg::predict_timed(model.state, model.config, inputs, g.threads);
  if (timed.seconds_per_example > 0.0)
    spdlog::info("{} predictions, {:.1f} images/second", inputs.size(), 1.0 / timed.seconds_per_example);
  std::ofstream file;
  if (!a.out.empty()) {
    ensure_parent(a.out);
    file.open(a.out);
    if (!file) throw Error("cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;
  out << "id,prediction\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << timed.predictions[i] << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthographic six-view car representation and drag surrogate"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every randomized step")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for rendering and inference")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render a mesh to integrated normal/depth PNGs");
  render->add_option("mesh", ra.mesh, "OBJ or STL file")->required();
  render->add_option("--mode", ra.mode, "normal, depth or both")->capture_default_str();
  render->add_option("--resolution", ra.resolution, "Canvas size in pixels")->capture_default_str();
  render->add_flag("--deep", ra.deep, "Write 16-bit PNGs");
  render->add_option("--out", ra.out, "Output directory")->capture_default_str();
  render->add_option("--axis-frame", ra.axis_frame, "Source axes mapped to +x,+y,+z, e.g. -z,+x,+y")
      ->capture_default_str();
  render->add_option("--length", ra.length, "Normalize the x extent to this length in meters (0 keeps size)")
      ->capture_default_str();
  render->add_option("--pixels-per-meter", ra.pixels_per_meter, "Fixed scale instead of fit-to-tile");

  std::string rec_normal, rec_depth, rec_out;
  auto* rec = app.add_subcommand("reconstruct", "Recover an oriented point cloud from a normal/depth pair");
  rec->add_option("normal", rec_normal, "Integrated normal PNG")->required();
  rec->add_option("depth", rec_depth, "Integrated depth PNG")->required();
  rec->add_option("--out", rec_out, "Output PLY")->required();

  auto* dataset = app.add_subcommand("dataset", "Build, augment, split and render dataset manifests");
  dataset->require_subcommand(1);
  std::string db_meshes, db_labels, db_out;
  auto* build = dataset->add_subcommand("build", "Manifest from a mesh directory and a label CSV");
  build->add_option("--meshes", db_meshes, "Directory of .obj/.stl files")->required();
  build->add_option("--labels", db_labels, "CSV with header id,drag_coefficient")->required();
  build->add_option("--out", db_out, "Output manifest (JSON lines)")->required();

  std::string da_manifest, da_out, da_labels;
  auto* augment = dataset->add_subcommand("augment", "Add width-resized and mirrored entries (4x)");
  augment->add_option("--manifest", da_manifest, "Input manifest")->required();
  augment->add_option("--out", da_out, "Output manifest")->required();
  augment->add_option("--resized-labels", da_labels, "CSV of externally computed labels for resized ids");

  std::string ds_manifest, ds_out, ds_ratios = "0.7,0.15,0.15";
  auto* split = dataset->add_subcommand("split", "Assign train/val/test by group");
  split->add_option("--manifest", ds_manifest, "Input manifest")->required();
  split->add_option("--ratios", ds_ratios, "train,val,test fractions")->capture_default_str();
  split->add_option("--out", ds_out, "Output manifest")->required();

  std::string dr_manifest, dr_out, dr_frame = "+x,+y,+z";
  int dr_resolution = 384;
  bool dr_deep = false;
  auto* drender = dataset->add_subcommand("render", "Render every entry; writes images and manifest.jsonl to --out");
  drender->add_option("--manifest", dr_manifest, "Input manifest")->required();
  drender->add_option("--out", dr_out, "Output directory")->required();
  drender->add_option("--resolution", dr_resolution, "Canvas size in pixels")->capture_default_str();
  drender->add_flag("--deep", dr_deep, "Write 16-bit PNGs");
  drender->add_option("--axis-frame", dr_frame, "Source axes mapped to +x,+y,+z")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a surrogate; writes weights, config and log to --out");
  train->add_option("--manifest", ta.manifest, "Rendered, split manifest")->required();
  train->add_option("--out", ta.out, "Model directory")->required();
  train->add_option("--streams", ta.streams, "normal_only, depth_only or fused")->capture_default_str();
  train->add_option("--config", ta.config, "JSON with optional \"model\" and \"train\" objects");
  train->add_option("--init-normal", ta.init_normal, "Trained normal_only model directory (fused transfer)");
  train->add_option("--init-depth", ta.init_depth, "Trained depth_only model directory (fused transfer)");
  train->add_option("--epochs", ta.epochs, "Override max_epochs");
  train->add_option("--lr", ta.learning_rate, "Override learning_rate");
  train->add_option("--batch-size", ta.batch_size, "Override batch_size");
  train->add_option("--patience", ta.patience, "Override early_stop_patience");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "R^2, MSE and binned errors");
  eval->add_option("--predictions", ea.predictions, "CSV with header id,prediction,label");
  eval->add_option("--model", ea.model, "Model directory");
  eval->add_option("--manifest", ea.manifest, "Rendered, split manifest");
  eval->add_option("--split", ea.split, "train, val or test")->capture_default_str();
  eval->add_option("--out", ea.out, "Report JSON");
  eval->add_option("--scatter", ea.scatter, "Prediction/label CSV for plotting");
  eval->add_flag("--reference", ea.reference, "Print published per-bin errors alongside");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Predict drag coefficients");
  predict->add_option("--model", pa.model, "Model directory")->required();
  predict->add_option("--normal", pa.normal, "Integrated normal PNG");
  predict->add_option("--depth", pa.depth, "Integrated depth PNG");
  predict->add_option("--manifest", pa.manifest, "Rendered manifest (instead of single images)");
  predict->add_option("--split", pa.split, "Restrict --manifest to one split");
  predict->add_option("--out", pa.out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto logger = spdlog::stderr_logger_mt("orthorep");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (*render) {
      run_render(ra, g);
    } else if (*rec) {
      run_reconstruct(rec_normal, rec_depth, rec_out);
    } else if (*build) {
      const DatasetManifest m = build_manifest(db_meshes, db_labels);
      log_warnings(m);
      write_manifest(m, db_out);
    } else if (*augment) {
      DatasetManifest m = augment_manifest(load_manifest(da_manifest), g.seed);
      if (!da_labels.empty()) {
        const LabelTable labels = load_labels_csv(da_labels);
        for (const auto& w : labels.warnings) spdlog::warn("{}", w);
        spdlog::info("joined {} resized labels", join_labels(m, labels));
      }
      write_manifest(m, da_out);
    } else if (*split) {
      SplitSpec spec;
      spec.ratios = SplitSpec::parse_ratios(ds_ratios);
      spec.seed = g.seed;
      write_manifest(assign_splits(load_manifest(ds_manifest), spec), ds_out);
    } else if (*drender) {
      BatchRenderOptions opts;
      opts.render.resolution = dr_resolution;
      opts.deep = dr_deep;
      opts.threads = g.threads;
      opts.axis_frame = AxisFrame::parse(dr_frame);
      BatchStats stats;
      const DatasetManifest m = batch_render(load_manifest(dr_manifest), dr_out, opts, &stats);
      for (const auto& e : m.entries)
        for (const auto& f : e.flags)
          if (f.starts_with(kRenderFailedFlag)) spdlog::warn("{}: {}", e.id, f);
      spdlog::info("rendered {} entries ({} failed) in {:.1f} s", stats.count, stats.failures, stats.wall_seconds);
      write_manifest(m, fs::path(dr_out) / "manifest.jsonl");
    } else if (*train) {
      run_train(ta, g, app.count("--seed") > 0);
    } else if (*eval) {
      run_eval(ea, g);
    } else if (*predict) {
      run_predict(pa, g);
    }
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
