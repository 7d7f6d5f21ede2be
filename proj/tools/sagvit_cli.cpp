#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sagvit/checkpoint.hpp"
#include "sagvit/config.hpp"
#include "sagvit/dataset.hpp"
#include "sagvit/errors.hpp"
#include "sagvit/exports.hpp"
#include "sagvit/sgt.hpp"
#include "sagvit/training.hpp"

namespace fs = std::filesystem;
using namespace sagvit;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string ablation;
  std::string out = ".";
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration (TOML)");
  cmd->add_option("--seed", o.seed, "Overrides the configured seed");
  cmd->add_option("--ablation", o.ablation, "Model variant")
      ->check(CLI::IsMember({"full", "no_transformer", "no_gat", "no_backbone"}));
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
}

void apply_overrides(RunConfig& cfg, const CommonOptions& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (!o.ablation.empty()) cfg.set_ablation(parse_ablation(o.ablation));
  cfg.validate();
}

// Config from --config, else the one embedded in --checkpoint.
RunConfig resolve_config(const CommonOptions& o, std::optional<Checkpoint>* checkpoint) {
  if (!o.checkpoint.empty()) {
    Checkpoint ck = read_checkpoint(o.checkpoint);
    RunConfig cfg = RunConfig::parse(ck.config_text);
    if (!o.config.empty()) {
      // A config given next to a checkpoint only supplies the dataset.
      cfg.data = RunConfig::load(o.config).data;
    }
    if (checkpoint) *checkpoint = std::move(ck);
    if (o.seed) cfg.seed = *o.seed;
    return cfg;
  }
  if (o.config.empty()) throw ConfigError("--config or --checkpoint is required");
  RunConfig cfg = RunConfig::load(o.config);
  apply_overrides(cfg, o);
  return cfg;
}

std::size_t required_divisor(const ModelConfig& m) {
  const ModelConfig r = m.resolved();
  return r.uses_backbone() ? r.backbone.total_stride() * r.effective_patch_size() : r.effective_patch_size();
}

Dataset load_data(const RunConfig& cfg) {
  const DataSpec& d = cfg.data;
  Dataset ds;
  if (d.source == "synthetic") {
    ds = gen_synthetic(d.classes, d.per_class, d.size, d.seed, d.channels, required_divisor(cfg.model), d.noise);
  } else if (d.source == "cifar10") {
    ds = load_cifar10(d.path, d.split);
  } else {
    ds = load_sgt_directory(d.path);
  }
  if (ds.images.empty()) throw ConfigError("dataset is empty (data.source = " + d.source + ")");
  const ModelConfig& m = cfg.model;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Image& img = ds.images[i];
    if (img.channels() != m.in_channels || img.height() != m.image_height || img.width() != m.image_width) {
      throw ConfigError("image " + std::to_string(i) + " has shape " + shape_string(img.data.shape()) +
                        ", model expects [" + std::to_string(m.in_channels) + " x " + std::to_string(m.image_height) +
                        " x " + std::to_string(m.image_width) + "]");
    }
    if (img.label && static_cast<std::size_t>(*img.label) >= m.num_classes) {
      throw ConfigError("image " + std::to_string(i) + " has label " + std::to_string(*img.label) +
                        " but the model has " + std::to_string(m.num_classes) + " classes");
    }
  }
  return ds;
}

std::unique_ptr<SagVitModel> build_model(const RunConfig& cfg, const std::optional<Checkpoint>& ck) {
  auto model = std::make_unique<SagVitModel>(cfg.model, cfg.seed);
  if (ck) apply_checkpoint(*model, *ck);
  return model;
}

fs::path make_run_dir(const fs::path& out, std::uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  const std::string base = std::string("run_") + stamp + "_seed" + std::to_string(seed);
  fs::path dir = out / base;
  for (int i = 1; fs::exists(dir); ++i) dir = out / (base + "_" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const CommonOptions& o, std::optional<double> epochs) {
  RunConfig cfg = resolve_config(o, nullptr);
  if (epochs) {
    cfg.optim.total_epochs = *epochs;
    cfg.optim.warmup_epochs = std::min(cfg.optim.warmup_epochs, *epochs);
    cfg.validate();
  }
  const Dataset ds = load_data(cfg);
  SagVitModel model(cfg.model, cfg.seed);
  const fs::path dir = make_run_dir(o.out, cfg.seed);
  const std::string config_text = cfg.to_toml();
  {
    std::ofstream(dir / "config.toml") << config_text;
  }
  const fs::path metrics = dir / "metrics.csv";
  write_metrics_csv(metrics, {});

  TrainOptions opts;
  opts.seed = cfg.seed;
  opts.threads = cfg.threads;
  opts.target_macro_f1 = cfg.target_macro_f1;
  opts.on_epoch = [&](const MetricsReport& r) {
    append_metrics_row(metrics, r);
    std::printf("epoch %zu loss %.6f macro_f1 %.4f lr %.6g %.1f img/s\n", r.epoch, r.loss, r.macro_f1, r.lr,
                r.throughput);
    std::fflush(stdout);
  };
  const TrainResult result = train_loop(model, ds.images, cfg.optim, opts);

  write_checkpoint(dir / "checkpoint_last.sgtc", make_checkpoint(model, config_text));
  auto& params = model.parameters().parameters();
  for (std::size_t p = 0; p < params.size(); ++p) params[p].tensor.values() = result.state.best_parameters[p];
  write_checkpoint(dir / "checkpoint_best.sgtc", make_checkpoint(model, config_text));

  std::printf("run directory: %s\n", dir.string().c_str());
  std::printf("best macro_f1 %.6f at epoch %zu\n", result.state.best_macro_f1, result.state.best_epoch);
  return 0;
}

int cmd_eval(const CommonOptions& o, std::size_t batch, const std::string& json_name, const std::string& baseline) {
  if (o.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  std::optional<Checkpoint> ck;
  const RunConfig cfg = resolve_config(o, &ck);
  const Dataset ds = load_data(cfg);
  const auto model = build_model(cfg, ck);

  const std::vector<int> preds = predict(*model, ds.images);
  std::vector<int> labels;
  for (const Image& img : ds.images) labels.push_back(label_of(img));
  MetricsReport r;
  r.loss = dataset_loss(*model, ds.images);
  r.macro_f1 = macro_f1(preds, labels, cfg.model.num_classes);
  r.micro_f1 = micro_f1(preds, labels, cfg.model.num_classes);
  r.accuracy = accuracy(preds, labels);
  r.throughput = measure_throughput(*model, ds.images, std::min(batch, ds.images.size()), 0);

  std::printf("images %zu\nloss %.17g\nmacro_f1 %.17g\nmicro_f1 %.17g\naccuracy %.17g\nthroughput %.17g\n",
              ds.images.size(), r.loss, r.macro_f1, r.micro_f1, r.accuracy, r.throughput);

  nlohmann::json j;
  j["images"] = ds.images.size();
  j["loss"] = r.loss;
  j["macro_f1"] = r.macro_f1;
  j["micro_f1"] = r.micro_f1;
  j["accuracy"] = r.accuracy;
  j["throughput"] = r.throughput;
  j["checkpoint"] = o.checkpoint;
  // Macro-F1 gain over another run's eval report.
  if (!baseline.empty()) {
    std::ifstream in(baseline);
    if (!in) throw ConfigError("cannot read baseline report " + baseline);
    nlohmann::json b;
    try {
      in >> b;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("baseline report " + baseline + ": " + e.what());
    }
    if (!b.contains("macro_f1") || !b["macro_f1"].is_number()) {
      throw ConfigError("baseline report " + baseline + " has no numeric macro_f1");
    }
    const double delta = r.macro_f1 - b["macro_f1"].get<double>();
    std::printf("delta_macro_f1 %.17g\n", delta);
    j["baseline"] = baseline;
    j["delta_macro_f1"] = delta;
  }
  fs::create_directories(o.out);
  std::ofstream(fs::path(o.out) / json_name) << j.dump(2) << '\n';
  return 0;
}

int cmd_inspect(const CommonOptions& o, const std::string& image_path, std::size_t index) {
  std::optional<Checkpoint> ck;
  const RunConfig cfg = resolve_config(o, &ck);
  const auto model = build_model(cfg, ck);
  Image image;
  if (!image_path.empty()) {
    image.data = read_sgt(image_path);
    if (image.data.rank() != 3) throw ConfigError("--image must hold a rank-3 [C x H x W] tensor");
  } else {
    const Dataset ds = load_data(cfg);
    if (index >= ds.images.size()) {
      throw ConfigError("--index " + std::to_string(index) + " out of range for " +
                        std::to_string(ds.images.size()) + " images");
    }
    image = ds.images[index];
  }
  const ForwardResult fr = forward_full(*model, image);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_adjacency_csv(dir / "adjacency.csv", fr.trace.graph);
  write_edge_tsv(dir / "edges.tsv", fr.trace.graph);
  write_attention_tsv(dir / "attention.tsv", fr.trace.gat);
  write_correlation_csv(dir / "correlation.csv", token_correlation(fr.trace.tokens));
  write_sgt(dir / "embedding.sgt", fr.trace.pooled);
  std::printf("nodes %zu edges %zu predicted %d\n", fr.trace.graph.num_nodes, fr.trace.graph.edges.size(),
              argmax(fr.probs));
  return 0;
}

int cmd_landscape(const CommonOptions& o, std::size_t grid, double radius, std::size_t batch) {
  if (grid % 2 == 0) throw ConfigError("--grid must be odd so the centre cell is the checkpoint, got " + std::to_string(grid));
  std::optional<Checkpoint> ck;
  const RunConfig cfg = resolve_config(o, &ck);
  const Dataset ds = load_data(cfg);
  const auto model = build_model(cfg, ck);
  const std::span<const Image> images(ds.images.data(), std::min(batch, ds.images.size()));
  const double centre = dataset_loss(*model, images);
  const Tensor surface = loss_landscape_scan(*model, images, grid, radius, cfg.seed);
  fs::create_directories(o.out);
  write_landscape_csv(fs::path(o.out) / "landscape.csv", surface);
  std::printf("checkpoint loss %.17g\ncentre cell %.17g\n", centre, surface.at(grid / 2, grid / 2));
  return 0;
}

int cmd_gen_data(const CommonOptions& o) {
  const RunConfig cfg = resolve_config(o, nullptr);
  if (cfg.data.source != "synthetic") throw ConfigError("gen-data: data.source must be synthetic");
  const Dataset ds = load_data(cfg);
  save_sgt_directory(o.out, ds);
  std::printf("wrote %zu images in %zu classes to %s\n", ds.images.size(), ds.classes, o.out.c_str());
  return 0;
}

int cmd_stats(const CommonOptions& o) {
  std::optional<Checkpoint> ck;
  const RunConfig cfg = resolve_config(o, &ck);
  const auto model = build_model(cfg, ck);
  const ModelStats s = model_stats(*model);
  std::printf("ablation %s\nparams %zu (%.4f M)\nflops %.0f (%.4f G)\n", to_string(cfg.model.ablation).c_str(),
              s.param_count, s.param_count_millions, s.flops, s.flops_giga);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-attention vision transformer: training and diagnostics"};
  app.require_subcommand(1);
  CommonOptions opts;

  auto* train = app.add_subcommand("train", "Train a model and write a run directory");
  add_common(train, opts);
  std::optional<double> epochs;
  train->add_option("--epochs", epochs, "Overrides optim.epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, opts);
  std::size_t eval_batch = 32;
  std::string json_name = "eval.json";
  eval->add_option("--batch", eval_batch, "Batch size for throughput timing");
  eval->add_option("--json", json_name, "Report file name inside --out");
  std::string baseline;
  eval->add_option("--baseline", baseline, "Eval JSON of a baseline run; adds delta_macro_f1");

  auto* inspect = app.add_subcommand("inspect", "Export graph, attention and token diagnostics for one image");
  add_common(inspect, opts);
  std::string image_path;
  std::size_t index = 0;
  inspect->add_option("--image", image_path, "Rank-3 SGT image");
  inspect->add_option("--index", index, "Dataset image index when --image is absent");

  auto* landscape = app.add_subcommand("landscape", "Scan the loss along two random directions");
  add_common(landscape, opts);
  std::size_t grid = 11, batch = 16;
  double radius = 1.0;
  landscape->add_option("--grid", grid, "Odd grid size");
  landscape->add_option("--radius", radius, "Scan half-width");
  landscape->add_option("--batch", batch, "Images in the evaluation batch");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as an SGT directory");
  add_common(gen, opts);

  auto* stats = app.add_subcommand("stats", "Print parameter and FLOP counts");
  add_common(stats, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(opts, epochs);
    if (*eval) return cmd_eval(opts, eval_batch, json_name, baseline);
    if (*inspect) return cmd_inspect(opts, image_path, index);
    if (*landscape) return cmd_landscape(opts, grid, radius, batch);
    if (*gen) return cmd_gen_data(opts);
    if (*stats) return cmd_stats(opts);
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNonFinite;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "shape error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
