// floodgen command line: training, single-image and batch flooding, HTTP service.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "floodgen/image_io.hpp"
#include "floodgen/inference.hpp"
#include "floodgen/service.hpp"
#include "floodgen/trainer.hpp"

namespace fg = floodgen;
namespace fs = std::filesystem;

namespace {

struct TrainArgs {
  fs::path config, data, out;
  std::optional<fs::path> resume;
};

struct DepthArgs {
  std::optional<fs::path> model;
  bool metric = false;

  std::shared_ptr<fg::DepthProvider> make() const {
    if (!model) return nullptr;
    return std::make_shared<fg::TorchScriptDepthProvider>(*model, metric);
  }
};

void add_depth_options(CLI::App* cmd, DepthArgs& depth) {
  cmd->add_option("--depth-model", depth.model, "TorchScript depth network (default: ground-plane prior)")
      ->check(CLI::ExistingFile);
  cmd->add_flag("--depth-metric", depth.metric, "the depth network outputs meters");
}

int run_train(const TrainArgs& args, bool height) {
  auto config = fg::apply_env_overrides(fg::TrainConfig::load(args.config));
  fg::IndexConfig ic;
  if (height) {
    ic.require_real = false;
    ic.require_sim = true;
  }
  const auto index = fg::build_index(args.data, ic);
  fg::TrainOptions options;
  options.out_dir = args.out;
  options.resume = args.resume;
  options.on_step = [&](long step, const fg::LossReport& report) {
    if (step % 100 == 0 || step == config.total_steps) {
      std::cerr << "step " << step << " total " << report.total << "\n";
    }
  };
  const auto result = height ? fg::train_height(config, index, options) : fg::train(config, index, options);
  std::cout << nlohmann::json{{"final_checkpoint", result.final_checkpoint.string()}, {"steps", result.steps}}.dump()
            << "\n";
  return 0;
}

struct FloodArgs {
  fs::path image, ckpt, out;
  std::optional<double> level_m, fraction;
  std::optional<std::uint64_t> style_seed;
  std::optional<fs::path> detections, style_reference;
  bool emit_mask = false;
  bool raw = false;
  int model_side = 0;
  DepthArgs depth;
};

int run_flood(const FloodArgs& args) {
  fg::InferenceConfig ic;
  ic.composite = !args.raw;
  ic.model_side = args.model_side;
  const auto flooder = fg::Flooder::from_checkpoint(args.ckpt, args.depth.make(), nullptr, ic);

  fg::FloodRequest request;
  request.flood_level_m = args.level_m;
  request.flood_fraction = args.fraction;
  request.style_seed = args.style_seed;
  request.return_mask = args.emit_mask;
  if (args.style_reference) request.style_reference = fg::load_image(*args.style_reference);

  if (fs::is_directory(args.image)) {
    const auto summary = fg::flood_batch(args.image, args.out, request, flooder, args.emit_mask);
    std::cout << summary.to_json().dump(2) << "\n";
    return summary.failed == 0 ? 0 : 1;
  }

  request.image = fg::load_image(args.image);
  if (args.detections) request.detections = fg::load_detections(*args.detections);
  const auto result = flooder.flood(request);
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  fg::save_image(args.out, result.flooded);
  if (args.emit_mask) {
    auto mask_path = args.out;
    mask_path.replace_filename(args.out.stem().string() + "_mask.png");
    fg::save_mask(mask_path, result.mask);
  }
  std::cout << result.diagnostics.dump(2) << "\n";
  return 0;
}

struct ServeArgs {
  std::optional<fs::path> ckpt;
  std::optional<int> port;
  std::string host = "0.0.0.0";
  int workers = 2;
  int fetch_side = 256;
  long cache_ttl_s = 3600;
  bool no_streetview = false;
  DepthArgs depth;
};

int run_serve(ServeArgs args) {
  if (!args.ckpt) {
    if (const char* env = std::getenv("FLOODGEN_CKPT"); env && *env) args.ckpt = env;
    else throw fg::InvalidConfig("no checkpoint: pass --ckpt or set FLOODGEN_CKPT");
  }
  if (!args.port) {
    const char* env = std::getenv("FLOODGEN_PORT");
    try {
      args.port = env && *env ? std::stoi(env) : 8080;
    } catch (const std::exception&) {
      throw fg::InvalidConfig(std::string("FLOODGEN_PORT is not a port number: ") + env);
    }
  }

  std::shared_ptr<fg::StreetViewClient> streetview;
  if (!args.no_streetview) {
    std::shared_ptr<fg::StreetViewClient> live = fg::LiveStreetViewClient::from_env();
    streetview = std::make_shared<fg::CachingStreetViewClient>(live, std::chrono::seconds(args.cache_ttl_s));
  }

  fg::ServiceConfig config;
  config.host = args.host;
  config.port = *args.port;
  config.workers = args.workers;
  config.fetch_side = args.fetch_side;
  fg::FloodService service(config, streetview);

  const auto ckpt = *args.ckpt;
  const auto depth = args.depth;
  service.load_async([ckpt, depth] {
    return std::make_shared<const fg::Flooder>(fg::Flooder::from_checkpoint(ckpt, depth.make()));
  }, fg::sha256_file(ckpt));
  std::cerr << "listening on " << config.host << ":" << config.port << "\n";
  if (!service.listen()) {
    std::cerr << "error: cannot listen on port " << config.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flood image generation for street-level photos"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto add_train = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("--config", train_args.config, "training config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", train_args.data, "dataset root")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--out", train_args.out, "output directory")->required();
    cmd->add_option("--resume", train_args.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
    return cmd;
  };
  auto* train_cmd = add_train("train", "train the translation model");
  auto* height_cmd = add_train("train-height", "train the height estimator on simulated captures");

  FloodArgs flood_args;
  auto* flood_cmd = app.add_subcommand("flood", "flood one image, or every image in a directory");
  flood_cmd->add_option("--image", flood_args.image, "input image or directory")->required()->check(CLI::ExistingPath);
  auto* level = flood_cmd->add_option("--level-m", flood_args.level_m, "flood level in meters");
  auto* fraction = flood_cmd->add_option("--fraction", flood_args.fraction, "fraction of pixels to flood")
                       ->check(CLI::Range(0.0, 1.0));
  level->excludes(fraction);
  flood_cmd->add_option("--style-seed", flood_args.style_seed, "seed for the water style");
  flood_cmd->add_option("--style-reference", flood_args.style_reference, "flooded exemplar to copy the style from")
      ->check(CLI::ExistingFile);
  flood_cmd->add_option("--detections", flood_args.detections, "reference-object detections JSON")
      ->check(CLI::ExistingFile);
  flood_cmd->add_option("--ckpt", flood_args.ckpt, "model checkpoint")->required();
  flood_cmd->add_option("--out", flood_args.out, "output PNG (or directory in batch mode)")->required();
  flood_cmd->add_flag("--emit-mask", flood_args.emit_mask, "also write <out>_mask.png");
  flood_cmd->add_flag("--raw", flood_args.raw, "whole translated image, no compositing");
  flood_cmd->add_option("--model-side", flood_args.model_side, "longest side fed to the networks (0 = native)")
      ->check(CLI::NonNegativeNumber);
  add_depth_options(flood_cmd, flood_args.depth);

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP API");
  serve_cmd->add_option("--ckpt", serve_args.ckpt, "model checkpoint (or FLOODGEN_CKPT)");
  serve_cmd->add_option("--port", serve_args.port, "port (or FLOODGEN_PORT, default 8080)");
  serve_cmd->add_option("--host", serve_args.host, "bind address");
  serve_cmd->add_option("--workers", serve_args.workers, "concurrent model runs")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--fetch-side", serve_args.fetch_side, "square size fetched imagery is resized to");
  serve_cmd->add_option("--cache-ttl", serve_args.cache_ttl_s, "street view cache lifetime in seconds");
  serve_cmd->add_flag("--no-streetview", serve_args.no_streetview, "disable address lookups");
  add_depth_options(serve_cmd, serve_args.depth);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_args, false);
    if (*height_cmd) return run_train(train_args, true);
    if (*flood_cmd) return run_flood(flood_args);
    if (*serve_cmd) return run_serve(serve_args);
  } catch (const fg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
