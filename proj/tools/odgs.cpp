// Command-line front end: scene synthesis, training, rendering, metric
// evaluation, and gradient verification over the file formats in odgs/io.
//
// Exit codes: 0 on success, 1 when a verification or optimization run
// fails its contract, 2 for usage and file errors.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "odgs/gradcheck.hpp"
#include "odgs/io.hpp"
#include "odgs/metrics.hpp"
#include "odgs/optimizer.hpp"
#include "odgs/png_io.hpp"
#include "odgs/synth.hpp"

namespace {

using namespace odgs;
namespace fs = std::filesystem;

ErpImage<double> load_target(const fs::path& path) {
  const ErpImage<float> pixels = read_png(path);
  ErpImage<double> out;
  for (int c = 0; c < 3; ++c) out.channel[c] = pixels.channel[c].cast<double>();
  return out;
}

void write_image(const ErpImage<double>& image, const fs::path& path) {
  ErpImage<float> pixels;
  for (int c = 0; c < 3; ++c) pixels.channel[c] = image.channel[c].cast<float>();
  write_png(pixels, path);
}

/// Optional JSON config for the trainer; command-line flags win over file
/// values, so the file only provides what the caller did not specify.
void apply_config_file(const fs::path& path, const CLI::App& cmd,
                       TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config");
  nlohmann::json json;
  in >> json;

  const auto take = [&](const char* key, const char* flag, auto& into) {
    if (json.contains(key) && cmd.get_option(flag)->count() == 0)
      into = json.at(key).get<std::decay_t<decltype(into)>>();
  };
  take("iterations", "--iterations", cfg.iterations);
  take("densify_until_iter", "--densify-until", cfg.densify.densify_until);
  take("percent_dense", "--percent-dense", cfg.densify.percent_dense);
  take("densify_grad_threshold_min", "--grad-threshold-min",
       cfg.densify.grad_threshold_min);
  take("densify_grad_threshold_max", "--grad-threshold-max",
       cfg.densify.grad_threshold_max);
  take("lambda_ssim", "--lambda-ssim", cfg.lambda_ssim);

  static const std::set<std::string> known = {
      "iterations",
      "densify_until_iter",
      "percent_dense",
      "densify_grad_threshold_min",
      "densify_grad_threshold_max",
      "lambda_ssim"};
  for (const auto& [key, value] : json.items())
    if (!known.count(key))
      throw std::runtime_error(path.string() + ": unknown config key '" + key +
                               "'");
}

struct SceneOnDisk {
  std::vector<TrainView<double>> train;
  std::vector<TrainView<double>> test;
  SceneManifest manifest;
};

SceneOnDisk load_scene(const fs::path& manifest_path) {
  SceneOnDisk scene;
  scene.manifest = load_manifest(manifest_path);
  for (const auto& view : scene.manifest.views) {
    TrainView<double> loaded;
    loaded.camera = view.camera;
    loaded.target = load_target(view.image_path);
    if (loaded.target.height() != view.camera.height ||
        loaded.target.width() != view.camera.width)
      throw std::runtime_error(view.image_path.string() +
                               ": image size disagrees with the manifest");
    (view.is_test ? scene.test : scene.train).push_back(std::move(loaded));
  }
  return scene;
}

int run_train(const CLI::App& cmd, const fs::path& scene_path,
              const fs::path& out_dir, const fs::path& config_path,
              TrainConfig cfg, RenderSettings<double> settings) {
  if (!config_path.empty()) apply_config_file(config_path, cmd, cfg);
  cfg.validate();

  const SceneOnDisk scene = load_scene(scene_path);
  if (scene.train.empty())
    throw std::runtime_error("train: manifest has no training views");
  if (scene.manifest.pointcloud_path.empty())
    throw std::runtime_error("train: manifest names no point cloud");

  const PointCloud points = load_pointcloud(scene.manifest.pointcloud_path);
  GaussianCloud<double> cloud = init_from_points(points);
  const double extent = scene_extent(cloud.means);
  std::printf("train: %d views, %d init points, extent %.3f\n",
              (int)scene.train.size(), (int)cloud.size(), extent);

  fs::create_directories(out_dir);
  TrainState<double> state;
  state.init(cloud.size());

  const auto checkpoint = [&](std::int64_t iteration,
                              const GaussianCloud<double>& snapshot) {
    save_checkpoint(snapshot, out_dir / ("checkpoint_" +
                                         std::to_string(iteration) + ".ply"));
  };

  std::function<void(std::int64_t, const GaussianCloud<double>&)> cadence;
  if (cfg.checkpoint_interval > 0) cadence = checkpoint;

  TrainResult<double> result;
  try {
    result = train(cloud, state, scene.train, cfg, settings, extent, cadence);
  } catch (const std::exception& e) {
    // Preserve the state that produced the failure before giving up.
    save_checkpoint(cloud, out_dir / "emergency.ply");
    std::fprintf(stderr, "train: %s (state in %s)\n", e.what(),
                 (out_dir / "emergency.ply").c_str());
    return 1;
  }

  save_checkpoint(cloud, out_dir / "checkpoint_final.ply");
  std::ofstream log(out_dir / "log.csv");
  log << "iteration,seconds,loss,gaussians\n";
  log.precision(10);
  for (const auto& row : result.log)
    log << row.iteration << "," << row.seconds << "," << row.loss << ","
        << row.gaussians << "\n";

  const auto& last = result.log.back();
  std::printf("train: %s at iteration %lld, loss %.6f, %lld gaussians\n",
              result.stopped_by_clock ? "wall-clock stop" : "finished",
              (long long)last.iteration, (double)last.loss,
              (long long)last.gaussians);
  return 0;
}

int run_render(const fs::path& checkpoint_path, const fs::path& scene_path,
               const fs::path& out_dir, RenderSettings<double> settings) {
  const GaussianCloud<double> cloud = load_checkpoint(checkpoint_path);
  const SceneManifest manifest = load_manifest(scene_path);
  fs::create_directories(out_dir);
  for (std::size_t v = 0; v < manifest.views.size(); ++v) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = render(cloud, manifest.views[v].camera, settings);
    const double seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t0)
                               .count();
    const fs::path path = out_dir / ("render_" + std::to_string(v) + ".png");
    write_image(out.image, path);
    std::printf("render: %s  %.3fs\n", path.c_str(), seconds);
  }
  return 0;
}

int run_eval(const fs::path& checkpoint_path, const fs::path& scene_path,
             const std::string& split, const fs::path& out_csv,
             RenderSettings<double> settings) {
  const GaussianCloud<double> cloud = load_checkpoint(checkpoint_path);
  const SceneOnDisk scene = load_scene(scene_path);

  std::vector<const TrainView<double>*> views;
  if (split == "train" || split == "all")
    for (const auto& view : scene.train) views.push_back(&view);
  if (split == "test" || split == "all")
    for (const auto& view : scene.test) views.push_back(&view);
  if (views.empty())
    throw std::runtime_error("eval: no views in split '" + split + "'");

  std::ostringstream csv;
  csv.precision(10);
  csv << "view,psnr,ssim\n";
  double psnr_sum = 0, ssim_sum = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto image = render(cloud, views[v]->camera, settings).image;
    const double p = psnr(image, views[v]->target);
    const double s = ssim(image, views[v]->target);
    psnr_sum += p;
    ssim_sum += s;
    csv << v << "," << p << "," << s << "\n";
  }
  csv << "mean," << psnr_sum / views.size() << "," << ssim_sum / views.size()
      << "\n";

  if (out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(out_csv);
    out << csv.str();
  }
  std::printf("eval: %zu views, mean psnr %.2f dB, mean ssim %.4f\n",
              views.size(), psnr_sum / views.size(), ssim_sum / views.size());
  return 0;
}

int run_gradcheck_cmd(const GradcheckConfig& cfg) {
  const GradcheckReport report = run_gradcheck(cfg);
  std::printf("%-14s %12s\n", "group", "max rel err");
  for (const auto& group : report.groups)
    std::printf("%-14s %12.3e\n", group.name.c_str(), group.max_rel);
  std::printf("gradcheck: %d scenes, worst %.3e, tolerance %.0e -> %s\n",
              report.scenes, report.worst, cfg.tolerance,
              report.pass ? "PASS" : "FAIL");
  return report.pass ? 0 : 1;
}

int run_synth(const fs::path& out_dir, const SynthConfig& cfg) {
  const SynthScene scene = make_synth_scene(cfg);
  write_synth_scene(scene, out_dir);
  save_checkpoint(scene.ground_truth, out_dir / "ground_truth.ply");
  std::printf("synth: %d gaussians, %d views, %d init points -> %s\n",
              cfg.gaussians, cfg.views, cfg.init_points, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Omnidirectional gaussian splatting trainer"};
  app.require_subcommand(1);

  RenderSettings<double> settings;
  const auto add_render_flags = [&settings](CLI::App* cmd) {
    cmd->add_option("--threads", settings.threads,
                    "Rasterizer threads (0 = hardware)");
    cmd->add_option("--tile-size", settings.tile_size, "Tile edge in pixels");
    cmd->add_option("--near", settings.near_radius, "Near culling radius");
    cmd->add_option("--far", settings.far_radius, "Far culling radius");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "Optimize a scene");
  fs::path scene_path, out_dir, config_path, checkpoint_path, out_csv;
  TrainConfig train_cfg;
  train_cmd->add_option("--scene", scene_path, "Scene manifest")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--config", config_path, "JSON config file");
  train_cmd->add_option("--iterations", train_cfg.iterations, "Total steps");
  train_cmd->add_option("--seed", train_cfg.seed, "Random seed");
  train_cmd->add_option("--max-minutes", train_cfg.max_minutes,
                        "Wall-clock budget (0 = none)");
  train_cmd->add_option("--lambda-ssim", train_cfg.lambda_ssim,
                        "Structural term weight in the loss");
  train_cmd->add_option("--checkpoint-interval", train_cfg.checkpoint_interval,
                        "Iterations between checkpoints (0 = final only)");
  train_cmd->add_option("--densify-until", train_cfg.densify.densify_until,
                        "Last iteration with density control");
  train_cmd->add_option("--percent-dense", train_cfg.densify.percent_dense,
                        "Clone/split size threshold as a fraction of extent");
  train_cmd->add_option("--grad-threshold-min",
                        train_cfg.densify.grad_threshold_min,
                        "Densify gradient threshold at the equator");
  train_cmd->add_option("--grad-threshold-max",
                        train_cfg.densify.grad_threshold_max,
                        "Densify gradient threshold at the poles");
  add_render_flags(train_cmd);

  // render
  auto* render_cmd = app.add_subcommand("render", "Render manifest views");
  render_cmd->add_option("--checkpoint", checkpoint_path, "Gaussian cloud")
      ->required();
  render_cmd->add_option("--scene", scene_path, "Scene manifest")->required();
  render_cmd->add_option("--out", out_dir, "Output directory")->required();
  add_render_flags(render_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Measure psnr/ssim per view");
  std::string split = "all";
  eval_cmd->add_option("--checkpoint", checkpoint_path, "Gaussian cloud")
      ->required();
  eval_cmd->add_option("--scene", scene_path, "Scene manifest")->required();
  eval_cmd->add_option("--split", split, "train, test, or all")
      ->check(CLI::IsMember({"train", "test", "all"}));
  eval_cmd->add_option("--out", out_csv, "CSV destination (default stdout)");
  add_render_flags(eval_cmd);

  // gradcheck
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Verify gradients by finite differences");
  GradcheckConfig gc_cfg;
  gradcheck_cmd->add_option("--seed", gc_cfg.seed, "Random seed");
  gradcheck_cmd->add_option("--scenes", gc_cfg.scenes, "Scenes to test");
  gradcheck_cmd->add_option("--max-gaussians", gc_cfg.max_gaussians,
                            "Largest scene size");
  gradcheck_cmd->add_option("--lambda-ssim", gc_cfg.lambda_ssim,
                            "Structural term weight in the loss");
  gradcheck_cmd->add_option("--tolerance", gc_cfg.tolerance,
                            "Relative error bound");
  gradcheck_cmd->add_option(
      "--mutate-term", gc_cfg.mutate_term,
      "Flip one sign (0-11) in the covariance chain; expects a FAIL");

  // synth
  auto* synth_cmd =
      app.add_subcommand("synth", "Write a synthetic scene to disk");
  SynthConfig synth_cfg;
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", synth_cfg.seed, "Random seed");
  synth_cmd->add_option("--gaussians", synth_cfg.gaussians,
                        "Ground-truth cloud size");
  synth_cmd->add_option("--points", synth_cfg.init_points,
                        "Initialization point count");
  synth_cmd->add_option("--views", synth_cfg.views, "Camera count");
  synth_cmd->add_option("--width", synth_cfg.width, "Panorama width");
  synth_cmd->add_option("--height", synth_cfg.height, "Panorama height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help exits cleanly
  }

  try {
    if (train_cmd->parsed())
      return run_train(*train_cmd, scene_path, out_dir, config_path, train_cfg,
                       settings);
    if (render_cmd->parsed())
      return run_render(checkpoint_path, scene_path, out_dir, settings);
    if (eval_cmd->parsed())
      return run_eval(checkpoint_path, scene_path, split, out_csv, settings);
    if (gradcheck_cmd->parsed()) return run_gradcheck_cmd(gc_cfg);
    if (synth_cmd->parsed()) return run_synth(out_dir, synth_cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "odgs: %s\n", e.what());
    return 2;
  }
  return 2;
}
