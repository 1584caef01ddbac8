#pragma once

#include <filesystem>
#include <random>
#include <vector>

#include "odgs/io.hpp"
#include "odgs/optimizer.hpp"
#include "odgs/png_io.hpp"

namespace odgs {

/// Deterministic synthetic scene: a ground-truth cloud of large, soft
/// gaussians around the origin, panoramic cameras at the origin, and an
/// initialization point cloud sampled from the ground-truth surfaces (the
/// shape a sparse reconstruction would hand us).
struct SynthConfig {
  unsigned seed = 2024;
  int gaussians = 50;
  int init_points = 200;
  int width = 256;
  int height = 128;
  int views = 4;

  void validate() const {
    if (gaussians < 1 || init_points < 1 || views < 1)
      throw std::invalid_argument("SynthConfig: counts must be positive");
    if (width != 2 * height || height < 16)
      throw std::invalid_argument("SynthConfig: need width == 2 * height >= 32");
  }
};

struct SynthScene {
  GaussianCloud<double> ground_truth;
  std::vector<TrainView<double>> views;
  PointCloud init_points;
};

/// Camera at the origin rotated about the vertical axis so its forward
/// direction points at world azimuth `yaw`.
inline CameraPose<double> yaw_camera(double yaw, int width, int height) {
  CameraPose<double> camera;
  const double c = std::cos(yaw), s = std::sin(yaw);
  camera.rotation << c, 0, -s, 0, 1, 0, s, 0, c;
  camera.translation.setZero();
  camera.width = width;
  camera.height = height;
  return camera;
}

inline SynthScene make_synth_scene(const SynthConfig& cfg = {},
                                   const RenderSettings<double>& settings = {}) {
  cfg.validate();
  std::mt19937 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthScene scene;
  auto& gt = scene.ground_truth;
  gt.resize(cfg.gaussians);
  for (Eigen::Index i = 0; i < cfg.gaussians; ++i) {
    // Direction kept away from the poles, depth in a mid-range shell.
    const double azimuth = (2 * uni(rng) - 1) * pi_v<double>;
    const double elevation = (2 * uni(rng) - 1) * 1.0;
    const double depth = 2.0 + 4.0 * uni(rng);
    const double cos_el = std::cos(elevation);
    gt.means.row(i) << depth * cos_el * std::sin(azimuth),
        -depth * std::sin(elevation), depth * cos_el * std::cos(azimuth);

    // Size proportional to depth so every blob has a similar footprint.
    for (int c = 0; c < 3; ++c)
      gt.log_scales(i, c) = std::log(depth * (0.08 + 0.10 * uni(rng)));

    Eigen::RowVector4d q;
    for (int c = 0; c < 4; ++c) q[c] = normal(rng);
    gt.rotations.row(i) = q / q.norm();

    gt.raw_opacities[i] = logit(0.5 + 0.4 * uni(rng));
    for (int c = 0; c < 3; ++c) gt.colors(i, c) = 0.1 + 0.9 * uni(rng);
  }

  for (int v = 0; v < cfg.views; ++v) {
    TrainView<double> view;
    view.camera =
        yaw_camera(2 * pi_v<double> * v / cfg.views, cfg.width, cfg.height);
    view.target = render(gt, view.camera, settings).image;
    scene.views.push_back(std::move(view));
  }

  // Surface samples: points drawn from the ground-truth gaussians, colored
  // like their parents with a little noise.
  auto& points = scene.init_points;
  points.positions.resize(cfg.init_points, 3);
  points.colors.resize(cfg.init_points, 3);
  std::uniform_int_distribution<Eigen::Index> pick(0, cfg.gaussians - 1);
  for (Eigen::Index i = 0; i < cfg.init_points; ++i) {
    const Eigen::Index g = pick(rng);
    Vec3<double> local;
    for (int c = 0; c < 3; ++c) local[c] = normal(rng);
    const Mat3<double> rot =
        rotation_from_quaternion<double>(gt.rotations.row(g).transpose());
    const Vec3<double> offset =
        rot * (gt.scale(g).array() * local.array()).matrix();
    points.positions.row(i) = gt.means.row(g) + offset.transpose();
    for (int c = 0; c < 3; ++c)
      points.colors(i, c) =
          std::clamp(gt.colors(g, c) + 0.1 * (uni(rng) - 0.5), 0.0, 1.0);
  }
  return scene;
}

/// Writes a scene to disk in the formats the trainer consumes: one PNG per
/// view, the initialization points, and a manifest tying them together.
inline void write_synth_scene(const SynthScene& scene,
                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SceneManifest manifest;
  manifest.pointcloud_path = dir / "init_points.ply";
  save_pointcloud(scene.init_points, manifest.pointcloud_path);

  for (std::size_t v = 0; v < scene.views.size(); ++v) {
    ManifestView entry;
    entry.image_path = dir / ("view_" + std::to_string(v) + ".png");
    entry.camera = scene.views[v].camera;
    ErpImage<float> pixels;
    for (int c = 0; c < 3; ++c)
      pixels.channel[c] = scene.views[v].target.channel[c].cast<float>();
    write_png(pixels, entry.image_path);
    manifest.views.push_back(std::move(entry));
  }
  save_manifest(manifest, dir / "scene.txt");
}

}  // namespace odgs
