#pragma once

#include <random>
#include <string>
#include <vector>

#include "odgs/backward.hpp"
#include "odgs/metrics.hpp"
#include "odgs/rasterizer.hpp"

namespace odgs {

/// Finite-difference verification of the analytic backward pass through the
/// full pipeline: projection, compositing, and photometric loss. Each
/// parameter group is perturbed coordinate by coordinate and the central
/// difference is compared against the analytic gradient.
struct GradcheckConfig {
  unsigned seed = 1;
  int scenes = 20;
  int max_gaussians = 10;
  int width = 64;
  int height = 32;
  double lambda_ssim = 0.2;
  double tolerance = 1e-3;
  double step = 1e-4;
  /// When in [0, 11], the matching term of the projected-covariance
  /// chain rule has its sign flipped; the check is then expected to fail.
  int mutate_term = -1;
};

struct GradcheckReport {
  struct Group {
    std::string name;
    double max_rel = 0;
  };
  std::vector<Group> groups;
  double worst = 0;
  int scenes = 0;
  bool pass = false;
};

namespace detail {

/// Scenes the finite differences can trust: gaussians away from the seam,
/// poles, and camera, translucent enough that no pixel saturates. Positions
/// are drawn in the camera frame (where the guards are meaningful) and
/// mapped back to world coordinates.
inline GaussianCloud<double> gradcheck_cloud(std::mt19937& rng, int n,
                                             const CameraPose<double>& camera) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  GaussianCloud<double> cloud;
  cloud.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double azimuth = 2.8 * (2 * uni(rng) - 1);
    const double elevation = 1.3 * (2 * uni(rng) - 1);
    const double depth = 0.8 + 9.2 * uni(rng);
    const double cos_el = std::cos(elevation);
    const Vec3<double> in_camera(depth * cos_el * std::sin(azimuth),
                                 -depth * std::sin(elevation),
                                 depth * cos_el * std::cos(azimuth));
    cloud.means.row(i) =
        (camera.rotation.transpose() * (in_camera - camera.translation))
            .transpose();
    for (int c = 0; c < 3; ++c)
      cloud.log_scales(i, c) = std::log(depth * (0.02 + 0.10 * uni(rng)));
    Eigen::RowVector4d q;
    for (int c = 0; c < 4; ++c) q[c] = normal(rng);
    cloud.rotations.row(i) = q / q.norm();
    cloud.raw_opacities[i] = logit(0.1 + 0.6 * uni(rng));
    for (int c = 0; c < 3; ++c) cloud.colors(i, c) = uni(rng);
  }
  return cloud;
}

}  // namespace detail

inline GradcheckReport run_gradcheck(const GradcheckConfig& cfg = {}) {
  RenderSettings<double> settings;
  settings.threads = 1;
  // A wide footprint keeps the instance set stable under perturbations, so
  // the loss stays smooth at the finite-difference scale.
  settings.cutoff_sigma = 8;

  GradTSigns signs;
  if (cfg.mutate_term >= 0 && cfg.mutate_term < 12)
    signs.sign[static_cast<std::size_t>(cfg.mutate_term)] = -1;

  // A camera with pitch and roll, so every entry of the projected-
  // covariance chain influences gradients some world axis depends on.
  CameraPose<double> camera;
  camera.rotation =
      Eigen::AngleAxisd(0.8, Vec3<double>(1, 2, 3).normalized())
          .toRotationMatrix();
  camera.translation << 0.1, -0.2, 0.15;
  camera.width = cfg.width;
  camera.height = cfg.height;

  GradcheckReport report;
  report.groups = {{"means", 0},         {"rotations", 0}, {"log_scales", 0},
                   {"raw_opacities", 0}, {"colors", 0}};

  std::mt19937 rng(cfg.seed);
  std::uniform_int_distribution<int> size_dist(3, cfg.max_gaussians);
  while (report.scenes < cfg.scenes) {
    GaussianCloud<double> cloud =
        detail::gradcheck_cloud(rng, size_dist(rng), camera);
    const ErpImage<double> target =
        render(detail::gradcheck_cloud(rng, size_dist(rng), camera), camera,
               settings)
            .image;

    // Heavily occluded pixels make the compositing weights, and hence the
    // finite differences, ill-conditioned; draw a fresh scene instead.
    const auto probe = render(cloud, camera, settings);
    if (probe.transmittance.minCoeff() < 1e-2) continue;
    ++report.scenes;

    const auto loss =
        photometric_loss(probe.image, target, cfg.lambda_ssim);
    const auto analytic =
        backward(cloud, camera, probe, loss.gradient, settings, &signs);

    const auto loss_at = [&](const GaussianCloud<double>& c) {
      return photometric_loss(render(c, camera, settings).image, target,
                              cfg.lambda_ssim)
          .loss;
    };
    const auto fd = [&](double& param) {
      const double saved = param;
      const double h = cfg.step * std::max(1.0, std::abs(saved));
      param = saved + h;
      const double up = loss_at(cloud);
      param = saved - h;
      const double down = loss_at(cloud);
      param = saved;
      return (up - down) / (2 * h);
    };

    const auto check_group = [&](GradcheckReport::Group& group, auto& params,
                                 const auto& grads) {
      double max_diff = 0, max_scale = 1e-12;
      for (Eigen::Index i = 0; i < params.rows(); ++i)
        for (Eigen::Index c = 0; c < params.cols(); ++c) {
          const double numeric = fd(params(i, c));
          max_diff = std::max(max_diff, std::abs(numeric - grads(i, c)));
          max_scale = std::max({max_scale, std::abs(numeric),
                                std::abs(grads(i, c))});
        }
      group.max_rel = std::max(group.max_rel, max_diff / max_scale);
    };

    check_group(report.groups[0], cloud.means, analytic.means);
    check_group(report.groups[1], cloud.rotations, analytic.rotations);
    check_group(report.groups[2], cloud.log_scales, analytic.log_scales);
    check_group(report.groups[3], cloud.raw_opacities, analytic.raw_opacities);
    check_group(report.groups[4], cloud.colors, analytic.colors);
  }

  for (const auto& group : report.groups)
    report.worst = std::max(report.worst, group.max_rel);
  report.pass = report.worst < cfg.tolerance;
  return report;
}

}  // namespace odgs
