#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "odgs/backward.hpp"
#include "odgs/densify.hpp"
#include "odgs/metrics.hpp"
#include "odgs/rasterizer.hpp"
#include "odgs/types.hpp"

namespace odgs {

/// Optimization schedule. Per-group learning rates, with the mean rate
/// multiplied by the scene extent and decayed exponentially from its
/// initial to its final value over the run.
struct TrainConfig {
  std::int64_t iterations = 5000;
  double lr_means_init = 1.6e-4;   // x scene extent
  double lr_means_final = 1.6e-6;  // x scene extent
  double lr_rotation = 1e-3;
  double lr_scale = 5e-3;
  double lr_opacity = 0.05;
  double lr_color = 2.5e-3;
  double lambda_ssim = 0.2;
  DensifyConfig densify;
  std::int64_t checkpoint_interval = 0;  // 0: no periodic checkpoints
  double max_minutes = 0;                // 0: no wall-clock stop
  unsigned seed = 0;

  void validate() const {
    if (iterations < 0) throw std::invalid_argument("TrainConfig: negative iterations");
    for (double lr : {lr_means_init, lr_means_final, lr_rotation, lr_scale,
                      lr_opacity, lr_color})
      if (!(lr > 0)) throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (!(lambda_ssim >= 0) || !(lambda_ssim < 1))
      throw std::invalid_argument("TrainConfig: lambda_ssim outside [0, 1)");
    densify.validate();
  }
};

/// Radius of a bounding sphere of the points: the far spread of the
/// initialization, used to scale the mean learning rate and the
/// clone/split size boundary.
template <class Scalar>
inline Scalar scene_extent(const MatX3<Scalar>& points) {
  if (points.rows() == 0)
    throw std::invalid_argument("scene_extent: no points");
  const Eigen::Matrix<Scalar, 1, 3> centroid = points.colwise().mean();
  return std::sqrt(
      (points.rowwise() - centroid).rowwise().squaredNorm().maxCoeff());
}

/// Exponential (log-linear) interpolation from the initial to the final
/// mean learning rate across the run; constant afterwards.
template <class Scalar>
inline Scalar means_lr_at(std::int64_t iteration, const TrainConfig& cfg) {
  const Scalar lr0 = Scalar(cfg.lr_means_init);
  const Scalar lr1 = Scalar(cfg.lr_means_final);
  if (cfg.iterations <= 1) return lr1;
  const Scalar t = std::min(Scalar(1), Scalar(iteration) / Scalar(cfg.iterations - 1));
  return lr0 * std::pow(lr1 / lr0, t);
}

namespace detail {

/// One adaptive-moment update on a parameter block.
template <class Scalar, class Mat>
inline void adam_update(Mat& param, Mat& m, Mat& v, const Mat& grad,
                        Scalar lr, std::int64_t step) {
  const Scalar b1 = Scalar(0.9), b2 = Scalar(0.999), eps = Scalar(1e-15);
  m.array() = b1 * m.array() + (1 - b1) * grad.array();
  v.array() = b2 * v.array() + (1 - b2) * grad.array().square();
  const Scalar c1 = 1 - std::pow(b1, Scalar(step));
  const Scalar c2 = 1 - std::pow(b2, Scalar(step));
  param.array() -=
      lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace detail

template <class Scalar>
struct StepResult {
  Scalar loss = 0;
  DensifyStats densify;
  bool densified = false;
};

/// One optimization step against a single view: render, photometric loss,
/// analytic backward, adaptive-moment update per parameter group,
/// quaternion renormalization, then scheduled density control. Throws on a
/// non-finite loss so the caller can dump state before aborting.
template <class Scalar>
inline StepResult<Scalar> train_step(GaussianCloud<Scalar>& cloud,
                                     TrainState<Scalar>& state,
                                     const CameraPose<Scalar>& camera,
                                     const ErpImage<Scalar>& target,
                                     const TrainConfig& cfg,
                                     const RenderSettings<Scalar>& settings,
                                     Scalar extent, std::mt19937& rng) {
  const auto fwd = render(cloud, camera, settings);
  const auto loss = photometric_loss(fwd.image, target, Scalar(cfg.lambda_ssim));
  if (!std::isfinite(loss.loss))
    throw std::runtime_error("train_step: non-finite loss at iteration " +
                             std::to_string(state.iteration));
  const auto grads = backward(cloud, camera, fwd, loss.gradient, settings);

  // Accumulate the densification window before the parameters move.
  state.grad_accum += grads.pixel_grad_norm;
  state.elev_accum += grads.one_minus_cos;
  state.grad_count += grads.observed;

  const std::int64_t step = state.iteration + 1;
  detail::adam_update<Scalar>(cloud.means, state.means_m, state.means_v,
                              grads.means,
                              means_lr_at<Scalar>(state.iteration, cfg) * extent,
                              step);
  detail::adam_update<Scalar>(cloud.rotations, state.rot_m, state.rot_v,
                              grads.rotations, Scalar(cfg.lr_rotation), step);
  detail::adam_update<Scalar>(cloud.log_scales, state.scale_m, state.scale_v,
                              grads.log_scales, Scalar(cfg.lr_scale), step);
  detail::adam_update<Scalar>(cloud.raw_opacities, state.opac_m, state.opac_v,
                              grads.raw_opacities, Scalar(cfg.lr_opacity), step);
  detail::adam_update<Scalar>(cloud.colors, state.color_m, state.color_v,
                              grads.colors, Scalar(cfg.lr_color), step);

  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Scalar norm = cloud.rotations.row(i).norm();
    if (norm > Scalar(1e-12))
      cloud.rotations.row(i) /= norm;
    else
      cloud.rotations.row(i) << 1, 0, 0, 0;
  }

  state.iteration = step;

  StepResult<Scalar> result;
  result.loss = loss.loss;
  if (step <= cfg.densify.densify_until) {
    if (cfg.densify.densify_interval > 0 &&
        step % cfg.densify.densify_interval == 0) {
      result.densify = densify_and_prune(cloud, state, cfg.densify, extent, rng);
      result.densified = true;
    }
    if (cfg.densify.opacity_reset_interval > 0 &&
        step % cfg.densify.opacity_reset_interval == 0)
      reset_opacity(cloud, state);
  }
  return result;
}

template <class Scalar>
struct TrainView {
  CameraPose<Scalar> camera;
  ErpImage<Scalar> target;
};

template <class Scalar>
struct TrainLogRow {
  std::int64_t iteration;
  double seconds;
  Scalar loss;
  Eigen::Index gaussians;
};

template <class Scalar>
struct TrainResult {
  std::vector<TrainLogRow<Scalar>> log;
  bool stopped_by_clock = false;
};

/// Full optimization loop: cameras cycled in reshuffled epochs, one view
/// per step, periodic checkpoint callback, optional wall-clock stop.
/// Deterministic for a fixed seed and thread count.
template <class Scalar>
inline TrainResult<Scalar> train(
    GaussianCloud<Scalar>& cloud, TrainState<Scalar>& state,
    const std::vector<TrainView<Scalar>>& views, const TrainConfig& cfg,
    const RenderSettings<Scalar>& settings, Scalar extent,
    const std::type_identity_t<
        std::function<void(std::int64_t, const GaussianCloud<Scalar>&)>>&
        checkpoint = {}) {
  cfg.validate();
  if (views.empty()) throw std::invalid_argument("train: no views");

  std::mt19937 rng(cfg.seed);
  std::vector<std::size_t> order(views.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();  // forces a shuffle on first use

  TrainResult<Scalar> result;
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  while (state.iteration < cfg.iterations) {
    if (cfg.max_minutes > 0 && elapsed() >= cfg.max_minutes * 60.0) {
      result.stopped_by_clock = true;
      break;
    }
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& view = views[order[cursor++]];
    const auto step =
        train_step(cloud, state, view.camera, view.target, cfg, settings,
                   extent, rng);
    result.log.push_back(
        {state.iteration, elapsed(), step.loss, cloud.size()});
    if (checkpoint && cfg.checkpoint_interval > 0 &&
        state.iteration % cfg.checkpoint_interval == 0)
      checkpoint(state.iteration, cloud);
  }
  if (checkpoint) checkpoint(state.iteration, cloud);
  return result;
}

}  // namespace odgs
