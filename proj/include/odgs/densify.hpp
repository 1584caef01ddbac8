#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "odgs/covariance.hpp"
#include "odgs/types.hpp"

namespace odgs {

/// Adaptive density control parameters. The gradient thresholds bound the
/// elevation-dependent densification trigger; percent_dense (relative to
/// the scene extent) separates clone-sized from split-sized Gaussians.
struct DensifyConfig {
  double grad_threshold_min = 2e-5;   // trigger at the equator
  double grad_threshold_max = 1e-4;   // trigger at the poles
  double percent_dense = 1e-3;        // of scene extent
  std::int64_t densify_interval = 100;
  std::int64_t densify_until = 100000;
  double opacity_prune_floor = 0.005;
  std::int64_t opacity_reset_interval = 3000;
  double split_scale_divisor = 1.6;

  void validate() const {
    if (!(grad_threshold_min > 0) || !(grad_threshold_max >= grad_threshold_min))
      throw std::invalid_argument(
          "DensifyConfig: need 0 < grad_threshold_min <= grad_threshold_max");
    if (!(percent_dense > 0) || !(percent_dense < 1))
      throw std::invalid_argument("DensifyConfig: percent_dense outside (0, 1)");
  }
};

/// Densification trigger for a Gaussian seen at elevation theta: the
/// threshold slides from its equator value to its pole value with
/// 1 - cos(theta), compensating the ERP stretch that inflates screen-space
/// gradients toward the poles.
template <class Scalar>
inline Scalar dynamic_threshold(Scalar elevation, const DensifyConfig& cfg) {
  if (!(std::abs(elevation) <= pi_v<Scalar> / 2 + Scalar(1e-12)))
    throw std::domain_error("dynamic_threshold: elevation outside [-pi/2, pi/2]");
  const Scalar tmin = Scalar(cfg.grad_threshold_min);
  const Scalar tmax = Scalar(cfg.grad_threshold_max);
  // Fused interpolation rounds once, so both endpoints land exactly on
  // the configured thresholds (the equator weight is an exact zero, and
  // at the poles the residual of cos sits inside the half-ulp).
  return std::fma(Scalar(1) - std::cos(elevation), tmax - tmin, tmin);
}

struct DensifyStats {
  Eigen::Index cloned = 0;
  Eigen::Index split = 0;
  Eigen::Index pruned = 0;
};

namespace detail {

/// Standard normal sample conditioned on the unit ball, so split children
/// land inside the parent's 1-sigma support.
template <class Scalar>
inline Vec3<Scalar> unit_ball_normal(std::mt19937& rng) {
  std::normal_distribution<double> gauss;
  for (;;) {
    const Vec3<Scalar> e(Scalar(gauss(rng)), Scalar(gauss(rng)),
                         Scalar(gauss(rng)));
    if (e.norm() <= Scalar(1)) return e;
  }
}

}  // namespace detail

/// One round of adaptive density control. A Gaussian densifies when its
/// mean screen-space positional gradient over the accumulation window
/// reaches the dynamic threshold at its mean observed elevation; small ones
/// are cloned in place, large ones are split into two children with scales
/// shrunk by the configured divisor. Gaussians whose opacity fell below the
/// prune floor are removed. Optimizer moments follow the cloud: new rows
/// start at zero, removed rows are compacted away. Accumulated window
/// statistics are cleared at the end.
template <class Scalar>
inline DensifyStats densify_and_prune(GaussianCloud<Scalar>& cloud,
                                      TrainState<Scalar>& state,
                                      const DensifyConfig& cfg,
                                      Scalar scene_extent, std::mt19937& rng) {
  cfg.validate();
  if (!(scene_extent > Scalar(0)))
    throw std::invalid_argument("densify_and_prune: scene extent must be positive");
  const Eigen::Index n = cloud.size();
  DensifyStats stats;

  const Scalar tmin = Scalar(cfg.grad_threshold_min);
  const Scalar tmax = Scalar(cfg.grad_threshold_max);
  const Scalar size_split = Scalar(cfg.percent_dense) * scene_extent;

  std::vector<bool> remove(static_cast<std::size_t>(n), false);
  GaussianCloud<Scalar> added;
  added.resize(0);

  for (Eigen::Index i = 0; i < n; ++i) {
    if (state.grad_count[i] <= 0) continue;
    const Scalar count = Scalar(state.grad_count[i]);
    const Scalar mean_grad = state.grad_accum[i] / count;
    const Scalar mean_omc = state.elev_accum[i] / count;
    const Scalar threshold = tmin + mean_omc * (tmax - tmin);
    if (mean_grad < threshold) continue;

    const Scalar max_scale = cloud.scale(i).maxCoeff();
    if (max_scale < size_split) {
      added.append_row(cloud, i);
      ++stats.cloned;
    } else {
      const Mat3<Scalar> rot = rotation_from_quaternion(
          normalize_quaternion<Scalar>(cloud.rotations.row(i).transpose()));
      const Vec3<Scalar> s = cloud.scale(i);
      for (int child = 0; child < 2; ++child) {
        const Eigen::Index row = added.append_row(cloud, i);
        const Vec3<Scalar> offset =
            rot * (s.array() * detail::unit_ball_normal<Scalar>(rng).array())
                      .matrix();
        added.means.row(row) += offset.transpose();
        added.log_scales.row(row).array() -=
            std::log(Scalar(cfg.split_scale_divisor));
      }
      remove[static_cast<std::size_t>(i)] = true;
      ++stats.split;
    }
  }

  // Graft the new rows, then drop split parents and transparent Gaussians.
  const Eigen::Index n_added = added.size();
  if (n_added > 0) {
    cloud.append(added);
    state.append_zeros(n_added);
  }

  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (i < n && remove[static_cast<std::size_t>(i)]) continue;
    if (cloud.opacity(i) < Scalar(cfg.opacity_prune_floor)) {
      ++stats.pruned;
      continue;
    }
    keep.push_back(i);
  }
  if (static_cast<Eigen::Index>(keep.size()) != cloud.size()) {
    cloud.keep_rows(keep);
    state.keep_rows(keep);
  }
  state.reset_densify_stats(cloud.size());
  return stats;
}

/// Periodic opacity reset: clamps every opacity to at most `ceiling` (in
/// activated units) and clears the opacity optimizer moments, giving
/// pruning a fresh look at which Gaussians the loss actually needs.
template <class Scalar>
inline void reset_opacity(GaussianCloud<Scalar>& cloud, TrainState<Scalar>& state,
                          Scalar ceiling = Scalar(0.01)) {
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    cloud.raw_opacities[i] =
        logit(std::min(cloud.opacity(i), ceiling));
  state.opac_m.setZero();
  state.opac_v.setZero();
}

}  // namespace odgs
