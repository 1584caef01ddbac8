#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace odgs {

template <class Scalar> using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <class Scalar> using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <class Scalar> using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
template <class Scalar> using Mat2 = Eigen::Matrix<Scalar, 2, 2>;
template <class Scalar> using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <class Scalar> using Mat23 = Eigen::Matrix<Scalar, 2, 3>;
template <class Scalar> using MatX3 = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
template <class Scalar> using MatX4 = Eigen::Matrix<Scalar, Eigen::Dynamic, 4>;
template <class Scalar> using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
inline constexpr Scalar pi_v = std::numbers::pi_v<Scalar>;

template <class Scalar>
inline Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// Inverse of sigmoid; input must lie strictly inside (0, 1).
template <class Scalar>
inline Scalar logit(Scalar x) {
  if (!(x > Scalar(0) && x < Scalar(1)))
    throw std::invalid_argument("logit: argument must lie in (0, 1)");
  return std::log(x / (Scalar(1) - x));
}

/// A set of anisotropic 3D Gaussians stored as structure-of-arrays.
///
/// All fields are kept in their unconstrained (optimizable) form:
///   - rotations are unnormalized quaternions in (w, x, y, z) order; every
///     consumer normalizes on read,
///   - log_scales are per-axis log standard deviations,
///   - raw_opacities are logits; the blending opacity is sigmoid(raw),
///   - colors are plain RGB values used directly by the rasterizer.
///
/// Row i across all members describes one Gaussian. Growing and shrinking
/// the cloud (densification, pruning) goes through append()/keep_rows() so
/// the members can never fall out of step.
template <class Scalar>
struct GaussianCloud {
  MatX3<Scalar> means;          // world-space centers, one row per Gaussian
  MatX4<Scalar> rotations;      // quaternions (w, x, y, z), not normalized
  MatX3<Scalar> log_scales;     // log of per-axis standard deviations
  VecX<Scalar> raw_opacities;   // pre-sigmoid opacity logits
  MatX3<Scalar> colors;         // RGB, linear in [0, 1] once converged

  Eigen::Index size() const { return means.rows(); }

  void resize(Eigen::Index n) {
    means.setZero(n, 3);
    rotations.setZero(n, 4);
    rotations.col(0).setOnes();
    log_scales.setZero(n, 3);
    raw_opacities.setZero(n);
    colors.setZero(n, 3);
  }

  Scalar opacity(Eigen::Index i) const { return sigmoid(raw_opacities[i]); }
  Vec3<Scalar> scale(Eigen::Index i) const {
    return log_scales.row(i).array().exp().matrix().transpose();
  }

  void append(const GaussianCloud& other) {
    const Eigen::Index n = size(), m = other.size();
    means.conservativeResize(n + m, 3);
    rotations.conservativeResize(n + m, 4);
    log_scales.conservativeResize(n + m, 3);
    raw_opacities.conservativeResize(n + m);
    colors.conservativeResize(n + m, 3);
    means.bottomRows(m) = other.means;
    rotations.bottomRows(m) = other.rotations;
    log_scales.bottomRows(m) = other.log_scales;
    raw_opacities.tail(m) = other.raw_opacities;
    colors.bottomRows(m) = other.colors;
  }

  /// Appends a copy of one row of another cloud; returns the new row index.
  Eigen::Index append_row(const GaussianCloud& other, Eigen::Index i) {
    const Eigen::Index n = size();
    means.conservativeResize(n + 1, 3);
    rotations.conservativeResize(n + 1, 4);
    log_scales.conservativeResize(n + 1, 3);
    raw_opacities.conservativeResize(n + 1);
    colors.conservativeResize(n + 1, 3);
    means.row(n) = other.means.row(i);
    rotations.row(n) = other.rotations.row(i);
    log_scales.row(n) = other.log_scales.row(i);
    raw_opacities[n] = other.raw_opacities[i];
    colors.row(n) = other.colors.row(i);
    return n;
  }

  /// Compacts the cloud down to the given row indices, in the given order.
  void keep_rows(const std::vector<Eigen::Index>& rows) {
    GaussianCloud out;
    out.resize(static_cast<Eigen::Index>(rows.size()));
    for (Eigen::Index k = 0; k < out.size(); ++k) {
      const Eigen::Index i = rows[static_cast<std::size_t>(k)];
      out.means.row(k) = means.row(i);
      out.rotations.row(k) = rotations.row(i);
      out.log_scales.row(k) = log_scales.row(i);
      out.raw_opacities[k] = raw_opacities[i];
      out.colors.row(k) = colors.row(i);
    }
    *this = std::move(out);
  }

  /// Index of the first row containing a non-finite value, or -1.
  Eigen::Index first_non_finite() const {
    for (Eigen::Index i = 0; i < size(); ++i) {
      if (!means.row(i).allFinite() || !rotations.row(i).allFinite() ||
          !log_scales.row(i).allFinite() || !std::isfinite(raw_opacities[i]) ||
          !colors.row(i).allFinite())
        return i;
    }
    return -1;
  }

  template <class Other>
  GaussianCloud<Other> cast() const {
    GaussianCloud<Other> out;
    out.means = means.template cast<Other>();
    out.rotations = rotations.template cast<Other>();
    out.log_scales = log_scales.template cast<Other>();
    out.raw_opacities = raw_opacities.template cast<Other>();
    out.colors = colors.template cast<Other>();
    return out;
  }
};

/// World-to-camera rigid transform plus the panorama size it renders to.
/// The camera frame is y-down, z-forward; the full sphere maps onto a
/// width x height equirectangular image with width == 2 * height.
template <class Scalar>
struct CameraPose {
  Mat3<Scalar> rotation = Mat3<Scalar>::Identity();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();
  int width = 0;
  int height = 0;

  Vec3<Scalar> to_camera(const Vec3<Scalar>& p_world) const {
    return rotation * p_world + translation;
  }

  void validate() const {
    if (width <= 0 || height <= 0 || width != 2 * height)
      throw std::invalid_argument(
          "CameraPose: equirectangular image needs width == 2 * height > 0");
    const Scalar err =
        (rotation * rotation.transpose() - Mat3<Scalar>::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (!(err < Scalar(1e-5)))
      throw std::invalid_argument("CameraPose: rotation is not orthonormal");
  }

  template <class Other>
  CameraPose<Other> cast() const {
    CameraPose<Other> out;
    out.rotation = rotation.template cast<Other>();
    out.translation = translation.template cast<Other>();
    out.width = width;
    out.height = height;
    return out;
  }
};

/// Planar RGB image, channel-major: three height x width arrays indexed
/// (row, col) = (y, x). Values are linear intensities, nominally [0, 1].
template <class Scalar>
struct ErpImage {
  std::array<Eigen::ArrayXX<Scalar>, 3> channel;

  ErpImage() = default;
  ErpImage(int height, int width) { set_zero(height, width); }

  void set_zero(int height, int width) {
    for (auto& c : channel) c.setZero(height, width);
  }

  int height() const { return static_cast<int>(channel[0].rows()); }
  int width() const { return static_cast<int>(channel[0].cols()); }

  Scalar& at(int c, int y, int x) { return channel[static_cast<std::size_t>(c)](y, x); }
  Scalar at(int c, int y, int x) const { return channel[static_cast<std::size_t>(c)](y, x); }

  bool all_finite() const {
    return channel[0].allFinite() && channel[1].allFinite() && channel[2].allFinite();
  }

  Scalar max_abs_diff(const ErpImage& other) const {
    Scalar worst = 0;
    for (int c = 0; c < 3; ++c)
      worst = std::max(worst,
                       (channel[static_cast<std::size_t>(c)] -
                        other.channel[static_cast<std::size_t>(c)])
                           .abs()
                           .maxCoeff());
    return worst;
  }

  template <class Other>
  ErpImage<Other> cast() const {
    ErpImage<Other> out;
    for (int c = 0; c < 3; ++c)
      out.channel[static_cast<std::size_t>(c)] =
          channel[static_cast<std::size_t>(c)].template cast<Other>();
    return out;
  }
};

/// Knobs shared by projection, rasterization, and the backward pass. The
/// defaults are the production values; tests override individual fields
/// (e.g. a wider cutoff for finite-difference work).
template <class Scalar>
struct RenderSettings {
  Scalar near_radius = Scalar(0.01);    // spherical culling shell, inner
  Scalar far_radius = Scalar(1000);     // spherical culling shell, outer
  int tile_size = 16;                   // square tile edge, pixels
  Scalar alpha_clamp = Scalar(0.99);    // per-splat alpha ceiling
  Scalar transmittance_floor = Scalar(1e-4);  // early-exit threshold
  Scalar cutoff_sigma = Scalar(3);      // footprint radius in sigmas
  Scalar lowpass_dilation = Scalar(0.3);  // px^2 added to cov2d diagonal
  Scalar max_elevation = Scalar(85) * pi_v<Scalar> / Scalar(180);  // sec clamp
  int threads = 0;                      // 0 = hardware concurrency

  template <class Other>
  RenderSettings<Other> cast() const {
    RenderSettings<Other> out;
    out.near_radius = Other(near_radius);
    out.far_radius = Other(far_radius);
    out.tile_size = tile_size;
    out.alpha_clamp = Other(alpha_clamp);
    out.transmittance_floor = Other(transmittance_floor);
    out.cutoff_sigma = Other(cutoff_sigma);
    out.lowpass_dilation = Other(lowpass_dilation);
    out.max_elevation = Other(max_elevation);
    out.threads = threads;
    return out;
  }
};

/// Everything the training loop carries between iterations besides the
/// cloud itself: Adam moments per parameter group, and the densification
/// statistics accumulated since the last densify step.
template <class Scalar>
struct TrainState {
  MatX3<Scalar> means_m, means_v;
  MatX4<Scalar> rot_m, rot_v;
  MatX3<Scalar> scale_m, scale_v;
  VecX<Scalar> opac_m, opac_v;
  MatX3<Scalar> color_m, color_v;

  VecX<Scalar> grad_accum;   // sum of ||dL/d pixel-mean|| over observations
  VecX<Scalar> elev_accum;   // sum of (1 - cos(elevation)) over observations
  Eigen::VectorXi grad_count;  // number of views the Gaussian was visible in

  std::int64_t iteration = 0;

  void init(Eigen::Index n) {
    means_m.setZero(n, 3); means_v.setZero(n, 3);
    rot_m.setZero(n, 4);   rot_v.setZero(n, 4);
    scale_m.setZero(n, 3); scale_v.setZero(n, 3);
    opac_m.setZero(n);     opac_v.setZero(n);
    color_m.setZero(n, 3); color_v.setZero(n, 3);
    reset_densify_stats(n);
  }

  void reset_densify_stats(Eigen::Index n) {
    grad_accum.setZero(n);
    elev_accum.setZero(n);
    grad_count.setZero(n);
  }

  /// Extends every buffer with zero rows for freshly added Gaussians.
  void append_zeros(Eigen::Index m) {
    const Eigen::Index n = means_m.rows();
    auto grow = [&](auto& mat, Eigen::Index cols) {
      mat.conservativeResize(n + m, cols);
      mat.bottomRows(m).setZero();
    };
    grow(means_m, 3); grow(means_v, 3);
    grow(rot_m, 4);   grow(rot_v, 4);
    grow(scale_m, 3); grow(scale_v, 3);
    grow(color_m, 3); grow(color_v, 3);
    opac_m.conservativeResize(n + m); opac_m.tail(m).setZero();
    opac_v.conservativeResize(n + m); opac_v.tail(m).setZero();
    grad_accum.conservativeResize(n + m); grad_accum.tail(m).setZero();
    elev_accum.conservativeResize(n + m); elev_accum.tail(m).setZero();
    grad_count.conservativeResize(n + m); grad_count.tail(m).setZero();
  }

  void keep_rows(const std::vector<Eigen::Index>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    TrainState out;
    out.init(n);
    out.iteration = iteration;
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Index i = rows[static_cast<std::size_t>(k)];
      out.means_m.row(k) = means_m.row(i); out.means_v.row(k) = means_v.row(i);
      out.rot_m.row(k) = rot_m.row(i);     out.rot_v.row(k) = rot_v.row(i);
      out.scale_m.row(k) = scale_m.row(i); out.scale_v.row(k) = scale_v.row(i);
      out.opac_m[k] = opac_m[i];           out.opac_v[k] = opac_v[i];
      out.color_m.row(k) = color_m.row(i); out.color_v.row(k) = color_v.row(i);
      out.grad_accum[k] = grad_accum[i];
      out.elev_accum[k] = elev_accum[i];
      out.grad_count[k] = grad_count[i];
    }
    *this = std::move(out);
  }
};

}  // namespace odgs
