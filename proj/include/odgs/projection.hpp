#pragma once

#include <optional>

#include "odgs/covariance.hpp"
#include "odgs/types.hpp"

namespace odgs {

/// Direction of a camera-space point on the unit sphere. Azimuth is
/// measured from the forward z-axis toward +x, elevation upward from the
/// equator (the camera frame is y-down, so "up" is -y).
template <class Scalar>
struct SphericalAngles {
  Scalar azimuth;    // phi in [-pi, pi]
  Scalar elevation;  // theta in [-pi/2, pi/2]
};

template <class Scalar>
inline SphericalAngles<Scalar> to_spherical(const Vec3<Scalar>& mu_cam) {
  if (!(mu_cam.squaredNorm() > Scalar(0)))
    throw std::domain_error("to_spherical: degenerate zero-length direction");
  // atan2 covers the full azimuth range; it also yields phi = 0 exactly at
  // the poles (x = z = 0), which is the convention we adopt there.
  const Scalar phi = std::atan2(mu_cam[0], mu_cam[2]);
  const Scalar rho = std::hypot(mu_cam[0], mu_cam[2]);
  const Scalar theta = std::atan2(-mu_cam[1], rho);
  return {phi, theta};
}

/// Equirectangular projection of a camera-space point to continuous pixel
/// coordinates: u = (W/2pi) phi + W/2, v = -(H/pi) theta + H/2.
template <class Scalar>
inline Vec2<Scalar> project_center(const Vec3<Scalar>& mu_cam, Scalar width,
                                   Scalar height) {
  const auto [phi, theta] = to_spherical(mu_cam);
  return {width / (Scalar(2) * pi_v<Scalar>)*phi + width / Scalar(2),
          -height / pi_v<Scalar> * theta + height / Scalar(2)};
}

/// Rotation that takes the viewing ray (phi, theta) onto the +z axis:
/// T_mu = T_theta * T_phi, azimuth first, then elevation.
template <class Scalar>
inline Mat3<Scalar> tangent_rotation(const SphericalAngles<Scalar>& angles) {
  const Scalar cp = std::cos(angles.azimuth), sp = std::sin(angles.azimuth);
  const Scalar ct = std::cos(angles.elevation), st = std::sin(angles.elevation);
  Mat3<Scalar> t_phi, t_theta;
  t_phi << cp, 0, -sp,
           0, 1, 0,
           sp, 0, cp;
  t_theta << 1, 0, 0,
             0, ct, st,
             0, -st, ct;
  return t_theta * t_phi;
}

/// First-order Jacobian of the pinhole projection (f_x x/z, f_y y/z).
template <class Scalar>
inline Mat23<Scalar> perspective_jacobian(const Vec3<Scalar>& mu_cam, Scalar fx,
                                          Scalar fy) {
  const Scalar x = mu_cam[0], y = mu_cam[1], z = mu_cam[2];
  if (!(z > Scalar(0)))
    throw std::domain_error("perspective_jacobian: point is behind the camera");
  Mat23<Scalar> j;
  j << fx / z, 0, -fx * x / (z * z),
       0, fy / z, -fy * y / (z * z);
  return j;
}

inline constexpr double kDefaultMaxElevation = 85.0 * std::numbers::pi / 180.0;

/// ERP Jacobian as the four-factor product S_o Q_o J_o T_mu. The sec(theta)
/// stretch is clamped at max_elevation; `clamped` (if given) reports whether
/// the clamp engaged for this point.
template <class Scalar>
inline Mat23<Scalar> jacobian_omni_factored(
    const Vec3<Scalar>& mu_cam, Scalar width, Scalar height,
    Scalar max_elevation = Scalar(kDefaultMaxElevation),
    bool* clamped = nullptr) {
  const auto angles = to_spherical(mu_cam);
  const Scalar r = mu_cam.norm();
  const bool clamp = std::abs(angles.elevation) > max_elevation;
  if (clamped) *clamped = clamp;
  const Scalar sec =
      Scalar(1) / std::cos(clamp ? max_elevation : std::abs(angles.elevation));

  Mat23<Scalar> j_o;
  j_o << Scalar(1) / r, 0, 0,
         0, Scalar(1) / r, 0;
  Mat2<Scalar> q_o = Mat2<Scalar>::Identity();
  q_o(0, 0) = sec;
  Mat2<Scalar> s_o = Mat2<Scalar>::Zero();
  s_o(0, 0) = width / (Scalar(2) * pi_v<Scalar>);
  s_o(1, 1) = height / pi_v<Scalar>;
  return s_o * q_o * j_o * tangent_rotation(angles);
}

/// ERP Jacobian written out in spherical terms (the expanded product).
/// Verification-only counterpart of jacobian_omni_factored; no pole clamp.
template <class Scalar>
inline Mat23<Scalar> jacobian_omni_closed(const Vec3<Scalar>& mu_cam,
                                          Scalar width, Scalar height) {
  const auto [phi, theta] = to_spherical(mu_cam);
  const Scalar r = mu_cam.norm();
  const Scalar cp = std::cos(phi), sp = std::sin(phi);
  const Scalar ct = std::cos(theta), st = std::sin(theta);
  const Scalar sec = Scalar(1) / ct;
  const Scalar kw = width / (Scalar(2) * pi_v<Scalar> * r);
  const Scalar kh = height / (pi_v<Scalar> * r);
  Mat23<Scalar> j;
  j << kw * sec * cp, 0, -kw * sec * sp,
       kh * st * sp, kh * ct, kh * st * cp;
  return j;
}

/// ERP Jacobian differentiated directly in Cartesian camera coordinates.
/// This is the exact derivative of project_center; no pole clamp.
template <class Scalar>
inline Mat23<Scalar> jacobian_omni_direct(const Vec3<Scalar>& mu_cam,
                                          Scalar width, Scalar height) {
  const Scalar x = mu_cam[0], y = mu_cam[1], z = mu_cam[2];
  const Scalar rho2 = x * x + z * z;
  if (!(rho2 > Scalar(0)))
    throw std::domain_error("jacobian_omni_direct: derivative undefined at the pole");
  const Scalar rho = std::sqrt(rho2);
  const Scalar r2 = rho2 + y * y;
  const Scalar kw = width / (Scalar(2) * pi_v<Scalar>);
  const Scalar kh = height / pi_v<Scalar>;
  Mat23<Scalar> j;
  j << kw * z / rho2, 0, -kw * x / rho2,
       -kh * x * y / (rho * r2), kh * rho / r2, -kh * y * z / (rho * r2);
  return j;
}

template <class Scalar>
inline Mat23<Scalar> jacobian_omni(
    const Vec3<Scalar>& mu_cam, Scalar width, Scalar height,
    Scalar max_elevation = Scalar(kDefaultMaxElevation),
    bool* clamped = nullptr) {
  return jacobian_omni_factored(mu_cam, width, height, max_elevation, clamped);
}

/// Pushes a world covariance through the camera rotation and an ERP
/// Jacobian, then dilates by the low-pass term so no splat shrinks below
/// roughly a pixel.
template <class Scalar>
inline Mat2<Scalar> project_covariance(const Mat3<Scalar>& sigma_world,
                                       const Mat3<Scalar>& world_rot,
                                       const Mat23<Scalar>& j,
                                       Scalar lowpass_dilation = Scalar(0.3)) {
  const Mat23<Scalar> t = j * world_rot;
  Mat2<Scalar> cov = t * sigma_world * t.transpose();
  // Exact symmetry keeps the inverse/eigen math below well behaved.
  cov(1, 0) = cov(0, 1) = (cov(0, 1) + cov(1, 0)) / Scalar(2);
  cov(0, 0) += lowpass_dilation;
  cov(1, 1) += lowpass_dilation;
  return cov;
}

/// One projected Gaussian ready for rasterization. cov2d already includes
/// the low-pass dilation; radius is the cutoff-sigma extent used for tile
/// binning and seam duplication.
template <class Scalar>
struct Splat2D {
  Vec2<Scalar> pixel_mean;
  Mat2<Scalar> cov2d;
  Mat2<Scalar> cov2d_inv;
  Scalar depth;       // ||mu_cam||
  Scalar radius;      // cutoff_sigma * sqrt(lambda_max(cov2d)), pixels
  Scalar opacity;     // sigmoid-activated
  Vec3<Scalar> color;
  Eigen::Index index;     // row in the source cloud
  bool pole_clamped = false;
};

/// Projects one Gaussian of the cloud. Returns nothing when the Gaussian
/// is outside the culling shell or its direction is degenerate.
template <class Scalar>
inline std::optional<Splat2D<Scalar>> project_gaussian(
    const GaussianCloud<Scalar>& cloud, Eigen::Index i,
    const CameraPose<Scalar>& camera, const RenderSettings<Scalar>& settings) {
  const Vec3<Scalar> mu_cam = camera.to_camera(cloud.means.row(i).transpose());
  const Scalar depth = mu_cam.norm();
  if (!(depth >= settings.near_radius && depth <= settings.far_radius))
    return std::nullopt;

  Splat2D<Scalar> splat;
  splat.pixel_mean = project_center(mu_cam, Scalar(camera.width), Scalar(camera.height));
  const Mat23<Scalar> j = jacobian_omni(mu_cam, Scalar(camera.width),
                                        Scalar(camera.height),
                                        settings.max_elevation,
                                        &splat.pole_clamped);
  const Mat3<Scalar> sigma =
      build_covariance<Scalar>(cloud.rotations.row(i).transpose(),
                               cloud.log_scales.row(i).transpose());
  splat.cov2d = project_covariance(sigma, camera.rotation, j,
                                   settings.lowpass_dilation);

  const Scalar det = splat.cov2d.determinant();
  if (!(det > Scalar(0)) || !splat.cov2d.allFinite()) return std::nullopt;
  splat.cov2d_inv << splat.cov2d(1, 1), -splat.cov2d(0, 1),
                     -splat.cov2d(0, 1), splat.cov2d(0, 0);
  splat.cov2d_inv /= det;

  // Largest eigenvalue of the symmetric 2x2 via the trace/det closed form.
  const Scalar mid = (splat.cov2d(0, 0) + splat.cov2d(1, 1)) / Scalar(2);
  const Scalar lambda_max =
      mid + std::sqrt(std::max(Scalar(0), mid * mid - det));
  splat.radius = settings.cutoff_sigma * std::sqrt(lambda_max);

  splat.depth = depth;
  splat.opacity = cloud.opacity(i);
  splat.color = cloud.colors.row(i).transpose();
  splat.index = i;
  return splat;
}

}  // namespace odgs
