#pragma once

#include <array>
#include <vector>

#include "odgs/covariance.hpp"
#include "odgs/parallel.hpp"
#include "odgs/projection.hpp"
#include "odgs/rasterizer.hpp"
#include "odgs/types.hpp"

namespace odgs {

/// Image-space gradients of one projected splat, accumulated over every
/// pixel/seam-instance it touched. cov2d uses the full-matrix convention:
/// the off-diagonal entries each carry half of the total off-diagonal
/// sensitivity, so the matrix is symmetric and <grad, dSigma> is the loss
/// differential for symmetric perturbations.
template <class Scalar>
struct SplatGrads {
  Vec2<Scalar> pixel_mean = Vec2<Scalar>::Zero();
  Mat2<Scalar> cov2d = Mat2<Scalar>::Zero();
  Scalar opacity = 0;  // w.r.t. the activated (sigmoid) opacity
  Vec3<Scalar> color = Vec3<Scalar>::Zero();
};

/// Per-term sign overrides for the six two-term entry formulas of the
/// T-gradient. Index = 2 * entry + term, entries ordered (1,1), (1,2),
/// (1,3), (2,1), (2,2), (2,3). All +1 in production; the gradient
/// verification suite flips single terms to prove it would catch a
/// transcription error.
struct GradTSigns {
  std::array<double, 12> sign{{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1}};
};

/// Gradient of the loss w.r.t. T (= J * W, 2x3) given V (= world covariance)
/// and the symmetric gradient w.r.t. the projected covariance T V T^T.
/// Written out entry by entry: each of the six entries is a weighted pair
/// of T-row/V-column inner products, the diagonal dSigma entries weighting
/// their own row's products and the shared off-diagonal weighting the
/// opposite row's.
template <class Scalar>
inline Mat23<Scalar> grad_T(const Mat23<Scalar>& t, const Mat3<Scalar>& v,
                            const Mat2<Scalar>& dl_dcov2d,
                            const GradTSigns* signs = nullptr) {
  static const GradTSigns unit;
  const auto& s = (signs ? *signs : unit).sign;
  const Scalar d11 = dl_dcov2d(0, 0);
  const Scalar d22 = dl_dcov2d(1, 1);
  // The off-diagonal slot carries both symmetric entries.
  const Scalar d12 = dl_dcov2d(0, 1) + dl_dcov2d(1, 0);

  const Scalar a0 = t(0, 0) * v(0, 0) + t(0, 1) * v(0, 1) + t(0, 2) * v(0, 2);
  const Scalar a1 = t(0, 0) * v(1, 0) + t(0, 1) * v(1, 1) + t(0, 2) * v(1, 2);
  const Scalar a2 = t(0, 0) * v(2, 0) + t(0, 1) * v(2, 1) + t(0, 2) * v(2, 2);
  const Scalar b0 = t(1, 0) * v(0, 0) + t(1, 1) * v(0, 1) + t(1, 2) * v(0, 2);
  const Scalar b1 = t(1, 0) * v(1, 0) + t(1, 1) * v(1, 1) + t(1, 2) * v(1, 2);
  const Scalar b2 = t(1, 0) * v(2, 0) + t(1, 1) * v(2, 1) + t(1, 2) * v(2, 2);

  Mat23<Scalar> g;
  g(0, 0) = Scalar(s[0]) * 2 * a0 * d11 + Scalar(s[1]) * b0 * d12;
  g(0, 1) = Scalar(s[2]) * 2 * a1 * d11 + Scalar(s[3]) * b1 * d12;
  g(0, 2) = Scalar(s[4]) * 2 * a2 * d11 + Scalar(s[5]) * b2 * d12;
  g(1, 0) = Scalar(s[6]) * 2 * b0 * d22 + Scalar(s[7]) * a0 * d12;
  g(1, 1) = Scalar(s[8]) * 2 * b1 * d22 + Scalar(s[9]) * a1 * d12;
  g(1, 2) = Scalar(s[10]) * 2 * b2 * d22 + Scalar(s[11]) * a2 * d12;
  return g;
}

/// Closed-form gradient of <dl_dj, J_omni(t)> w.r.t. the camera-space
/// position t, away from the pole clamp. The J(0,1) entry is identically
/// zero, so only five of the six Jacobian entries appear.
template <class Scalar>
inline Vec3<Scalar> grad_position(const Vec3<Scalar>& t,
                                  const Mat23<Scalar>& dl_dj, Scalar width,
                                  Scalar height) {
  const Scalar x = t[0], y = t[1], z = t[2];
  const Scalar rho2 = x * x + z * z;
  if (!(rho2 > Scalar(0)))
    throw std::domain_error("grad_position: undefined at the pole axis");
  const Scalar rho = std::sqrt(rho2);
  const Scalar r2 = rho2 + y * y;
  const Scalar r4 = r2 * r2;
  const Scalar kw = width / (Scalar(2) * pi_v<Scalar>);
  const Scalar kh = height / pi_v<Scalar>;
  const Scalar g11 = dl_dj(0, 0), g13 = dl_dj(0, 2);
  const Scalar g21 = dl_dj(1, 0), g22 = dl_dj(1, 1), g23 = dl_dj(1, 2);

  // Shared rational factors of the five entry derivatives.
  const Scalar xz_over_rho4 = x * z / (rho2 * rho2);
  const Scalar xx_minus_zz = (x * x - z * z) / (rho2 * rho2);
  const Scalar mixed = x * y * z * (2 * rho2 + r2) / (r4 * rho2 * rho);
  const Scalar straight = (r2 - 2 * y * y) / (r4 * rho);

  Vec3<Scalar> g;
  g[0] = -2 * kw * xz_over_rho4 * g11 + kw * xx_minus_zz * g13 -
         kh * y * (z * z * r2 - 2 * x * x * rho2) / (r4 * rho2 * rho) * g21 -
         kh * x * straight * g22 + kh * mixed * g23;
  g[1] = -kh * x * straight * g21 - 2 * kh * y * rho / r4 * g22 -
         kh * z * straight * g23;
  g[2] = kw * xx_minus_zz * g11 + 2 * kw * xz_over_rho4 * g13 +
         kh * mixed * g21 - kh * z * straight * g22 -
         kh * y * (x * x * r2 - 2 * z * z * rho2) / (r4 * rho2 * rho) * g23;
  return g;
}

/// Position gradient through the factored Jacobian when the sec(theta)
/// stretch is pinned at the pole clamp: the chain runs through (r, phi,
/// theta) with the stretch treated as constant. This is the exact
/// almost-everywhere derivative of the clamped forward path.
template <class Scalar>
inline Vec3<Scalar> grad_position_clamped(const Vec3<Scalar>& t,
                                          const Mat23<Scalar>& dl_dj,
                                          Scalar width, Scalar height,
                                          Scalar max_elevation) {
  const auto angles = to_spherical(t);
  const Scalar x = t[0], y = t[1], z = t[2];
  const Scalar rho2 = x * x + z * z;
  if (!(rho2 > Scalar(0)))
    throw std::domain_error("grad_position_clamped: undefined at the pole axis");
  const Scalar rho = std::sqrt(rho2);
  const Scalar r2 = rho2 + y * y;
  const Scalar r = std::sqrt(r2);

  const Scalar cp = std::cos(angles.azimuth), sp = std::sin(angles.azimuth);
  const Scalar ct = std::cos(angles.elevation), st = std::sin(angles.elevation);
  const Scalar sec = Scalar(1) / std::cos(max_elevation);
  const Scalar kw = width / (Scalar(2) * pi_v<Scalar>)*sec / r;
  const Scalar kh = height / pi_v<Scalar> / r;

  // J rows under the clamp (sec constant): row0 = kw (cp, 0, -sp),
  // row1 = kh (st sp, ct, st cp). Partials w.r.t. r, phi, theta:
  Mat23<Scalar> dj_dr, dj_dphi, dj_dtheta;
  dj_dr << -kw * cp / r, 0, kw * sp / r,
           -kh * st * sp / r, -kh * ct / r, -kh * st * cp / r;
  dj_dphi << -kw * sp, 0, -kw * cp,
             kh * st * cp, 0, -kh * st * sp;
  dj_dtheta << 0, 0, 0,
               kh * ct * sp, -kh * st, kh * ct * cp;

  const Vec3<Scalar> dr_dt = t / r;
  const Vec3<Scalar> dphi_dt(z / rho2, 0, -x / rho2);
  const Vec3<Scalar> dtheta_dt(x * y / (rho * r2), -rho / r2,
                               z * y / (rho * r2));

  const Scalar cr = dl_dj.cwiseProduct(dj_dr).sum();
  const Scalar cphi = dl_dj.cwiseProduct(dj_dphi).sum();
  const Scalar ctheta = dl_dj.cwiseProduct(dj_dtheta).sum();
  return cr * dr_dt + cphi * dphi_dt + ctheta * dtheta_dt;
}

/// Reverse of build_covariance: maps a symmetric 3x3 covariance gradient to
/// gradients w.r.t. the raw (unnormalized) quaternion and the log-scales.
/// The quaternion chain runs through normalization, so the returned
/// gradient is automatically tangent to the unit sphere at q/|q|.
template <class Scalar>
inline std::pair<Vec4<Scalar>, Vec3<Scalar>> grad_cov3d_params(
    const Mat3<Scalar>& dl_dsigma, const Vec4<Scalar>& quaternion,
    const Vec3<Scalar>& log_scales) {
  const Scalar qnorm = quaternion.norm();
  const Vec4<Scalar> q = normalize_quaternion(quaternion);
  const Mat3<Scalar> rot =
      Eigen::Quaternion<Scalar>(q[0], q[1], q[2], q[3]).toRotationMatrix();
  const Vec3<Scalar> s = log_scales.array().exp();
  const Mat3<Scalar> m = rot * s.asDiagonal();

  // Sigma = M M^T with symmetric gradient G: dL/dM = 2 G M.
  const Mat3<Scalar> dl_dm = Scalar(2) * dl_dsigma * m;
  const Mat3<Scalar> dl_drot = dl_dm * s.asDiagonal();

  Vec3<Scalar> dl_dlog;
  for (int k = 0; k < 3; ++k)
    dl_dlog[k] = rot.col(k).dot(dl_dm.col(k)) * s[k];

  // Partials of the rotation-matrix formula w.r.t. the unit quaternion
  // entries (w, x, y, z), treating them as independent; the normalization
  // Jacobian below accounts for the constraint.
  const Scalar w = q[0], qx = q[1], qy = q[2], qz = q[3];
  Mat3<Scalar> dw, dx, dy, dz;
  dw << 0, -qz, qy,
        qz, 0, -qx,
        -qy, qx, 0;
  dx << 0, qy, qz,
        qy, -2 * qx, -w,
        qz, w, -2 * qx;
  dy << -2 * qy, qx, w,
        qx, 0, qz,
        -w, qz, -2 * qy;
  dz << -2 * qz, -w, qx,
        w, -2 * qz, qy,
        qx, qy, 0;
  Vec4<Scalar> dl_dq_unit;
  dl_dq_unit[0] = Scalar(2) * dl_drot.cwiseProduct(dw).sum();
  dl_dq_unit[1] = Scalar(2) * dl_drot.cwiseProduct(dx).sum();
  dl_dq_unit[2] = Scalar(2) * dl_drot.cwiseProduct(dy).sum();
  dl_dq_unit[3] = Scalar(2) * dl_drot.cwiseProduct(dz).sum();

  const Vec4<Scalar> dl_dq_raw =
      (dl_dq_unit - q * q.dot(dl_dq_unit)) / qnorm;
  return {dl_dq_raw, dl_dlog};
}

/// Per-pixel reverse of the compositing recursion, accumulated per splat.
/// Replays each pixel's forward walk (the stored walk length reproduces the
/// early-exit point exactly), then runs the suffix recursion back to front.
/// Contributions are first summed per tile entry, then folded in tile-index
/// order, so results do not depend on the number of workers.
template <class Scalar>
inline std::vector<SplatGrads<Scalar>> grad_pixels_to_splats(
    const RenderOutput<Scalar>& fwd, const ErpImage<Scalar>& dl_dimage,
    const RenderSettings<Scalar>& settings) {
  const int height = fwd.image.height(), width = fwd.image.width();
  const int n_tiles = fwd.tiles_x * fwd.tiles_y;
  const Scalar cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;

  // Entry-level accumulators: mean (2), inverse-covariance gradient
  // (3 unique entries), activated opacity, color (3).
  struct EntryGrad {
    Scalar mx = 0, my = 0;
    Scalar m00 = 0, m01 = 0, m11 = 0;
    Scalar op = 0;
    Scalar c0 = 0, c1 = 0, c2 = 0;
  };
  std::vector<EntryGrad> entry_grads(fwd.tile_entries.size());

  struct Contribution {
    int entry;
    Scalar alpha, weight, dx, dy;
    bool clamped;  // alpha ceiling engaged: no alpha gradient
  };

  parallel_for(0, n_tiles, settings.threads, [&](int tile) {
    const int tx = tile % fwd.tiles_x, ty = tile / fwd.tiles_x;
    const int x0 = tx * settings.tile_size;
    const int y0 = ty * settings.tile_size;
    const int x1 = std::min(width, x0 + settings.tile_size);
    const int y1 = std::min(height, y0 + settings.tile_size);
    const int e0 = fwd.tile_offsets[static_cast<std::size_t>(tile)];

    std::vector<Contribution> contribs;
    for (int py = y0; py < y1; ++py) {
      for (int px = x0; px < x1; ++px) {
        const int walked = fwd.walked(py, px);
        if (walked == 0) continue;
        const Vec3<Scalar> dpix(dl_dimage.at(0, py, px),
                                dl_dimage.at(1, py, px),
                                dl_dimage.at(2, py, px));
        if (dpix.isZero()) continue;

        // Forward replay up to the stored walk horizon.
        contribs.clear();
        Scalar t = Scalar(1);
        for (int e = e0; e < e0 + walked; ++e) {
          const auto& inst = fwd.instances[static_cast<std::size_t>(
              fwd.tile_entries[static_cast<std::size_t>(e)])];
          const auto& splat = fwd.splats[static_cast<std::size_t>(inst.splat)];
          const Scalar dx =
              Scalar(px) + Scalar(0.5) - (splat.pixel_mean[0] + inst.shift);
          const Scalar dy = Scalar(py) + Scalar(0.5) - splat.pixel_mean[1];
          const Scalar d2 = splat.cov2d_inv(0, 0) * dx * dx +
                            Scalar(2) * splat.cov2d_inv(0, 1) * dx * dy +
                            splat.cov2d_inv(1, 1) * dy * dy;
          if (d2 > cutoff2) continue;
          const Scalar raw_alpha = splat.opacity * std::exp(-d2 / Scalar(2));
          const Scalar alpha = std::min(settings.alpha_clamp, raw_alpha);
          contribs.push_back({e, alpha, std::exp(-d2 / Scalar(2)), dx, dy,
                              raw_alpha > settings.alpha_clamp});
          t *= (Scalar(1) - alpha);
        }

        // Back-to-front suffix recursion.
        Vec3<Scalar> suffix = Vec3<Scalar>::Zero();
        for (int k = static_cast<int>(contribs.size()) - 1; k >= 0; --k) {
          const Contribution& c = contribs[static_cast<std::size_t>(k)];
          const auto& inst = fwd.instances[static_cast<std::size_t>(
              fwd.tile_entries[static_cast<std::size_t>(c.entry)])];
          const auto& splat = fwd.splats[static_cast<std::size_t>(inst.splat)];
          const Scalar t_here = t / (Scalar(1) - c.alpha);  // T in front of k
          EntryGrad& eg = entry_grads[static_cast<std::size_t>(c.entry)];

          eg.c0 += dpix[0] * c.alpha * t_here;
          eg.c1 += dpix[1] * c.alpha * t_here;
          eg.c2 += dpix[2] * c.alpha * t_here;

          const Scalar dl_dalpha =
              dpix.dot(splat.color * t_here - suffix / (Scalar(1) - c.alpha));
          suffix += splat.color * (c.alpha * t_here);
          t = t_here;
          if (c.clamped) continue;  // ceiling active: d alpha / d params = 0

          eg.op += dl_dalpha * c.weight;
          const Scalar dl_dd2 =
              dl_dalpha * splat.opacity * (-c.weight / Scalar(2));
          // d(d2)/d mean = -2 * cov2d_inv * d
          const Scalar gx = splat.cov2d_inv(0, 0) * c.dx +
                            splat.cov2d_inv(0, 1) * c.dy;
          const Scalar gy = splat.cov2d_inv(0, 1) * c.dx +
                            splat.cov2d_inv(1, 1) * c.dy;
          eg.mx += dl_dd2 * (-2) * gx;
          eg.my += dl_dd2 * (-2) * gy;
          // d(d2)/d inv = d d^T (entrywise, full-matrix convention)
          eg.m00 += dl_dd2 * c.dx * c.dx;
          eg.m01 += dl_dd2 * c.dx * c.dy;
          eg.m11 += dl_dd2 * c.dy * c.dy;
        }
      }
    }
  });

  // Deterministic fold: tiles in index order, entries in list order.
  std::vector<SplatGrads<Scalar>> out(fwd.splats.size());
  std::vector<std::array<Scalar, 3>> inv_grads(fwd.splats.size(),
                                               {Scalar(0), Scalar(0), Scalar(0)});
  for (std::size_t e = 0; e < fwd.tile_entries.size(); ++e) {
    const EntryGrad& eg = entry_grads[e];
    const int s = fwd.instances[static_cast<std::size_t>(fwd.tile_entries[e])].splat;
    SplatGrads<Scalar>& sg = out[static_cast<std::size_t>(s)];
    sg.pixel_mean[0] += eg.mx;
    sg.pixel_mean[1] += eg.my;
    sg.opacity += eg.op;
    sg.color[0] += eg.c0;
    sg.color[1] += eg.c1;
    sg.color[2] += eg.c2;
    inv_grads[static_cast<std::size_t>(s)][0] += eg.m00;
    inv_grads[static_cast<std::size_t>(s)][1] += eg.m01;
    inv_grads[static_cast<std::size_t>(s)][2] += eg.m11;
  }

  // Inverse-to-covariance transport: dL/dSigma = -Inv G_inv Inv, once per
  // splat. Both sides symmetric.
  for (std::size_t s = 0; s < out.size(); ++s) {
    Mat2<Scalar> g_inv;
    g_inv << inv_grads[s][0], inv_grads[s][1],
             inv_grads[s][1], inv_grads[s][2];
    const Mat2<Scalar>& inv = fwd.splats[s].cov2d_inv;
    out[s].cov2d = -inv * g_inv * inv;
  }
  return out;
}

/// Full per-view gradient buffers, plus the statistics densification needs.
template <class Scalar>
struct GradBuffers {
  MatX3<Scalar> means;
  MatX4<Scalar> rotations;
  MatX3<Scalar> log_scales;
  VecX<Scalar> raw_opacities;
  MatX3<Scalar> colors;
  VecX<Scalar> pixel_grad_norm;  // ||dL/d pixel_mean|| per Gaussian
  VecX<Scalar> one_minus_cos;    // 1 - cos(elevation), observed Gaussians
  Eigen::VectorXi observed;      // projected into this view

  void init(Eigen::Index n) {
    means.setZero(n, 3);
    rotations.setZero(n, 4);
    log_scales.setZero(n, 3);
    raw_opacities.setZero(n);
    colors.setZero(n, 3);
    pixel_grad_norm.setZero(n);
    one_minus_cos.setZero(n);
    observed.setZero(n);
  }

  void accumulate(const GradBuffers& other) {
    means += other.means;
    rotations += other.rotations;
    log_scales += other.log_scales;
    raw_opacities += other.raw_opacities;
    colors += other.colors;
    pixel_grad_norm += other.pixel_grad_norm;
    one_minus_cos += other.one_minus_cos;
    observed += other.observed;
  }
};

/// Analytic backward pass for one view: image gradient in, parameter
/// gradients out. `fwd` must come from render() on the same cloud, camera,
/// and settings. The optional sign table reaches the T-gradient stage only
/// (verification hook).
template <class Scalar>
inline GradBuffers<Scalar> backward(const GaussianCloud<Scalar>& cloud,
                                    const CameraPose<Scalar>& camera,
                                    const RenderOutput<Scalar>& fwd,
                                    const ErpImage<Scalar>& dl_dimage,
                                    const RenderSettings<Scalar>& settings,
                                    const GradTSigns* signs = nullptr) {
  const auto splat_grads = grad_pixels_to_splats(fwd, dl_dimage, settings);

  GradBuffers<Scalar> out;
  out.init(cloud.size());
  const Scalar width = Scalar(camera.width), height = Scalar(camera.height);

  parallel_for(0, static_cast<int>(fwd.splats.size()), settings.threads,
               [&](int si) {
    const Splat2D<Scalar>& splat = fwd.splats[static_cast<std::size_t>(si)];
    const SplatGrads<Scalar>& sg = splat_grads[static_cast<std::size_t>(si)];
    const Eigen::Index i = splat.index;
    out.observed[i] = 1;

    // Reconstruct the forward intermediates for this splat.
    const Vec3<Scalar> mu_cam = camera.to_camera(cloud.means.row(i).transpose());
    const auto angles = to_spherical(mu_cam);
    out.one_minus_cos[i] = Scalar(1) - std::cos(angles.elevation);
    bool clamped = false;
    const Mat23<Scalar> j = jacobian_omni(mu_cam, width, height,
                                          settings.max_elevation, &clamped);
    const Mat3<Scalar> sigma_world =
        build_covariance<Scalar>(cloud.rotations.row(i).transpose(),
                                 cloud.log_scales.row(i).transpose());
    const Mat23<Scalar> t = j * camera.rotation;

    // Covariance path: dL/dcov2d -> T -> {J -> position, world covariance}.
    const Mat23<Scalar> dl_dt = grad_T(t, sigma_world, sg.cov2d, signs);
    const Mat23<Scalar> dl_dj = dl_dt * camera.rotation.transpose();
    Vec3<Scalar> dl_dmu_cam =
        clamped ? grad_position_clamped(mu_cam, dl_dj, width, height,
                                        settings.max_elevation)
                : grad_position(mu_cam, dl_dj, width, height);

    // Mean path: the projected center is exact, so its derivative is the
    // unclamped direct Jacobian.
    dl_dmu_cam += jacobian_omni_direct(mu_cam, width, height).transpose() *
                  sg.pixel_mean;

    out.means.row(i) = (camera.rotation.transpose() * dl_dmu_cam).transpose();
    out.pixel_grad_norm[i] = sg.pixel_mean.norm();

    const Mat3<Scalar> dl_dsigma = t.transpose() * sg.cov2d * t;
    const auto [dl_dq, dl_dls] = grad_cov3d_params<Scalar>(
        dl_dsigma, cloud.rotations.row(i).transpose(),
        cloud.log_scales.row(i).transpose());
    out.rotations.row(i) = dl_dq.transpose();
    out.log_scales.row(i) = dl_dls.transpose();

    const Scalar o = splat.opacity;
    out.raw_opacities[i] = sg.opacity * o * (Scalar(1) - o);
    out.colors.row(i) = sg.color.transpose();
  });

  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    if (!out.means.row(i).allFinite() || !out.rotations.row(i).allFinite() ||
        !out.log_scales.row(i).allFinite() ||
        !std::isfinite(out.raw_opacities[i]) || !out.colors.row(i).allFinite())
      throw std::runtime_error("backward: non-finite gradient for Gaussian " +
                               std::to_string(i));
  }
  return out;
}

}  // namespace odgs
