#pragma once

#include <algorithm>
#include <vector>

#include "odgs/parallel.hpp"
#include "odgs/projection.hpp"
#include "odgs/types.hpp"

namespace odgs {

/// Spherical-shell culling: keeps Gaussian i iff near <= ||mu_cam,i|| <= far.
/// The omnidirectional camera sees every direction, so there is no angular
/// test.
template <class Scalar>
inline std::vector<Eigen::Index> cull(const GaussianCloud<Scalar>& cloud,
                                      const CameraPose<Scalar>& camera,
                                      Scalar near, Scalar far) {
  if (!(Scalar(0) < near && near < far))
    throw std::invalid_argument("cull: need 0 < near < far");
  std::vector<Eigen::Index> visible;
  visible.reserve(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Scalar d = camera.to_camera(cloud.means.row(i).transpose()).norm();
    if (d >= near && d <= far) visible.push_back(i);
  }
  return visible;
}

/// Unnormalized Gaussian falloff, 1 at the splat center (Eq. of the splat
/// kernel); `shift` moves the mean horizontally for seam duplicates.
template <class Scalar>
inline Scalar eval_splat(const Splat2D<Scalar>& splat, const Vec2<Scalar>& x,
                         Scalar shift = Scalar(0)) {
  const Scalar dx = x[0] - (splat.pixel_mean[0] + shift);
  const Scalar dy = x[1] - splat.pixel_mean[1];
  const Scalar d2 = splat.cov2d_inv(0, 0) * dx * dx +
                    Scalar(2) * splat.cov2d_inv(0, 1) * dx * dy +
                    splat.cov2d_inv(1, 1) * dy * dy;
  return std::exp(-d2 / Scalar(2));
}

template <class Scalar>
struct PixelComposite {
  Vec3<Scalar> color = Vec3<Scalar>::Zero();
  Scalar transmittance = Scalar(1);
  int composited = 0;
};

/// Front-to-back alpha compositing of one pixel: C = sum c_j alpha_j T_j
/// with T_j the product of the (1 - alpha) of everything in front. Alpha is
/// clamped to alpha_clamp; compositing stops before any splat that would
/// push transmittance below the floor. Inputs are (splat, shift) pairs
/// already sorted front to back.
template <class Scalar>
inline PixelComposite<Scalar> composite_pixel(
    const std::vector<std::pair<Splat2D<Scalar>, Scalar>>& front_to_back,
    const Vec2<Scalar>& x, const RenderSettings<Scalar>& settings) {
  const Scalar cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
  PixelComposite<Scalar> out;
  for (const auto& [splat, shift] : front_to_back) {
    const Scalar dx = x[0] - (splat.pixel_mean[0] + shift);
    const Scalar dy = x[1] - splat.pixel_mean[1];
    const Scalar d2 = splat.cov2d_inv(0, 0) * dx * dx +
                      Scalar(2) * splat.cov2d_inv(0, 1) * dx * dy +
                      splat.cov2d_inv(1, 1) * dy * dy;
    if (d2 > cutoff2) continue;
    const Scalar alpha =
        std::min(settings.alpha_clamp, splat.opacity * std::exp(-d2 / Scalar(2)));
    const Scalar t_next = out.transmittance * (Scalar(1) - alpha);
    if (t_next < settings.transmittance_floor) break;
    out.color += splat.color * (alpha * out.transmittance);
    out.transmittance = t_next;
    ++out.composited;
  }
  return out;
}

/// One seam-aware occurrence of a splat: the same 2D Gaussian drawn at
/// pixel_mean.x + shift, shift in {-W, 0, +W}.
template <class Scalar>
struct SplatInstance {
  int splat;       // index into RenderOutput::splats
  Scalar shift;    // horizontal duplication offset, pixels
};

/// Forward render products plus everything the backward pass needs to
/// replay compositing exactly: the projected splats, the globally ordered
/// seam instances, the per-tile instance lists, and per-pixel compositing
/// state (final transmittance and how far along the instance list the
/// pixel walked before terminating).
template <class Scalar>
struct RenderOutput {
  ErpImage<Scalar> image;
  Eigen::ArrayXX<Scalar> transmittance;  // final T per pixel
  Eigen::ArrayXXi walked;                // entries examined per pixel (exclusive)
  std::vector<Splat2D<Scalar>> splats;
  std::vector<SplatInstance<Scalar>> instances;  // sorted by (depth, index, shift)
  std::vector<int> tile_offsets;  // size tiles+1, into tile_entries
  std::vector<int> tile_entries;  // instance ids, per tile in global order
  int tiles_x = 0, tiles_y = 0;
};

namespace detail {

/// Pixel-box span of an instance, clipped to the image; false if empty.
template <class Scalar>
inline bool instance_box(const Splat2D<Scalar>& splat, Scalar shift, int width,
                         int height, int box[4]) {
  const Scalar cx = splat.pixel_mean[0] + shift;
  const Scalar cy = splat.pixel_mean[1];
  const Scalar r = splat.radius;
  // Pixel centers sit at integer + 0.5; pixel ix is covered when
  // ix + 0.5 lies within [c - r, c + r].
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - Scalar(0.5))) + 1);
  const int x1 = std::min(width - 1, static_cast<int>(std::floor(cx + r - Scalar(0.5))));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - Scalar(0.5))) + 1);
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(cy + r - Scalar(0.5))));
  if (x0 > x1 || y0 > y1) return false;
  box[0] = x0; box[1] = x1; box[2] = y0; box[3] = y1;
  return true;
}

}  // namespace detail

/// Projects, seam-duplicates, sorts, and bins the cloud for one camera.
/// Split out of render() so the backward pass can reuse the exact same
/// structures.
template <class Scalar>
inline RenderOutput<Scalar> prepare_render(const GaussianCloud<Scalar>& cloud,
                                           const CameraPose<Scalar>& camera,
                                           const RenderSettings<Scalar>& settings) {
  camera.validate();
  if (const Eigen::Index bad = cloud.first_non_finite(); bad >= 0)
    throw std::runtime_error("render: non-finite parameter in Gaussian " +
                             std::to_string(bad));

  RenderOutput<Scalar> out;
  const int width = camera.width, height = camera.height;

  out.splats.reserve(static_cast<std::size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    if (auto splat = project_gaussian(cloud, i, camera, settings))
      out.splats.push_back(*splat);

  // Seam duplication: an instance exists for every shift whose pixel box
  // still touches the image. The cutoff ellipse is contained in the box,
  // so spurious instances can never contribute.
  const Scalar shifts[3] = {-Scalar(width), Scalar(0), Scalar(width)};
  for (int s = 0; s < static_cast<int>(out.splats.size()); ++s) {
    int box[4];
    for (const Scalar shift : shifts)
      if (detail::instance_box(out.splats[static_cast<std::size_t>(s)], shift,
                               width, height, box))
        out.instances.push_back({s, shift});
  }

  // Global compositing order: front-to-back with a total tie-break so the
  // result is independent of prior ordering and thread count.
  std::sort(out.instances.begin(), out.instances.end(),
            [&](const SplatInstance<Scalar>& a, const SplatInstance<Scalar>& b) {
              const auto& sa = out.splats[static_cast<std::size_t>(a.splat)];
              const auto& sb = out.splats[static_cast<std::size_t>(b.splat)];
              if (sa.depth != sb.depth) return sa.depth < sb.depth;
              if (sa.index != sb.index) return sa.index < sb.index;
              return a.shift < b.shift;
            });

  out.tiles_x = (width + settings.tile_size - 1) / settings.tile_size;
  out.tiles_y = (height + settings.tile_size - 1) / settings.tile_size;
  const int n_tiles = out.tiles_x * out.tiles_y;
  out.tile_offsets.assign(static_cast<std::size_t>(n_tiles) + 1, 0);

  // Two passes: count entries per tile, then fill in instance order so each
  // tile list inherits the global sort.
  auto tile_span = [&](const SplatInstance<Scalar>& inst, int span[4]) {
    int box[4];
    if (!detail::instance_box(out.splats[static_cast<std::size_t>(inst.splat)],
                              inst.shift, width, height, box))
      return false;
    span[0] = box[0] / settings.tile_size;
    span[1] = box[1] / settings.tile_size;
    span[2] = box[2] / settings.tile_size;
    span[3] = box[3] / settings.tile_size;
    return true;
  };
  for (const auto& inst : out.instances) {
    int span[4];
    if (!tile_span(inst, span)) continue;
    for (int ty = span[2]; ty <= span[3]; ++ty)
      for (int tx = span[0]; tx <= span[1]; ++tx)
        ++out.tile_offsets[static_cast<std::size_t>(ty * out.tiles_x + tx) + 1];
  }
  for (std::size_t t = 1; t < out.tile_offsets.size(); ++t)
    out.tile_offsets[t] += out.tile_offsets[t - 1];
  out.tile_entries.resize(static_cast<std::size_t>(out.tile_offsets.back()));
  std::vector<int> cursor(out.tile_offsets.begin(), out.tile_offsets.end() - 1);
  for (int e = 0; e < static_cast<int>(out.instances.size()); ++e) {
    int span[4];
    if (!tile_span(out.instances[static_cast<std::size_t>(e)], span)) continue;
    for (int ty = span[2]; ty <= span[3]; ++ty)
      for (int tx = span[0]; tx <= span[1]; ++tx)
        out.tile_entries[static_cast<std::size_t>(
            cursor[static_cast<std::size_t>(ty * out.tiles_x + tx)]++)] = e;
  }
  return out;
}

/// Tile-binned forward render: front-to-back alpha compositing per pixel,
/// parallel over tiles (disjoint pixel ownership, no synchronization).
template <class Scalar>
inline RenderOutput<Scalar> render(const GaussianCloud<Scalar>& cloud,
                                   const CameraPose<Scalar>& camera,
                                   const RenderSettings<Scalar>& settings) {
  RenderOutput<Scalar> out = prepare_render(cloud, camera, settings);
  const int width = camera.width, height = camera.height;
  out.image.set_zero(height, width);
  out.transmittance.setOnes(height, width);
  out.walked.setZero(height, width);

  const Scalar cutoff2 = settings.cutoff_sigma * settings.cutoff_sigma;
  const int n_tiles = out.tiles_x * out.tiles_y;
  parallel_for(0, n_tiles, settings.threads, [&](int tile) {
    const int tx = tile % out.tiles_x, ty = tile / out.tiles_x;
    const int x0 = tx * settings.tile_size;
    const int y0 = ty * settings.tile_size;
    const int x1 = std::min(width, x0 + settings.tile_size);
    const int y1 = std::min(height, y0 + settings.tile_size);
    const int e0 = out.tile_offsets[static_cast<std::size_t>(tile)];
    const int e1 = out.tile_offsets[static_cast<std::size_t>(tile) + 1];

    for (int py = y0; py < y1; ++py) {
      for (int px = x0; px < x1; ++px) {
        const Vec2<Scalar> pix(Scalar(px) + Scalar(0.5), Scalar(py) + Scalar(0.5));
        Scalar t = Scalar(1);
        Vec3<Scalar> color = Vec3<Scalar>::Zero();
        int walked = e1 - e0;
        for (int e = e0; e < e1; ++e) {
          const auto& inst =
              out.instances[static_cast<std::size_t>(out.tile_entries[static_cast<std::size_t>(e)])];
          const auto& splat = out.splats[static_cast<std::size_t>(inst.splat)];
          const Scalar dx = pix[0] - (splat.pixel_mean[0] + inst.shift);
          const Scalar dy = pix[1] - splat.pixel_mean[1];
          const Scalar d2 = splat.cov2d_inv(0, 0) * dx * dx +
                            Scalar(2) * splat.cov2d_inv(0, 1) * dx * dy +
                            splat.cov2d_inv(1, 1) * dy * dy;
          if (d2 > cutoff2) continue;
          const Scalar alpha =
              std::min(settings.alpha_clamp, splat.opacity * std::exp(-d2 / Scalar(2)));
          const Scalar t_next = t * (Scalar(1) - alpha);
          if (t_next < settings.transmittance_floor) {
            walked = e - e0;  // this entry and everything behind it excluded
            break;
          }
          color += splat.color * (alpha * t);
          t = t_next;
        }
        out.image.at(0, py, px) = color[0];
        out.image.at(1, py, px) = color[1];
        out.image.at(2, py, px) = color[2];
        out.transmittance(py, px) = t;
        out.walked(py, px) = walked;
      }
    }
  });
  return out;
}

}  // namespace odgs
