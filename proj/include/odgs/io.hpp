#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "odgs/types.hpp"

namespace odgs {

/// Degree-zero spherical-harmonic basis constant; checkpoint files store
/// colors as f_dc with color = 0.5 + kSh0 * f_dc, the community splat
/// convention.
inline constexpr double kSh0 = 0.28209479177387814;

/// Version written into (and accepted from) checkpoint files. Files with a
/// higher version are rejected; files without a version comment are read as
/// version 1 for interoperability with externally produced splats.
inline constexpr int kCheckpointVersion = 1;

/// Raw SfM-style points: positions with linear [0,1] colors.
struct PointCloud {
  MatX3<double> positions;
  MatX3<double> colors;
};

/// One training/evaluation view: the target image and its pose.
struct ManifestView {
  std::filesystem::path image_path;
  CameraPose<double> camera;
  bool is_test = false;
};

struct SceneManifest {
  std::filesystem::path pointcloud_path;
  std::vector<ManifestView> views;
};

/// Reads a polygon-format point file (ascii or little-endian binary) with
/// at least x, y, z and red, green, blue vertex properties. uchar colors
/// are scaled to [0,1]. Parse failures name the offending byte offset.
PointCloud load_pointcloud(const std::filesystem::path& path);

/// Writes points in the same polygon format (positions as float, colors as
/// uchar).
void save_pointcloud(const PointCloud& points,
                     const std::filesystem::path& path, bool binary = true);

/// Turns SfM points into an initial cloud: isotropic scales at the log of
/// the mean distance to the three nearest neighbors (floored at 1e-7),
/// opacity 0.1, identity rotations, colors straight from the points.
GaussianCloud<double> init_from_points(const PointCloud& points);

/// Persists every Gaussian parameter in its stored (pre-activation) domain
/// as float32 properties x,y,z, f_dc_0..2, opacity, scale_0..2, rot_0..3 —
/// the community splat layout — with a version comment.
void save_checkpoint(const GaussianCloud<double>& cloud,
                     const std::filesystem::path& path);

/// Inverse of save_checkpoint. Rejects newer versions and missing
/// properties; float32 values round-trip exactly.
GaussianCloud<double> load_checkpoint(const std::filesystem::path& path);

/// Line-oriented scene description:
///   pointcloud <path>
///   view <image> <width> <height> <r00 r01 r02 r10 r11 r12 r20 r21 r22
///        tx ty tz> [train|test]
/// '#' starts a comment. Relative paths are resolved against the manifest's
/// directory. Slightly non-orthonormal rotations (||R^T R - I|| < 1e-3) are
/// re-orthonormalized; anything worse, or a reflection, is rejected with
/// its line number.
SceneManifest load_manifest(const std::filesystem::path& path);

void save_manifest(const SceneManifest& manifest,
                   const std::filesystem::path& path);

}  // namespace odgs
