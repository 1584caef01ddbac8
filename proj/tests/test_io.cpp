#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "odgs/io.hpp"
#include "odgs/projection.hpp"

using namespace odgs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "odgs_io_tests";
  fs::create_directories(dir);
  return dir;
}

fs::path scratch_file(const std::string& name) { return scratch_dir() / name; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

void touch(const fs::path& path) { std::ofstream out(path); }

GaussianCloud<double> random_cloud(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  GaussianCloud<double> cloud;
  cloud.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      cloud.means(i, c) = 3.0 * uni(rng);
      cloud.log_scales(i, c) = -2.0 + uni(rng);
      cloud.colors(i, c) = 0.5 + 0.45 * uni(rng);
    }
    for (int c = 0; c < 4; ++c) cloud.rotations(i, c) = uni(rng);
    cloud.raw_opacities[i] = 2.0 * uni(rng);
  }
  return cloud;
}

bool clouds_identical(const GaussianCloud<double>& a,
                      const GaussianCloud<double>& b) {
  return a.size() == b.size() && (a.means.array() == b.means.array()).all() &&
         (a.rotations.array() == b.rotations.array()).all() &&
         (a.log_scales.array() == b.log_scales.array()).all() &&
         (a.raw_opacities.array() == b.raw_opacities.array()).all() &&
         (a.colors.array() == b.colors.array()).all();
}

std::string checkpoint_header_14(const std::string& extra_comment) {
  std::string h = "ply\nformat ascii 1.0\n";
  if (!extra_comment.empty()) h += "comment " + extra_comment + "\n";
  h += "element vertex 1\n";
  for (const char* name :
       {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0",
        "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
    h += std::string("property float ") + name + "\n";
  h += "end_header\n";
  return h;
}

}  // namespace

TEST_CASE("a one-point ascii cloud initializes a single white gaussian") {
  const fs::path path = scratch_file("one_point.ply");
  write_text(path,
             "ply\n"
             "format ascii 1.0\n"
             "element vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property uchar red\nproperty uchar green\nproperty uchar blue\n"
             "end_header\n"
             "0 0 0 255 255 255\n");
  const PointCloud points = load_pointcloud(path);
  REQUIRE(points.positions.rows() == 1);
  CHECK(points.positions.row(0).norm() == 0.0);
  CHECK(points.colors.row(0) == Eigen::RowVector3d(1, 1, 1));

  const GaussianCloud<double> cloud = init_from_points(points);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.colors.row(0) == Eigen::RowVector3d(1, 1, 1));
  CHECK(cloud.raw_opacities[0] == doctest::Approx(logit(0.1)).epsilon(1e-15));
  CHECK(cloud.rotations.row(0) == Eigen::RowVector4d(1, 0, 0, 0));
  // No neighbors to measure against: the fallback size applies.
  CHECK(cloud.log_scales(0, 0) == doctest::Approx(std::log(0.1)).epsilon(1e-15));
}

TEST_CASE("neighbor distances set the initial scales") {
  // Three collinear points spaced d apart: the middle point's two nearest
  // neighbors are both at d, the end points see d and 2d (mean 1.5 d).
  const double d = 0.3;
  PointCloud points;
  points.positions.resize(3, 3);
  points.positions << 0, 0, 0, d, 0, 0, 2 * d, 0, 0;
  points.colors = MatX3<double>::Constant(3, 3, 0.5);

  const GaussianCloud<double> cloud = init_from_points(points);
  CHECK(cloud.log_scales(0, 0) == doctest::Approx(std::log(1.5 * d)).epsilon(1e-12));
  CHECK(cloud.log_scales(1, 1) == doctest::Approx(std::log(d)).epsilon(1e-12));
  CHECK(cloud.log_scales(2, 2) == doctest::Approx(std::log(1.5 * d)).epsilon(1e-12));
  // Scales are isotropic at initialization.
  CHECK(cloud.log_scales(0, 0) == cloud.log_scales(0, 1));
  CHECK(cloud.log_scales(0, 1) == cloud.log_scales(0, 2));
}

TEST_CASE("degenerate clusters floor the initial scale") {
  PointCloud points;
  points.positions = MatX3<double>::Zero(4, 3);  // all coincident
  points.colors = MatX3<double>::Constant(4, 3, 0.5);
  const GaussianCloud<double> cloud = init_from_points(points);
  CHECK(cloud.log_scales(0, 0) == doctest::Approx(std::log(1e-7)).epsilon(1e-12));
}

TEST_CASE("binary and ascii point clouds load identically") {
  PointCloud points;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uni(-4.0, 4.0);
  points.positions.resize(23, 3);
  points.colors.resize(23, 3);
  for (Eigen::Index i = 0; i < 23; ++i)
    for (int c = 0; c < 3; ++c) {
      points.positions(i, c) = uni(rng);
      points.colors(i, c) = std::abs(uni(rng)) / 4.0;
    }

  const fs::path bin_path = scratch_file("roundtrip_bin.ply");
  const fs::path asc_path = scratch_file("roundtrip_asc.ply");
  save_pointcloud(points, bin_path, /*binary=*/true);
  save_pointcloud(points, asc_path, /*binary=*/false);

  const PointCloud from_bin = load_pointcloud(bin_path);
  const PointCloud from_asc = load_pointcloud(asc_path);
  REQUIRE(from_bin.positions.rows() == 23);
  CHECK((from_bin.positions.array() == from_asc.positions.array()).all());
  CHECK((from_bin.colors.array() == from_asc.colors.array()).all());

  // Positions survive at single precision, colors at 8 bits.
  CHECK((from_bin.positions.cast<float>().cast<double>().array() ==
         from_bin.positions.array())
            .all());
  CHECK((from_bin.positions - points.positions).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((from_bin.colors - points.colors.cwiseMin(1.0)).cwiseAbs().maxCoeff() <
        0.5 / 255.0 + 1e-12);
}

TEST_CASE("float-typed colors are not rescaled") {
  const fs::path path = scratch_file("float_colors.ply");
  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property float red\nproperty float green\nproperty float blue\n"
             "end_header\n"
             "1 2 3 0.25 0.5 0.75\n");
  const PointCloud points = load_pointcloud(path);
  CHECK(points.colors.row(0) == Eigen::RowVector3d(0.25, 0.5, 0.75));
}

TEST_CASE("checkpoints reload to the values they stored") {
  const GaussianCloud<double> original = random_cloud(17, 5);
  const fs::path path_a = scratch_file("ckpt_a.ply");
  const fs::path path_b = scratch_file("ckpt_b.ply");

  save_checkpoint(original, path_a);
  const GaussianCloud<double> once = load_checkpoint(path_a);
  REQUIRE(once.size() == original.size());

  // Storage is single precision: reloaded values match the quantized
  // originals, and a second save/load cycle is a bitwise fixpoint.
  CHECK((once.means - original.means).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((once.raw_opacities.cast<float>().cast<double>().array() ==
         once.raw_opacities.array())
            .all());

  save_checkpoint(once, path_b);
  const GaussianCloud<double> twice = load_checkpoint(path_b);
  CHECK(clouds_identical(once, twice));

  // Raw fields store the float cast directly.
  for (int c = 0; c < 3; ++c)
    CHECK(once.means(3, c) == double(float(original.means(3, c))));
  CHECK(once.raw_opacities[3] == double(float(original.raw_opacities[3])));
  for (int c = 0; c < 4; ++c)
    CHECK(once.rotations(3, c) == double(float(original.rotations(3, c))));
}

TEST_CASE("checkpoint color channels pass through the degree-zero basis") {
  GaussianCloud<double> cloud;
  cloud.resize(1);
  cloud.means.row(0) << 0, 0, 2;
  cloud.colors.row(0) << 0.9, 0.5, 0.2;
  const fs::path path = scratch_file("ckpt_color.ply");
  save_checkpoint(cloud, path);
  const GaussianCloud<double> loaded = load_checkpoint(path);

  const double k = 0.28209479177387814;
  CHECK(loaded.colors(0, 0) == 0.5 + k * double(float((0.9 - 0.5) / k)));
  // A color of exactly one half encodes as a zero coefficient.
  CHECK(loaded.colors(0, 1) == 0.5);
  CHECK(loaded.colors(0, 2) == 0.5 + k * double(float((0.2 - 0.5) / k)));
}

TEST_CASE("newer checkpoint versions are rejected, older ones accepted") {
  const std::string row = "0 0 1 0 0 0 0 -1 -1 -1 1 0 0 0\n";

  const fs::path newer = scratch_file("ckpt_newer.ply");
  write_text(newer, checkpoint_header_14("odgs_checkpoint_version 2") + row);
  CHECK_THROWS_WITH_AS(load_checkpoint(newer),
                       doctest::Contains("version 2"), std::runtime_error);

  // Files without a version comment predate versioning and are readable.
  const fs::path unversioned = scratch_file("ckpt_unversioned.ply");
  write_text(unversioned, checkpoint_header_14("") + row);
  const GaussianCloud<double> cloud = load_checkpoint(unversioned);
  REQUIRE(cloud.size() == 1);
  CHECK(cloud.means.row(0) == Eigen::RowVector3d(0, 0, 1));
  CHECK(cloud.colors.row(0) == Eigen::RowVector3d(0.5, 0.5, 0.5));
}

TEST_CASE("missing properties and truncated data name the problem") {
  const fs::path no_blue = scratch_file("no_blue.ply");
  write_text(no_blue,
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property uchar red\nproperty uchar green\n"
             "end_header\n"
             "0 0 0 10 20\n");
  CHECK_THROWS_WITH_AS(load_pointcloud(no_blue),
                       doctest::Contains("missing required property 'blue'"),
                       std::runtime_error);

  // A binary file that promises two vertices but stores one.
  const fs::path truncated = scratch_file("truncated.ply");
  {
    std::ofstream out(truncated, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
           "property float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\n"
           "end_header\n";
    const float zero = 0;
    for (int c = 0; c < 3; ++c)
      out.write(reinterpret_cast<const char*>(&zero), 4);
    const unsigned char white[3] = {255, 255, 255};
    out.write(reinterpret_cast<const char*>(white), 3);
  }
  CHECK_THROWS_WITH_AS(load_pointcloud(truncated), doctest::Contains("byte"),
                       std::runtime_error);

  const fs::path not_ply = scratch_file("not_a.ply");
  write_text(not_ply, "solid teapot\n");
  CHECK_THROWS_AS(load_pointcloud(not_ply), std::runtime_error);
  CHECK_THROWS_AS(load_pointcloud(scratch_file("does_not_exist.ply")),
                  std::runtime_error);
}

TEST_CASE("manifests parse poses, splits, and relative paths") {
  const fs::path dir = scratch_dir();
  touch(dir / "front.png");
  touch(dir / "side.png");
  write_text(dir / "cloud.ply",
             "ply\nformat ascii 1.0\nelement vertex 1\n"
             "property float x\nproperty float y\nproperty float z\n"
             "property uchar red\nproperty uchar green\nproperty uchar blue\n"
             "end_header\n0 0 0 128 128 128\n");

  std::ostringstream text;
  text << "# scene with two views\n"
       << "pointcloud cloud.ply\n"
       << "view front.png 64 32  1 0 0  0 1 0  0 0 1  0 0 0\n"
       << "view side.png 64 32  " << std::setprecision(17) << std::cos(1.0)
       << " 0 " << -std::sin(1.0) << "  0 1 0  " << std::sin(1.0) << " 0 "
       << std::cos(1.0) << "  0.5 -0.25 2 test\n";
  const fs::path path = dir / "scene.txt";
  write_text(path, text.str());

  const SceneManifest manifest = load_manifest(path);
  CHECK(manifest.pointcloud_path == dir / "cloud.ply");
  REQUIRE(manifest.views.size() == 2);

  const auto& front = manifest.views[0];
  CHECK(front.image_path == dir / "front.png");
  CHECK(front.camera.width == 64);
  CHECK(front.camera.height == 32);
  CHECK(front.camera.rotation == Mat3<double>::Identity());
  CHECK(front.camera.translation == Vec3<double>::Zero());
  CHECK_FALSE(front.is_test);

  const auto& side = manifest.views[1];
  CHECK(side.is_test);
  CHECK(side.camera.translation == Vec3<double>(0.5, -0.25, 2));
  // A rotation about +y by one radian, written row-major.
  Mat3<double> yaw;
  yaw << std::cos(1.0), 0, -std::sin(1.0), 0, 1, 0, std::sin(1.0), 0,
      std::cos(1.0);
  CHECK((side.camera.rotation - yaw).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("slightly skewed poses snap back to rotations") {
  const fs::path dir = scratch_dir();
  touch(dir / "v.png");
  Mat3<double> rot;
  rot = Eigen::AngleAxisd(0.7, Vec3<double>(1, 2, -1).normalized())
            .toRotationMatrix();
  Mat3<double> skewed = rot;
  skewed(0, 1) += 2e-4;  // within the repair band

  std::ostringstream text;
  text << "view v.png 128 64" << std::setprecision(17);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) text << " " << skewed(r, c);
  text << " 0 0 0\n";
  const fs::path path = dir / "skewed.txt";
  write_text(path, text.str());

  const SceneManifest manifest = load_manifest(path);
  const Mat3<double>& repaired = manifest.views[0].camera.rotation;
  CHECK((repaired.transpose() * repaired - Mat3<double>::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-14);
  CHECK((repaired - rot).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("malformed manifests report the offending line") {
  const fs::path dir = scratch_dir();
  touch(dir / "v.png");

  const auto expect_error = [&](const std::string& body,
                                const std::string& needle) {
    const fs::path path = dir / "bad.txt";
    write_text(path, body);
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains(needle.c_str()),
                         std::runtime_error);
  };

  // Eleven pose numbers instead of twelve.
  expect_error("# comment\nview v.png 64 32 1 0 0 0 1 0 0 0 1 0 0\n", ":2:");
  // A pose that is far from orthonormal.
  expect_error("view v.png 64 32  1 0.5 0  0 1 0  0 0 1  0 0 0\n",
               "not orthonormal");
  // A reflection (determinant -1).
  expect_error("view v.png 64 32  -1 0 0  0 1 0  0 0 1  0 0 0\n", "reflection");
  // Not an equirectangular aspect ratio.
  expect_error("view v.png 64 64  1 0 0  0 1 0  0 0 1  0 0 0\n",
               "width == 2 * height");
  // Unknown keyword and unknown split tag.
  expect_error("vew v.png 64 32 1 0 0 0 1 0 0 0 1 0 0 0\n", "unknown keyword");
  expect_error("view v.png 64 32 1 0 0 0 1 0 0 0 1 0 0 0 validation\n",
               "unknown split tag");
  // Referencing an image that does not exist.
  expect_error("view ghost.png 64 32 1 0 0 0 1 0 0 0 1 0 0 0\n",
               "does not exist");
  // No views at all.
  expect_error("# empty\n", "no views");
}

TEST_CASE("manifests round-trip through save and load") {
  const fs::path dir = scratch_dir();
  touch(dir / "a.png");
  touch(dir / "b.png");

  SceneManifest manifest;
  ManifestView a;
  a.image_path = dir / "a.png";
  a.camera.rotation =
      Eigen::AngleAxisd(2.1, Vec3<double>(0.3, -1, 0.2).normalized())
          .toRotationMatrix();
  a.camera.translation << 0.125, -3.5, 0.875;
  a.camera.width = 512;
  a.camera.height = 256;
  ManifestView b = a;
  b.image_path = dir / "b.png";
  b.camera.rotation =
      tangent_rotation(SphericalAngles<double>{1.0, -0.5}).transpose();
  b.is_test = true;
  manifest.views = {a, b};

  const fs::path path = dir / "roundtrip.txt";
  save_manifest(manifest, path);
  const SceneManifest loaded = load_manifest(path);
  REQUIRE(loaded.views.size() == 2);
  CHECK(loaded.pointcloud_path.empty());
  for (int i = 0; i < 2; ++i) {
    CHECK(loaded.views[i].image_path == manifest.views[i].image_path);
    CHECK((loaded.views[i].camera.rotation - manifest.views[i].camera.rotation)
              .cwiseAbs()
              .maxCoeff() < 1e-14);
    CHECK(loaded.views[i].camera.translation ==
          manifest.views[i].camera.translation);
    CHECK(loaded.views[i].is_test == manifest.views[i].is_test);
  }
}
