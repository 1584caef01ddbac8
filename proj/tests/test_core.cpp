#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "odgs/covariance.hpp"
#include "odgs/types.hpp"

using namespace odgs;

namespace {

// Independent quaternion-to-rotation oracle: R = I + 2w[v]x + 2[v]x^2 for a
// unit quaternion (w, v), written without touching the library's path.
Eigen::Matrix3d rotation_oracle(Eigen::Vector4d q) {
  q.normalize();
  const double w = q[0];
  Eigen::Matrix3d vx;
  vx << 0, -q[3], q[2],
        q[3], 0, -q[1],
        -q[2], q[1], 0;
  return Eigen::Matrix3d::Identity() + 2.0 * w * vx + 2.0 * vx * vx;
}

}  // namespace

TEST_CASE("sigmoid and logit invert each other") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> dist(-8.0, 8.0);
  for (int i = 0; i < 100; ++i) {
    const double x = dist(rng);
    CHECK(logit(sigmoid(x)) == doctest::Approx(x).epsilon(1e-9));
  }
  CHECK_THROWS_AS(logit(0.0), std::invalid_argument);
  CHECK_THROWS_AS(logit(1.0), std::invalid_argument);
  CHECK_THROWS_AS(logit(-0.5), std::invalid_argument);
}

TEST_CASE("build_covariance: identity rotation cases") {
  const Eigen::Vector4d identity(1, 0, 0, 0);

  const Eigen::Matrix3d eye =
      build_covariance<double>(identity, Eigen::Vector3d::Zero());
  CHECK((eye - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-15);

  const Eigen::Matrix3d stretched = build_covariance<double>(
      identity, Eigen::Vector3d(std::log(2.0), 0.0, 0.0));
  Eigen::Matrix3d expected = Eigen::Matrix3d::Identity();
  expected(0, 0) = 4.0;
  CHECK((stretched - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("build_covariance matches the independent rotation oracle") {
  std::mt19937 rng(11);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector4d q =
        Eigen::Vector4d(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    if (q.norm() < 1e-3) continue;
    const Eigen::Vector3d s(gauss(rng) * 0.5, gauss(rng) * 0.5, gauss(rng) * 0.5);

    const Eigen::Matrix3d sigma = build_covariance<double>(q, s);
    const Eigen::Matrix3d r = rotation_oracle(q);
    const Eigen::Matrix3d expected =
        r * (2.0 * s.array()).exp().matrix().asDiagonal() * r.transpose();
    CHECK((sigma - expected).cwiseAbs().maxCoeff() < 1e-12);

    // Symmetric PSD by construction.
    CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(sigma);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-14);

    // Rotation preserves the trace of S^2.
    CHECK(sigma.trace() ==
          doctest::Approx((2.0 * s.array()).exp().sum()).epsilon(1e-12));

    // Quaternion sign flip maps to the same rotation.
    const Eigen::Matrix3d flipped = build_covariance<double>(-q, s);
    CHECK((sigma - flipped).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("build_covariance rejects bad quaternions") {
  CHECK_THROWS_AS(build_covariance<double>(Eigen::Vector4d::Zero(),
                                           Eigen::Vector3d::Zero()),
                  std::invalid_argument);
  Eigen::Vector4d q(1, 0, 0, 0);
  Eigen::Vector3d s(0, 0, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(build_covariance<double>(q, s), std::invalid_argument);
}

TEST_CASE("GaussianCloud bookkeeping") {
  GaussianCloud<float> cloud;
  cloud.resize(3);
  CHECK(cloud.size() == 3);
  CHECK(cloud.rotations(0, 0) == 1.0f);  // identity quaternion default
  CHECK(cloud.opacity(0) == doctest::Approx(0.5));
  CHECK(cloud.scale(1).isApprox(Eigen::Vector3f::Ones()));

  cloud.means.row(0) << 1, 2, 3;
  cloud.raw_opacities[2] = logit(0.25f);
  CHECK(cloud.opacity(2) == doctest::Approx(0.25).epsilon(1e-6));

  GaussianCloud<float> extra;
  extra.resize(2);
  extra.means.row(1) << 9, 9, 9;
  cloud.append(extra);
  CHECK(cloud.size() == 5);
  CHECK(cloud.means(4, 0) == 9.0f);
  CHECK(cloud.means(0, 2) == 3.0f);

  cloud.keep_rows({4, 0});
  CHECK(cloud.size() == 2);
  CHECK(cloud.means(0, 0) == 9.0f);
  CHECK(cloud.means(1, 2) == 3.0f);

  CHECK(cloud.first_non_finite() == -1);
  cloud.log_scales(1, 1) = std::numeric_limits<float>::infinity();
  CHECK(cloud.first_non_finite() == 1);
}

TEST_CASE("TrainState tracks cloud growth and compaction") {
  TrainState<float> state;
  state.init(2);
  state.means_m(1, 0) = 3.0f;
  state.grad_accum[1] = 7.0f;
  state.grad_count[1] = 4;

  state.append_zeros(2);
  CHECK(state.means_m.rows() == 4);
  CHECK(state.means_m(3, 0) == 0.0f);
  CHECK(state.grad_accum[1] == 7.0f);

  state.keep_rows({1, 3});
  CHECK(state.means_m.rows() == 2);
  CHECK(state.means_m(0, 0) == 3.0f);
  CHECK(state.grad_count[0] == 4);
  CHECK(state.grad_count[1] == 0);
}

TEST_CASE("CameraPose validation") {
  CameraPose<double> cam;
  cam.width = 100;
  cam.height = 50;
  CHECK_NOTHROW(cam.validate());

  cam.height = 49;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);

  cam.height = 50;
  cam.rotation(0, 0) = 2.0;
  CHECK_THROWS_AS(cam.validate(), std::invalid_argument);
}

TEST_CASE("ErpImage storage and diffing") {
  ErpImage<float> a(4, 8), b(4, 8);
  CHECK(a.height() == 4);
  CHECK(a.width() == 8);
  a.at(2, 1, 5) = 0.75f;
  CHECK(a.max_abs_diff(b) == doctest::Approx(0.75));
  CHECK(a.all_finite());
  a.at(0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(a.all_finite());
}
