#pragma once

#include <Eigen/Geometry>

#include "odgs/types.hpp"

namespace odgs {

/// Normalizes a (w, x, y, z) quaternion. Rejects near-zero input instead of
/// silently producing garbage rotations.
template <class Scalar>
inline Vec4<Scalar> normalize_quaternion(const Vec4<Scalar>& q) {
  const Scalar n = q.norm();
  if (!(n > Scalar(1e-12)))
    throw std::invalid_argument("normalize_quaternion: near-zero quaternion");
  return q / n;
}

template <class Scalar>
inline Mat3<Scalar> rotation_from_quaternion(const Vec4<Scalar>& q_raw) {
  const Vec4<Scalar> q = normalize_quaternion(q_raw);
  return Eigen::Quaternion<Scalar>(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

/// World-space covariance of one Gaussian, Sigma = (R S)(R S)^T with
/// R from the (unnormalized) quaternion and S = diag(exp(log_scales)).
/// Symmetric positive semi-definite by construction.
template <class Scalar>
inline Mat3<Scalar> build_covariance(const Vec4<Scalar>& quaternion,
                                     const Vec3<Scalar>& log_scales) {
  if (!quaternion.allFinite() || !log_scales.allFinite())
    throw std::invalid_argument("build_covariance: non-finite parameters");
  const Mat3<Scalar> r = rotation_from_quaternion(quaternion);
  const Vec3<Scalar> s = log_scales.array().exp();
  const Mat3<Scalar> m = r * s.asDiagonal();
  return m * m.transpose();
}

}  // namespace odgs
