#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <cmath>

#include "dfo/errors.hpp"

namespace dfo {

using Vector3 = Eigen::Vector3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

/// Element of se(3): translational velocity first, rotational (axis-angle) second.
struct Twist {
  Vector3 v = Vector3::Zero();
  Vector3 w = Vector3::Zero();

  Twist() = default;
  Twist(const Vector3& v_, const Vector3& w_) : v(v_), w(w_) {}
  explicit Twist(const Vector6& xi) : v(xi.head<3>()), w(xi.tail<3>()) {}

  Vector6 vector() const {
    Vector6 xi;
    xi << v, w;
    return xi;
  }
  double norm() const { return vector().norm(); }
};

/// Rigid body transform in SE(3), acting as x -> R*x + t.
struct RigidTransform {
  Matrix3 R = Matrix3::Identity();
  Vector3 t = Vector3::Zero();

  RigidTransform() = default;
  RigidTransform(const Matrix3& R_, const Vector3& t_) : R(R_), t(t_) {}

  static RigidTransform identity() { return {}; }

  Vector3 operator*(const Vector3& x) const { return R * x + t; }

  /// Orthonormality and determinant drift, for invariant checks.
  double rotation_drift() const {
    return (R.transpose() * R - Matrix3::Identity()).cwiseAbs().maxCoeff();
  }
};

/// Pinhole camera intrinsics (no distortion).
struct Intrinsics {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
};

/// Continuous image coordinates; (0,0) is the center of the top-left pixel.
struct Pixel {
  double u = 0.0, v = 0.0;
};

inline Matrix3 skew(const Vector3& a) {
  Matrix3 s;
  s << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return s;
}

/// se(3) -> SE(3) exponential map. Rodrigues closed form with a 2nd-order
/// series branch below ||w|| = 1e-8 to avoid cancellation.
inline RigidTransform exp_map(const Twist& xi) {
  const double theta = xi.w.norm();
  const Matrix3 W = skew(xi.w);
  const Matrix3 W2 = W * W;

  double a, b, c;  // R = I + a W + b W^2,  V = I + b W + c W^2
  if (theta < 1e-8) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / t2;
    c = (theta - std::sin(theta)) / (t2 * theta);
  }

  RigidTransform T;
  T.R = Matrix3::Identity() + a * W + b * W2;
  T.t = (Matrix3::Identity() + b * W + c * W2) * xi.v;  // left Jacobian times v
  return T;
}

/// SE(3) -> se(3). Throws AngleNearPi when the rotation angle is within 1e-6
/// of pi, where the axis is not uniquely determined.
inline Twist log_map(const RigidTransform& T) {
  const double cos_theta = std::clamp((T.R.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  if (M_PI - theta < 1e-6) throw AngleNearPi();

  Vector3 w;
  const Matrix3 A = T.R - T.R.transpose();
  const Vector3 vee(A(2, 1), A(0, 2), A(1, 0));
  if (theta < 1e-8) {
    w = 0.5 * vee;  // first order; O(theta^3) terms negligible here
  } else {
    w = theta / (2.0 * std::sin(theta)) * vee;
  }

  const Matrix3 W = skew(w);
  const Matrix3 W2 = W * W;
  double d;  // V^-1 = I - W/2 + d W^2
  if (theta < 1e-8) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    d = (1.0 - theta * std::cos(theta / 2.0) / (2.0 * std::sin(theta / 2.0))) / (theta * theta);
  }
  const Matrix3 Vinv = Matrix3::Identity() - 0.5 * W + d * W2;

  return Twist(Vinv * T.t, w);
}

inline RigidTransform inverse(const RigidTransform& T) {
  RigidTransform inv;
  inv.R = T.R.transpose();
  inv.t = -(inv.R * T.t);
  return inv;
}

/// (a o b) acts as a(b(x)). Re-orthonormalizes the rotation when accumulated
/// drift exceeds 1e-12.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform c;
  c.R = a.R * b.R;
  c.t = a.R * b.t + a.t;
  if (c.rotation_drift() > 1e-12) {
    Eigen::JacobiSVD<Matrix3> svd(c.R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Matrix3 fixed = svd.matrixU() * svd.matrixV().transpose();
    if (fixed.determinant() < 0) {
      Matrix3 flip = Matrix3::Identity();
      flip(2, 2) = -1.0;
      fixed = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    c.R = fixed;
  }
  return c;
}

/// Lift a pixel with known depth to a 3D camera-frame point, z * K^-1 * (u,v,1).
inline Vector3 backproject(const Pixel& p, double z, const Intrinsics& K) {
  if (!(z > 0.0)) throw NonPositiveDepth();
  return {z * (p.u - K.cx) / K.fx, z * (p.v - K.cy) / K.fy, z};
}

inline Pixel project(const Vector3& X, const Intrinsics& K) {
  if (X.z() <= 1e-9) throw PointBehindCamera();
  return {K.fx * X.x() / X.z() + K.cx, K.fy * X.y() / X.z() + K.cy};
}

struct WarpedPoint {
  Pixel pixel;
  double depth = 0.0;  // z of the transformed point, for diagnostics
};

/// Projective warp: backproject at depth z, apply T, reproject.
inline WarpedPoint warp_point(const Pixel& p, double z, const RigidTransform& T,
                              const Intrinsics& K) {
  const Vector3 X = T * backproject(p, z, K);
  return {project(X, K), X.z()};
}

/// Intrinsics of pyramid level l (1-based): focal lengths scale by 2^(1-l),
/// principal point follows the half-pixel convention cx' = (cx + 0.5)/2 - 0.5
/// per halving, keeping (0,0) at the center of the top-left pixel.
inline Intrinsics rescale_intrinsics(const Intrinsics& K, int level) {
  if (level < 1 || level > 4) throw InvalidLevel(level);
  Intrinsics out = K;
  for (int l = 1; l < level; ++l) {
    out.fx /= 2.0;
    out.fy /= 2.0;
    out.cx = (out.cx + 0.5) / 2.0 - 0.5;
    out.cy = (out.cy + 0.5) / 2.0 - 0.5;
  }
  return out;
}

}  // namespace dfo
