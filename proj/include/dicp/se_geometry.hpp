#pragma once
// Rigid-body transforms in SE(2) and SE(3).
//
// Both dimensions share one storage layout: a 3x3 rotation and a 3-vector
// translation. Planar poses keep the z row/column at identity so that the
// spatial formulas (transform, compose, inverse) apply unchanged. All
// functions are templated on the scalar so that the same code runs on
// doubles and on recorded ad::Var values.
//
// Twist ordering is (translation, rotation): (x, y, phi) in 2D and
// (x, y, z, rx, ry, rz) in 3D.

#include "dicp/autodiff.hpp"
#include "dicp/error.hpp"

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace dicp {

enum class Dim : int { planar = 2, spatial = 3 };

inline int to_int(Dim d) { return static_cast<int>(d); }

inline Dim dim_from_int(int d) {
  if (d == 2) return Dim::planar;
  if (d == 3) return Dim::spatial;
  throw ConfigError("dimension must be 2 or 3, got " + std::to_string(d));
}

/// Number of twist coordinates for a dimension (3 or 6).
inline int twist_size(Dim d) { return d == Dim::planar ? 3 : 6; }

template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Vec6 = Eigen::Matrix<S, 6, 1>;

using Point = Eigen::Vector3d;

template <typename S>
struct BasicTwist {
  Dim dim = Dim::planar;
  Eigen::Matrix<S, Eigen::Dynamic, 1, 0, 6, 1> vector = Eigen::Matrix<S, 3, 1>::Zero();

  static BasicTwist planar(S x, S y, S phi) {
    BasicTwist t;
    t.dim = Dim::planar;
    t.vector.resize(3);
    t.vector << x, y, phi;
    return t;
  }

  static BasicTwist spatial(const Vec6<S>& v) {
    BasicTwist t;
    t.dim = Dim::spatial;
    t.vector = v;
    return t;
  }

  static BasicTwist zero(Dim d) {
    BasicTwist t;
    t.dim = d;
    t.vector.setZero(twist_size(d));
    return t;
  }

  S norm() const {
    using std::sqrt;
    S sq(0.0);
    for (Eigen::Index i = 0; i < vector.size(); ++i) sq += vector[i] * vector[i];
    return sqrt(sq);
  }
};

template <typename S>
struct BasicPose {
  Dim dim = Dim::planar;
  Mat3<S> rotation = Mat3<S>::Identity();
  Vec3<S> translation = Vec3<S>::Zero();

  static BasicPose identity(Dim d) {
    BasicPose p;
    p.dim = d;
    return p;
  }

  /// Planar pose from a heading angle and a translation.
  static BasicPose planar(S x, S y, S heading) {
    using std::cos;
    using std::sin;
    BasicPose p;
    p.dim = Dim::planar;
    const S c = cos(heading);
    const S s = sin(heading);
    p.rotation(0, 0) = c;
    p.rotation(0, 1) = -s;
    p.rotation(1, 0) = s;
    p.rotation(1, 1) = c;
    p.translation << x, y, S(0.0);
    return p;
  }

  Vec3<S> operator*(const Vec3<S>& p) const { return rotation * p + translation; }

  template <typename T>
  BasicPose<T> cast() const {
    BasicPose<T> out;
    out.dim = dim;
    for (int r = 0; r < 3; ++r) {
      out.translation[r] = T(ad::value(translation[r]));
      for (int c = 0; c < 3; ++c) out.rotation(r, c) = T(ad::value(rotation(r, c)));
    }
    return out;
  }
};

using Pose = BasicPose<double>;
using Twist = BasicTwist<double>;

namespace detail {

constexpr double kSmallAngle = 1e-7;
constexpr double kSeriesAngle = 1e-2;
// Log is rejected when the rotation angle is within this distance of pi.
constexpr double kPiMargin = 1e-9;

template <typename S>
Mat3<S> skew(const Vec3<S>& w) {
  Mat3<S> m;
  m << S(0.0), -w[2], w[1], w[2], S(0.0), -w[0], -w[1], w[0], S(0.0);
  return m;
}

inline void require_same_dim(Dim a, Dim b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": dimension mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Planar closed forms.

/// sin(t)/t and (1 - cos(t))/t, the entries of the SE(2) left Jacobian.
template <typename S>
void se2_jacobian_coeffs(const S& theta, S& a, S& b) {
  using std::cos;
  using std::sin;
  if (std::abs(ad::value(theta)) < detail::kSmallAngle) {
    const S t2 = theta * theta;
    a = S(1.0) - t2 / S(6.0);
    b = theta / S(2.0) - theta * t2 / S(24.0);
  } else {
    const S h = sin(theta / S(2.0));
    a = sin(theta) / theta;
    b = S(2.0) * h * h / theta;
  }
}

// ---------------------------------------------------------------------------
// Spatial closed forms.

/// Coefficients of the SO(3) exponential / SE(3) left Jacobian:
/// A = sin(t)/t, B = (1 - cos t)/t^2, C = (t - sin t)/t^3.
template <typename S>
void so3_coeffs(const S& theta_sq, const S& theta, S& A, S& B, S& C) {
  using std::cos;
  using std::sin;
  if (std::abs(ad::value(theta)) < detail::kSmallAngle) {
    A = S(1.0) - theta_sq / S(6.0);
    B = S(0.5) - theta_sq / S(24.0);
    C = S(1.0) / S(6.0) - theta_sq / S(120.0);
  } else {
    const S s = sin(theta);
    const S h = sin(theta / S(2.0));
    A = s / theta;
    B = S(2.0) * h * h / theta_sq;
    // theta - sin(theta) cancels badly below ~1e-2
    if (std::abs(ad::value(theta)) < detail::kSeriesAngle) {
      C = S(1.0) / S(6.0) - theta_sq / S(120.0) + theta_sq * theta_sq / S(5040.0);
    } else {
      C = (theta - s) / (theta_sq * theta);
    }
  }
}

// ---------------------------------------------------------------------------

template <typename S>
BasicPose<S> exp_map(const BasicTwist<S>& xi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (xi.vector.size() != twist_size(xi.dim)) throw ConfigError("exp_map: twist length does not match dimension");
  BasicPose<S> T = BasicPose<S>::identity(xi.dim);
  if (xi.dim == Dim::planar) {
    const S theta = xi.vector[2];
    S a, b;
    se2_jacobian_coeffs(theta, a, b);
    const S c = cos(theta);
    const S s = sin(theta);
    T.rotation(0, 0) = c;
    T.rotation(0, 1) = -s;
    T.rotation(1, 0) = s;
    T.rotation(1, 1) = c;
    T.translation[0] = a * xi.vector[0] - b * xi.vector[1];
    T.translation[1] = b * xi.vector[0] + a * xi.vector[1];
    return T;
  }
  const Vec3<S> rho = xi.vector.template head<3>();
  const Vec3<S> omega = xi.vector.template tail<3>();
  const S theta_sq = omega.dot(omega);
  const S theta = sqrt(theta_sq);
  S A, B, C;
  so3_coeffs(theta_sq, theta, A, B, C);
  const Mat3<S> K = detail::skew(omega);
  const Mat3<S> K2 = K * K;
  T.rotation = Mat3<S>::Identity() + A * K + B * K2;
  const Mat3<S> V = Mat3<S>::Identity() + B * K + C * K2;
  T.translation = V * rho;
  return T;
}

template <typename S>
BasicTwist<S> log_map(const BasicPose<S>& T) {
  using std::atan2;
  using std::sqrt;
  if (T.dim == Dim::planar) {
    const S theta = atan2(T.rotation(1, 0), T.rotation(0, 0));
    if (std::numbers::pi - std::abs(ad::value(theta)) < detail::kPiMargin) {
      throw SingularityError("log_map: rotation angle at +-pi");
    }
    S a, b;
    se2_jacobian_coeffs(theta, a, b);
    // V = [[a, -b], [b, a]];  V^-1 = [[a, b], [-b, a]] / (a^2 + b^2)
    const S den = a * a + b * b;
    const S x = (a * T.translation[0] + b * T.translation[1]) / den;
    const S y = (-b * T.translation[0] + a * T.translation[1]) / den;
    return BasicTwist<S>::planar(x, y, theta);
  }
  const Mat3<S>& R = T.rotation;
  const Vec3<S> axis_sin(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const S sin_theta = S(0.5) * sqrt(axis_sin.dot(axis_sin));
  const S cos_theta = S(0.5) * (R(0, 0) + R(1, 1) + R(2, 2) - S(1.0));
  const S theta = atan2(sin_theta, cos_theta);
  if (std::numbers::pi - ad::value(theta) < 1e3 * detail::kPiMargin) {
    throw SingularityError("log_map: rotation angle at +-pi");
  }
  Vec3<S> omega;
  if (ad::value(theta) < detail::kSmallAngle) {
    omega = S(0.5) * (S(1.0) + theta * theta / S(6.0)) * axis_sin;
  } else {
    omega = (theta / (S(2.0) * sin_theta)) * axis_sin;
  }
  const S theta_sq = theta * theta;
  S A, B, C;
  so3_coeffs(theta_sq, theta, A, B, C);
  // V^-1 = I - K/2 + (1/t^2)(1 - A/(2B)) K^2
  S d;
  if (ad::value(theta) < detail::kSeriesAngle) {
    d = S(1.0) / S(12.0) + theta_sq / S(720.0) + theta_sq * theta_sq / S(30240.0);
  } else {
    d = (S(1.0) - A / (S(2.0) * B)) / theta_sq;
  }
  const Mat3<S> K = detail::skew(omega);
  const Mat3<S> V_inv = Mat3<S>::Identity() - S(0.5) * K + d * (K * K);
  Vec6<S> v;
  v.template head<3>() = V_inv * T.translation;
  v.template tail<3>() = omega;
  return BasicTwist<S>::spatial(v);
}

template <typename S>
BasicPose<S> compose(const BasicPose<S>& a, const BasicPose<S>& b) {
  detail::require_same_dim(a.dim, b.dim, "compose");
  BasicPose<S> out;
  out.dim = a.dim;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

template <typename S>
BasicPose<S> inverse(const BasicPose<S>& a) {
  BasicPose<S> out;
  out.dim = a.dim;
  out.rotation = a.rotation.transpose();
  out.translation = -(out.rotation * a.translation);
  return out;
}

template <typename S>
Vec3<S> transform_point(const BasicPose<S>& T, const Vec3<S>& p) {
  return T.rotation * p + T.translation;
}

/// Points are stored as 3-vectors; planar points carry z = 0.
inline std::vector<Point> transform_points(const Pose& T, std::span<const Point> pts) {
  std::vector<Point> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(T * p);
  return out;
}

/// Error of an estimate against ground truth: log(T_hat * T_gt^-1).
template <typename S>
BasicTwist<S> pose_error(const BasicPose<S>& T_hat, const BasicPose<S>& T_gt) {
  detail::require_same_dim(T_hat.dim, T_gt.dim, "pose_error");
  return log_map(compose(T_hat, inverse(T_gt)));
}

/// Throws DataError unless rotation is orthonormal with det +1 (tolerance 1e-9).
inline void validate(const Pose& T, double tol = 1e-9) {
  const Eigen::Matrix3d err = T.rotation * T.rotation.transpose() - Eigen::Matrix3d::Identity();
  if (!T.rotation.allFinite() || !T.translation.allFinite()) throw DataError("pose has non-finite entries");
  if (err.cwiseAbs().maxCoeff() > tol) throw DataError("pose rotation is not orthonormal");
  if (std::abs(T.rotation.determinant() - 1.0) > tol) throw DataError("pose rotation determinant is not +1");
  if (T.dim == Dim::planar) {
    if (T.rotation(2, 2) != 1.0 || T.rotation(0, 2) != 0.0 || T.rotation(1, 2) != 0.0 ||
        T.rotation(2, 0) != 0.0 || T.rotation(2, 1) != 0.0 || T.translation[2] != 0.0) {
      throw DataError("planar pose has out-of-plane components");
    }
  }
}

/// Heading angle of a planar pose.
inline double heading(const Pose& T) { return std::atan2(T.rotation(1, 0), T.rotation(0, 0)); }

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

}  // namespace dicp
